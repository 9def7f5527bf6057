"""Value objects shared by every other module.

Conventions used throughout the package:

* Devices are numbered 1..I+J. Devices 1..I are monitoring devices whose cost is
  the age of incorrect information (AoII) of the controller's prediction of their
  source process. Devices I+1..I+J are traditional devices that earn throughput.
* A channel action ``a_m`` is an integer in ``{0, .., I+J}``: 0 leaves channel m
  idle, 1..I serves that monitor for one slot, I+j starts a traditional
  transmission that occupies the channel for ``T_j`` consecutive slots.
* Gains are stored as *level indices* into each chain's level table, not raw
  values; raw values enter only through the throughput formula.

All types here are immutable value objects: dataclasses are frozen and numpy
fields are defensively copied and marked read-only on construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "ProcessModel",
    "GainChain",
    "TrafficModel",
    "SystemConfig",
    "SystemState",
    "AgentObservation",
    "ValidationReport",
    "validate_config",
    "validate_action",
    "project_observation",
    "feasible_mask",
]


def _frozen_array(obj, name: str, value, dtype) -> None:
    arr = np.array(value, dtype=dtype)
    arr.flags.writeable = False
    object.__setattr__(obj, name, arr)


@dataclass(frozen=True)
class ProcessModel:
    """One monitored source process.

    ``self_prob`` is p: the chance the controller's prediction is correct next
    slot given it is correct now, and also the chance a transmission in the
    current slot resynchronizes the prediction. ``flip_back_prob`` is q: the
    chance a wrong prediction becomes correct by itself, which for a uniform
    jump over the remaining ``num_states - 1`` symbols is (1-p)/(num_states-1).
    """

    num_states: int
    self_prob: float
    weight: float = 1.0

    @property
    def flip_back_prob(self) -> float:
        return (1.0 - self.self_prob) / (self.num_states - 1)


@dataclass(frozen=True)
class GainChain:
    """Finite stationary Markov chain over channel-gain levels for one
    (traditional device, channel) pair."""

    levels: tuple[float, ...]
    transition: tuple[tuple[float, ...], ...]

    def __init__(self, levels: Sequence[float], transition) -> None:
        object.__setattr__(self, "levels", tuple(float(v) for v in levels))
        object.__setattr__(
            self, "transition", tuple(tuple(float(p) for p in row) for row in transition)
        )

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def levels_array(self) -> np.ndarray:
        return np.array(self.levels, dtype=float)

    def transition_array(self) -> np.ndarray:
        return np.array(self.transition, dtype=float)

    @staticmethod
    def random_walk(levels: Sequence[float], stay_prob: float) -> "GainChain":
        """Birth-death chain: stay with ``stay_prob``, otherwise step to a
        neighbor (half the remaining mass each way); at the two ends the mass
        that would leave the ladder stays put instead."""
        n = len(levels)
        if n == 1:
            return GainChain(levels, ((1.0,),))
        move = (1.0 - stay_prob) / 2.0
        rows = []
        for i in range(n):
            row = [0.0] * n
            row[i] = stay_prob
            if i > 0:
                row[i - 1] = move
            else:
                row[i] += move
            if i < n - 1:
                row[i + 1] = move
            else:
                row[i] += move
            rows.append(row)
        return GainChain(levels, rows)


@dataclass(frozen=True)
class TrafficModel:
    """One traditional device: each granted transmission occupies the channel
    for ``duration`` consecutive slots and earns ``weight`` per unit rate."""

    duration: int
    weight: float = 1.0


@dataclass(frozen=True)
class SystemConfig:
    """Static description of one system instance.

    ``chains[j][m]`` is the gain chain of traditional device j (0-based) on
    channel m (0-based). ``snr`` is the transmit-power-to-noise ratio P/N and
    ``log_base`` the base of the rate logarithm, so a gain value g on channel m
    delivers ``bandwidths[m] * log(1 + g * snr) / log(log_base)`` per slot.
    """

    monitors: tuple[ProcessModel, ...]
    traffics: tuple[TrafficModel, ...]
    bandwidths: tuple[float, ...]
    chains: tuple[tuple[GainChain, ...], ...]
    snr: float = 1.0
    log_base: float = 2.0
    discount: float = 0.9

    def __init__(
        self,
        monitors: Sequence[ProcessModel],
        traffics: Sequence[TrafficModel],
        bandwidths: Sequence[float],
        chains: Sequence[Sequence[GainChain]],
        snr: float = 1.0,
        log_base: float = 2.0,
        discount: float = 0.9,
    ) -> None:
        object.__setattr__(self, "monitors", tuple(monitors))
        object.__setattr__(self, "traffics", tuple(traffics))
        object.__setattr__(self, "bandwidths", tuple(float(b) for b in bandwidths))
        object.__setattr__(self, "chains", tuple(tuple(row) for row in chains))
        object.__setattr__(self, "snr", float(snr))
        object.__setattr__(self, "log_base", float(log_base))
        object.__setattr__(self, "discount", float(discount))

    @property
    def num_monitors(self) -> int:
        return len(self.monitors)

    @property
    def num_traffics(self) -> int:
        return len(self.traffics)

    @property
    def num_channels(self) -> int:
        return len(self.bandwidths)

    @property
    def num_devices(self) -> int:
        return self.num_monitors + self.num_traffics

    @property
    def max_duration(self) -> int:
        return max((t.duration for t in self.traffics), default=1)

    def monitor_weights(self) -> np.ndarray:
        return np.array([m.weight for m in self.monitors], dtype=float)

    def traffic_weights(self) -> np.ndarray:
        return np.array([t.weight for t in self.traffics], dtype=float)

    def durations(self) -> np.ndarray:
        return np.array([t.duration for t in self.traffics], dtype=np.int64)

    def max_gain_value(self) -> float:
        top = 0.0
        for row in self.chains:
            for chain in row:
                top = max(top, max(chain.levels))
        return top


@dataclass(frozen=True)
class SystemState:
    """Joint state at the start of a slot: AoII vector, gain level indices, and
    per-channel remaining reservation (release) times."""

    aoii: np.ndarray
    gain_levels: np.ndarray
    release: np.ndarray

    def __init__(self, aoii, gain_levels, release) -> None:
        _frozen_array(self, "aoii", aoii, np.int64)
        _frozen_array(self, "gain_levels", gain_levels, np.int64)
        _frozen_array(self, "release", release, np.int64)
        if self.aoii.ndim != 1 or self.gain_levels.ndim != 2 or self.release.ndim != 1:
            raise ValueError("state fields have wrong rank")
        if self.gain_levels.shape[1] != self.release.shape[0]:
            raise ValueError("gain_levels columns must match release length")
        if (self.aoii < 0).any() or (self.release < 0).any() or (self.gain_levels < 0).any():
            raise ValueError("state fields must be non-negative")

    def flat(self) -> np.ndarray:
        """Flattened copy (AoII, gains row-major, release) for critic input."""
        return np.concatenate(
            [self.aoii.astype(float), self.gain_levels.astype(float).ravel(), self.release.astype(float)]
        )


@dataclass(frozen=True)
class AgentObservation:
    """What the channel-m agent sees: full AoII vector, its own gain column,
    and its own release counter."""

    channel: int
    aoii: np.ndarray
    gain_levels: np.ndarray
    release: int

    def __init__(self, channel: int, aoii, gain_levels, release: int) -> None:
        object.__setattr__(self, "channel", int(channel))
        _frozen_array(self, "aoii", aoii, np.int64)
        _frozen_array(self, "gain_levels", gain_levels, np.int64)
        object.__setattr__(self, "release", int(release))


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validate_config: empty ``issues`` means the config is usable."""

    issues: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues


def validate_config(cfg: SystemConfig) -> ValidationReport:
    """Structural and numeric checks; returns all problems found, raises nothing."""
    bad: list[str] = []
    if cfg.num_monitors < 1:
        bad.append("monitors: at least one monitoring device is required")
    if cfg.num_channels < 1:
        bad.append("bandwidths: at least one channel is required")
    for i, pm in enumerate(cfg.monitors, start=1):
        if pm.num_states < 2:
            bad.append(f"monitors[{i}].num_states: must be >= 2, got {pm.num_states}")
        if not 0.0 < pm.self_prob < 1.0:
            bad.append(f"monitors[{i}].self_prob: must lie in (0, 1), got {pm.self_prob}")
        if pm.weight <= 0.0:
            bad.append(f"monitors[{i}].weight: must be positive, got {pm.weight}")
    for j, tm in enumerate(cfg.traffics, start=1):
        if tm.duration < 1:
            bad.append(f"traffics[{j}].duration: must be >= 1, got {tm.duration}")
        if tm.weight < 0.0:
            bad.append(f"traffics[{j}].weight: must be non-negative, got {tm.weight}")
    for m, w in enumerate(cfg.bandwidths, start=1):
        if w <= 0.0:
            bad.append(f"bandwidths[{m}]: must be positive, got {w}")
    if len(cfg.chains) != cfg.num_traffics:
        bad.append(
            f"chains: need one row per traditional device, got {len(cfg.chains)} rows for {cfg.num_traffics} devices"
        )
    for j, row in enumerate(cfg.chains, start=1):
        if len(row) != cfg.num_channels:
            bad.append(f"chains[{j}]: need one chain per channel, got {len(row)}")
            continue
        for m, chain in enumerate(row, start=1):
            tag = f"chains[{j}][{m}]"
            levels = chain.levels_array()
            if levels.size == 0:
                bad.append(f"{tag}.levels: empty")
                continue
            if (levels < 0).any():
                bad.append(f"{tag}.levels: must be non-negative")
            if levels.size > 1 and not (np.diff(levels) > 0).all():
                bad.append(f"{tag}.levels: must be strictly increasing")
            trans = chain.transition_array()
            if trans.shape != (levels.size, levels.size):
                bad.append(f"{tag}.transition: must be {levels.size}x{levels.size}, got {trans.shape}")
                continue
            if (trans < 0).any():
                bad.append(f"{tag}.transition: negative entry")
            if not np.allclose(trans.sum(axis=1), 1.0, atol=1e-9):
                bad.append(f"{tag}.transition: rows must sum to 1")
    if cfg.snr <= 0.0:
        bad.append(f"snr: must be positive, got {cfg.snr}")
    if cfg.log_base <= 1.0:
        bad.append(f"log_base: must exceed 1, got {cfg.log_base}")
    if not 0.0 < cfg.discount < 1.0:
        bad.append(f"discount: must lie in (0, 1), got {cfg.discount}")
    return ValidationReport(tuple(bad))


def validate_action(action: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Coerce to int64 and bounds-check one channel-action vector."""
    act = np.asarray(action, dtype=np.int64)
    if act.shape != (cfg.num_channels,):
        raise ValueError(f"action must have shape ({cfg.num_channels},), got {act.shape}")
    if (act < 0).any() or (act > cfg.num_devices).any():
        raise ValueError("action entries must lie in {0, .., I+J}")
    return act


def project_observation(state: SystemState, channel: int) -> AgentObservation:
    """Restrict the joint state to what the agent of one channel observes."""
    return AgentObservation(
        channel=channel,
        aoii=state.aoii,
        gain_levels=state.gain_levels[:, channel],
        release=int(state.release[channel]),
    )


def feasible_mask(state: SystemState, cfg: SystemConfig) -> np.ndarray:
    """Boolean (M, I+J+1) matrix: entry [m, a] is True iff action a is feasible
    on channel m; a reserved channel admits only a = 0."""
    m_count = cfg.num_channels
    mask = np.ones((m_count, cfg.num_devices + 1), dtype=bool)
    busy = state.release > 0
    mask[busy, :] = False
    mask[busy, 0] = True
    return mask
