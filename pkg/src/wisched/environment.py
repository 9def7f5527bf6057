"""Slotted simulator for the joint monitoring/throughput scheduling system.

One step: the scheduler picks a device (or nothing) for every free channel,
rewards are scored against the pre-transition state, then the three state
components advance independently: prediction correctness per monitor, one
Markov gain step per (traditional device, channel) pair, and the per-channel
reservation countdowns.

Two reward signals are produced every slot:

* ``reward`` (shaped): the weighted AoII penalty plus, for every traditional
  transmission *started* this slot, the expected total rate it will deliver
  over its whole reservation window given today's gain. This is the signal
  the trainer optimizes.
* ``raw_reward`` (diagnostic): the same penalty plus the rate actually flowing
  this slot on starting and still-reserved channels. Its long-run average
  matches the shaped signal's under any stationary policy, which a test pins.

Randomness is split into named substreams so that process noise and gain noise
are independent and a run is reproducible from (seed, stream, call sequence).
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConstraintViolationError
from .model import SystemConfig, SystemState, validate_action, validate_config

__all__ = [
    "RngStream",
    "StepResult",
    "Environment",
    "step_aoii",
    "step_gains",
    "step_release",
    "throughput_table",
    "expected_throughput",
    "dump_trajectory",
]


class RngStream:
    """Named substream of a master seed: independent of sibling streams and
    reproducible from (seed, stream) alone."""

    def __init__(self, seed: int, stream: str) -> None:
        self.seed = int(seed)
        self.stream = str(stream)
        digest = hashlib.sha256(self.stream.encode("utf-8")).digest()
        self.gen = np.random.default_rng(
            np.random.SeedSequence([self.seed, int.from_bytes(digest[:8], "big")])
        )

    def random(self, size=None):
        return self.gen.random(size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def choice(self, n, p=None):
        return int(self.gen.choice(n, p=p))


@dataclass(frozen=True)
class StepResult:
    """Outcome of one slot: post-transition state plus the slot's scores."""

    state: SystemState
    reward: float
    raw_reward: float
    throughput: float


def step_aoii(
    aoii: np.ndarray,
    transmitted: np.ndarray,
    p_vec: np.ndarray,
    q_vec: np.ndarray,
    draws: np.ndarray,
) -> np.ndarray:
    """Advance every monitor's AoII given which were served this slot.

    A served monitor resynchronizes with probability p. An idle monitor whose
    prediction is correct stays correct with probability p; one whose
    prediction is wrong self-corrects with probability q. Serving a monitor at
    age zero is allowed and behaves exactly like idling (both reset with p).
    Failure always means the age climbs by one.
    """
    reset_prob = np.where(transmitted | (aoii == 0), p_vec, q_vec)
    return np.where(draws < reset_prob, 0, aoii + 1).astype(np.int64)


def step_gains(levels: np.ndarray, cum_rows: np.ndarray, draws: np.ndarray) -> np.ndarray:
    """One Markov step for every (traditional device, channel) gain chain.

    ``cum_rows[j, m]`` holds the cumulative transition rows of chain (j, m),
    padded on both axes to the largest level count. The next level index is
    the number of cumulative entries strictly below the uniform draw.
    """
    j_count, m_count = levels.shape
    if j_count == 0:
        return levels.copy()
    flat = levels.ravel()
    rows = cum_rows.reshape(j_count * m_count, cum_rows.shape[2], -1)[
        np.arange(j_count * m_count), flat
    ]
    nxt = (rows < draws.reshape(-1, 1)).sum(axis=1)
    return nxt.reshape(j_count, m_count).astype(np.int64)


def step_release(
    release: np.ndarray, action: np.ndarray, durations: np.ndarray, num_monitors: int
) -> np.ndarray:
    """Advance the per-channel reservation countdowns: busy channels count
    down by one; a channel that starts a traditional transmission this slot is
    reserved for the remaining duration-1 slots; anything else leaves the
    channel free. Assigning a busy channel is infeasible."""
    if ((release > 0) & (action != 0)).any():
        raise ConstraintViolationError("busy channel assigned a device")
    nxt = np.where(release > 0, release - 1, 0)
    starts = action > num_monitors
    if starts.any():
        nxt[starts] = durations[action[starts] - num_monitors - 1] - 1
    return nxt.astype(np.int64)


def throughput_table(cfg: SystemConfig) -> np.ndarray:
    """(J, M, L_max) per-slot rates: bandwidth * log(1 + gain * snr), padded by
    repeating each chain's top level."""
    j_count, m_count = cfg.num_traffics, cfg.num_channels
    l_max = max((c.num_levels for row in cfg.chains for c in row), default=1)
    table = np.zeros((j_count, m_count, l_max))
    log_div = np.log(cfg.log_base)
    for j in range(j_count):
        for m in range(m_count):
            chain = cfg.chains[j][m]
            u = cfg.bandwidths[m] * np.log1p(chain.levels_array() * cfg.snr) / log_div
            table[j, m, : u.size] = u
            table[j, m, u.size :] = u[-1]
    return table


def expected_throughput(
    chain, duration: int, bandwidth: float, snr: float, log_base: float
) -> np.ndarray:
    """Expected total rate of a transmission over its whole window, per
    starting level: sum over the window of the k-step-ahead expected rate."""
    u = bandwidth * np.log1p(chain.levels_array() * snr) / np.log(log_base)
    trans = chain.transition_array()
    acc = u.copy()
    step = u.copy()
    for _ in range(duration - 1):
        step = trans @ step
        acc += step
    return acc


def _expected_table(cfg: SystemConfig) -> np.ndarray:
    j_count, m_count = cfg.num_traffics, cfg.num_channels
    l_max = max((c.num_levels for row in cfg.chains for c in row), default=1)
    table = np.zeros((j_count, m_count, l_max))
    for j in range(j_count):
        for m in range(m_count):
            ubar = expected_throughput(
                cfg.chains[j][m], cfg.traffics[j].duration, cfg.bandwidths[m], cfg.snr, cfg.log_base
            )
            table[j, m, : ubar.size] = ubar
            table[j, m, ubar.size :] = ubar[-1]
    return table


def _cum_rows(cfg: SystemConfig) -> np.ndarray:
    j_count, m_count = cfg.num_traffics, cfg.num_channels
    l_max = max((c.num_levels for row in cfg.chains for c in row), default=1)
    cum = np.ones((j_count, m_count, l_max, l_max))
    for j in range(j_count):
        for m in range(m_count):
            rows = np.cumsum(cfg.chains[j][m].transition_array(), axis=1)
            n = rows.shape[0]
            cum[j, m, :n, :n] = rows
            cum[j, m, :n, n:] = 1.0
            # padded levels are unreachable; make them self-absorbing anyway
            for l in range(n, l_max):
                cum[j, m, l, :l] = 0.0
    return cum


class Environment:
    """Mutable single-threaded simulator for one system instance.

    The per-(device, channel) reservation matrix is tracked internally so the
    diagnostic raw reward can attribute in-flight rate to the right device;
    the public per-channel release vector is its column maximum. The violation
    counter accumulates over the instance lifetime (reset() does not clear it).
    """

    def __init__(self, cfg: SystemConfig, seed: int) -> None:
        report = validate_config(cfg)
        if not report.ok:
            raise ConfigError("invalid config: " + "; ".join(report.issues))
        self.cfg = cfg
        self.seed = int(seed)
        self.violations = 0

        self._p = np.array([pm.self_prob for pm in cfg.monitors])
        self._q = np.array([pm.flip_back_prob for pm in cfg.monitors])
        self._w_mon = cfg.monitor_weights()
        self._w_traf = cfg.traffic_weights()
        self._durations = cfg.durations()
        self._num_levels = np.array(
            [[cfg.chains[j][m].num_levels for m in range(cfg.num_channels)] for j in range(cfg.num_traffics)],
            dtype=np.int64,
        ).reshape(cfg.num_traffics, cfg.num_channels)
        self._u = throughput_table(cfg)
        self._ubar = _expected_table(cfg)
        self._cum = _cum_rows(cfg)

        self._rng_process = RngStream(seed, "process")
        self._rng_gain = RngStream(seed, "gain")

        i, j, m = cfg.num_monitors, cfg.num_traffics, cfg.num_channels
        self._aoii = np.zeros(i, dtype=np.int64)
        self._levels = np.zeros((j, m), dtype=np.int64)
        self._resv = np.zeros((j, m), dtype=np.int64)
        self._jm_arange = np.arange(j * m)

    # -- state access -----------------------------------------------------

    def release(self) -> np.ndarray:
        if self.cfg.num_traffics == 0:
            return np.zeros(self.cfg.num_channels, dtype=np.int64)
        return self._resv.max(axis=0)

    def state(self) -> SystemState:
        return SystemState(aoii=self._aoii, gain_levels=self._levels, release=self.release())

    def reset(self, gain_levels: np.ndarray | None = None) -> SystemState:
        """Start an episode: ages and reservations zero, gains drawn uniformly
        over each chain's levels (or as given)."""
        self._aoii[:] = 0
        self._resv[:] = 0
        if gain_levels is not None:
            lv = np.asarray(gain_levels, dtype=np.int64)
            if lv.shape != self._levels.shape or (lv < 0).any() or (lv >= self._num_levels).any():
                raise ValueError("gain_levels out of range for the configured chains")
            self._levels[:] = lv
        elif self._levels.size:
            draws = self._rng_gain.random(self._levels.shape)
            self._levels[:] = (draws * self._num_levels).astype(np.int64)
        return self.state()

    # -- dynamics ---------------------------------------------------------

    def _score(self, act: np.ndarray) -> tuple[float, float, float, np.ndarray]:
        """Rewards, delivered rate, and the start mask for the current slot."""
        j_count = self.cfg.num_traffics
        penalty = float(self._w_mon @ self._aoii)
        starts = np.zeros(self._resv.shape, dtype=bool)
        traditional = act > self.cfg.num_monitors
        if traditional.any():
            starts[act[traditional] - self.cfg.num_monitors - 1, np.nonzero(traditional)[0]] = True
        if j_count:
            gathered_u = np.take_along_axis(self._u, self._levels[:, :, None], axis=2)[:, :, 0]
            gathered_ubar = np.take_along_axis(self._ubar, self._levels[:, :, None], axis=2)[:, :, 0]
            active = starts | (self._resv > 0)
            shaped = -penalty + float((self._w_traf[:, None] * gathered_ubar * starts).sum())
            raw = -penalty + float((self._w_traf[:, None] * gathered_u * active).sum())
            tput = float((gathered_u * active).sum())
        else:
            shaped = raw = -penalty
            tput = 0.0
        return shaped, raw, tput, starts

    def _advance(self, act: np.ndarray, starts: np.ndarray) -> None:
        i_count = self.cfg.num_monitors
        transmitted = np.zeros(i_count, dtype=bool)
        served = act[(act >= 1) & (act <= i_count)]
        if served.size:
            transmitted[served - 1] = True
        self._aoii[:] = step_aoii(
            self._aoii, transmitted, self._p, self._q, self._rng_process.random(i_count)
        )
        if self._levels.size:
            self._levels[:] = step_gains(
                self._levels, self._cum, self._rng_gain.random(self._levels.shape)
            )
        np.subtract(self._resv, 1, out=self._resv, where=self._resv > 0)
        if starts.any():
            js = np.nonzero(starts)[0]
            self._resv[starts] = self._durations[js] - 1

    def step(self, action) -> StepResult:
        """Apply one slot. Raises ConstraintViolationError (and counts it) if
        a busy channel is assigned; the state is left untouched in that case."""
        act = validate_action(action, self.cfg)
        if ((self.release() > 0) & (act != 0)).any():
            self.violations += 1
            raise ConstraintViolationError("busy channel assigned a device")
        shaped, raw, tput, starts = self._score(act)
        self._advance(act, starts)
        return StepResult(state=self.state(), reward=shaped, raw_reward=raw, throughput=tput)

    def run_policy(self, policy, steps: int, dump_path=None) -> dict:
        """Roll a stationary policy for ``steps`` slots and collect per-slot
        series. ``policy(aoii, gain_levels, release)`` must return a channel
        action vector and treat its arguments as read-only.

        This is a tuned loop (randomness pre-drawn in blocks, reservations
        tracked as a small dict) that consumes the random streams in exactly
        the same order as step(), so a run_policy trajectory is bit-identical
        to the equivalent sequence of step() calls.
        """
        cfg = self.cfg
        i_count, j_count, m_count = cfg.num_monitors, cfg.num_traffics, cfg.num_channels
        jm = j_count * m_count
        num_devices = cfg.num_devices
        shaped = np.empty(steps)
        raw = np.empty(steps)
        tput = np.empty(steps)
        acc = np.empty(steps)
        rows = [] if dump_path is not None else None

        aoii = self._aoii
        levels = self._levels
        levels_flat = levels.ravel()
        resv = self._resv
        p_vec, q_vec = self._p, self._q
        w_mon = self._w_mon
        w_traf = self._w_traf.tolist()
        durations = self._durations.tolist()
        lmax = self._u.shape[2] if jm else 0
        u_flat = self._u.ravel()
        ubar_flat = self._ubar.ravel()
        cum3 = self._cum.reshape(jm, lmax, lmax) if jm else None
        jm_idx = self._jm_arange
        transmitted = np.zeros(i_count, dtype=bool)
        rel = [int(v) for v in self.release()]
        active: dict[tuple[int, int], int] = {}
        for j in range(j_count):
            for m in range(m_count):
                if resv[j, m] > 0:
                    active[(j, m)] = int(resv[j, m])
        rel_arr = np.asarray(rel, dtype=np.int64)

        block = 8192
        t = 0
        while t < steps:
            n = min(block, steps - t)
            proc_draws = self._rng_process.random((n, i_count))
            gain_draws = self._rng_gain.random((n, j_count, m_count)) if jm else None
            for k in range(n):
                act_arr = np.asarray(policy(aoii, levels, rel_arr))
                if act_arr.shape != (m_count,):
                    raise ValueError(
                        f"action must have shape ({m_count},), got {act_arr.shape}"
                    )
                act = act_arr.tolist()
                transmitted[:] = False
                start_pairs: list[tuple[int, int, int]] = []
                shaped_gain = 0.0
                for m in range(m_count):
                    a = int(act[m])
                    if a < 0 or a > num_devices:
                        raise ValueError("action entries must lie in {0, .., I+J}")
                    if rel[m] > 0:
                        if a != 0:
                            self.violations += 1
                            raise ConstraintViolationError("busy channel assigned a device")
                        continue
                    if a == 0:
                        continue
                    if a <= i_count:
                        transmitted[a - 1] = True
                    else:
                        j = a - i_count - 1
                        fi = j * m_count + m
                        lv = int(levels_flat[fi])
                        shaped_gain += w_traf[j] * float(ubar_flat[fi * lmax + lv])
                        start_pairs.append((j, m, fi))
                penalty = float(w_mon @ aoii)
                raw_gain = 0.0
                tp = 0.0
                if active:
                    for (j, m) in active:
                        fi = j * m_count + m
                        uv = float(u_flat[fi * lmax + int(levels_flat[fi])])
                        raw_gain += w_traf[j] * uv
                        tp += uv
                for (j, m, fi) in start_pairs:
                    uv = float(u_flat[fi * lmax + int(levels_flat[fi])])
                    raw_gain += w_traf[j] * uv
                    tp += uv
                idx = t + k
                shaped[idx] = shaped_gain - penalty
                raw[idx] = raw_gain - penalty
                tput[idx] = tp
                acc[idx] = (i_count - np.count_nonzero(aoii)) / i_count
                if rows is not None:
                    rows.append([idx, *aoii.tolist(), *rel, *act, shaped[idx], raw[idx]])

                # advance: monitors, gains, reservations
                reset_prob = np.where(transmitted | (aoii == 0), p_vec, q_vec)
                resets = proc_draws[k] < reset_prob
                np.add(aoii, 1, out=aoii)
                aoii[resets] = 0
                if jm:
                    cum_rows = cum3[jm_idx, levels_flat]
                    np.copyto(
                        levels_flat,
                        (cum_rows < gain_draws[k].reshape(-1, 1)).sum(axis=1),
                    )
                if active:
                    for key in list(active):
                        remaining = active[key] - 1
                        resv[key] = remaining
                        rel[key[1]] = remaining
                        rel_arr[key[1]] = remaining
                        if remaining == 0:
                            del active[key]
                        else:
                            active[key] = remaining
                for (j, m, _fi) in start_pairs:
                    d = durations[j] - 1
                    resv[j, m] = d
                    if d > 0:
                        active[(j, m)] = d
                        rel[m] = d
                        rel_arr[m] = d
            t += n
        if rows is not None:
            dump_trajectory(dump_path, rows, self.cfg)
        return {"reward": shaped, "raw_reward": raw, "throughput": tput, "accuracy": acc}


def dump_trajectory(path, rows, cfg: SystemConfig) -> None:
    """CSV dump of a rollout: slot, ages, release counters, actions, both
    reward signals."""
    header = (
        ["t"]
        + [f"x_{i}" for i in range(1, cfg.num_monitors + 1)]
        + [f"b_{m}" for m in range(1, cfg.num_channels + 1)]
        + [f"a_{m}" for m in range(1, cfg.num_channels + 1)]
        + ["reward_shaped", "reward_raw"]
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
