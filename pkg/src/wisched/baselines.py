"""Handcrafted stationary policies and a Monte Carlo evaluation harness.

Every policy is a callable (aoii, gain_levels, release) -> action vector and
can be fed straight to Environment.run_policy. Channels with a positive
release counter always get action 0; that is the only hard constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environment import Environment, RngStream, _expected_table
from .model import SystemConfig
from .whittle import WhittleTable

__all__ = [
    "DoNothing",
    "RandomFeasible",
    "AoiGreedy",
    "WhittleGreedy",
    "WhittleMyopic",
    "EvalResult",
    "monte_carlo_eval",
]


def _ranked_assign(scores: np.ndarray, free: np.ndarray, num_channels: int) -> np.ndarray:
    """Assign free channels, in channel order, to the devices with the
    highest scores (ties toward the lower device id). Scores are per monitor;
    device ids are 1-based. Channels beyond the ranking stay idle."""
    order = np.lexsort((np.arange(scores.size), -scores))
    action = np.zeros(num_channels, dtype=np.int64)
    k = 0
    for m in range(num_channels):
        if not free[m]:
            continue
        if k < order.size:
            action[m] = order[k] + 1
            k += 1
    return action


class DoNothing:
    """Idle on every channel, every slot."""

    def __call__(self, aoii, levels, release) -> np.ndarray:
        return np.zeros(release.size, dtype=np.int64)


class RandomFeasible:
    """Uniform over {0, 1, .., I+J} independently on every free channel."""

    def __init__(self, cfg: SystemConfig, seed: int) -> None:
        self.num_devices = cfg.num_devices
        self.rng = RngStream(seed, "baseline-random")

    def __call__(self, aoii, levels, release) -> np.ndarray:
        action = self.rng.integers(0, self.num_devices + 1, size=release.size)
        action[release > 0] = 0
        return action.astype(np.int64)


class AoiGreedy:
    """Serve the monitors with the largest weighted age on the free channels."""

    def __init__(self, cfg: SystemConfig) -> None:
        self.weights = cfg.monitor_weights()

    def __call__(self, aoii, levels, release) -> np.ndarray:
        return _ranked_assign(self.weights * aoii, release == 0, release.size)


class WhittleGreedy:
    """Serve the monitors with the largest Whittle index on the free channels."""

    def __init__(self, table: WhittleTable) -> None:
        self.matrix = table.index_matrix()

    def __call__(self, aoii, levels, release) -> np.ndarray:
        width = self.matrix.shape[1]
        scores = self.matrix[np.arange(aoii.size), np.minimum(aoii, width - 1)]
        return _ranked_assign(scores, release == 0, release.size)


class WhittleMyopic:
    """Reference heuristic mixing both traffic kinds without learning.

    Free channels are visited in channel order. Each one compares the best
    unassigned monitor's Whittle index against the best traditional device's
    amortized expected value on this channel at its current gain level
    (weight times the expected total rate over the reservation, divided by
    the duration). The larger side wins the channel.
    """

    def __init__(self, cfg: SystemConfig, table: WhittleTable) -> None:
        self.matrix = table.index_matrix()
        self.num_monitors = cfg.num_monitors
        self.durations = cfg.durations().astype(float)
        traffic_w = cfg.traffic_weights()
        ubar = _expected_table(cfg)  # (J, M, Lmax) expected total rate
        if ubar.size:
            self.per_slot_value = traffic_w[:, None, None] * ubar / self.durations[:, None, None]
        else:
            self.per_slot_value = ubar

    def __call__(self, aoii, levels, release) -> np.ndarray:
        width = self.matrix.shape[1]
        scores = self.matrix[np.arange(aoii.size), np.minimum(aoii, width - 1)]
        order = np.lexsort((np.arange(scores.size), -scores))
        action = np.zeros(release.size, dtype=np.int64)
        k = 0
        for m in range(release.size):
            if release[m] > 0:
                continue
            if self.per_slot_value.size:
                vals = self.per_slot_value[np.arange(levels.shape[0]), m, levels[:, m]]
                best_j = int(np.argmax(vals))
                best_traffic = float(vals[best_j])
            else:
                best_j, best_traffic = -1, -np.inf
            monitor_score = float(scores[order[k]]) if k < order.size else -np.inf
            if best_traffic >= monitor_score:
                action[m] = self.num_monitors + 1 + best_j
            else:
                action[m] = order[k] + 1
                k += 1
        return action


@dataclass(frozen=True)
class EvalResult:
    reward: float
    reward_se: float
    accuracy: float
    accuracy_se: float
    throughput: float
    throughput_se: float
    episodes: int
    horizon: int


def monte_carlo_eval(
    cfg: SystemConfig, policy, episodes: int, horizon: int, seed: int
) -> EvalResult:
    """Episode-mean statistics with standard errors across episodes."""
    env = Environment(cfg, seed)
    rewards = np.empty(episodes)
    accs = np.empty(episodes)
    tputs = np.empty(episodes)
    for e in range(episodes):
        env.reset()
        out = env.run_policy(policy, horizon)
        rewards[e] = out["reward"].mean()
        accs[e] = out["accuracy"].mean()
        tputs[e] = out["throughput"].mean()

    def se(x: np.ndarray) -> float:
        if episodes < 2:
            return 0.0
        return float(x.std(ddof=1) / np.sqrt(episodes))

    return EvalResult(
        reward=float(rewards.mean()),
        reward_se=se(rewards),
        accuracy=float(accs.mean()),
        accuracy_se=se(accs),
        throughput=float(tputs.mean()),
        throughput_se=se(tputs),
        episodes=episodes,
        horizon=horizon,
    )
