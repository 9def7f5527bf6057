"""Exact dynamic-programming oracles on desk-scale truncated MDPs.

Two builders are provided: the single-monitor transmit/idle sub-problem (ages
capped with a self-loop at the cap), and the full joint system for instances
small enough to enumerate. Both produce the same dense structure, so one
value-iteration and one relative-value-iteration routine solve either. These
exist to cross-check the analytic threshold/index machinery and the trained
policies, never to run at deployment scale.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, StateSpaceError
from .model import SystemConfig
from .whittle import SubProblem
from .environment import _expected_table

__all__ = [
    "TruncatedMdp",
    "JointSpace",
    "value_iteration",
    "relative_value_iteration",
    "subproblem_mdp",
    "joint_mdp",
]

MAX_CELLS = 50_000_000


@dataclass(frozen=True)
class TruncatedMdp:
    """Dense enumerated MDP: ``probs[s, a, k]`` and ``nexts[s, a, k]`` list the
    outcome distribution of action a in state s (zero-prob entries padded),
    ``rewards[s, a]`` the per-step reward, ``feasible[s, a]`` the admissible
    actions (every state keeps at least one)."""

    probs: np.ndarray
    nexts: np.ndarray
    rewards: np.ndarray
    feasible: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        s, a, k = self.probs.shape
        if s * a * k > MAX_CELLS:
            raise StateSpaceError(f"{s} states x {a} actions x {k} outcomes exceeds {MAX_CELLS} cells")
        if not self.feasible.any(axis=1).all():
            raise ValueError("every state needs at least one feasible action")
        sums = self.probs.sum(axis=2)
        if not np.allclose(sums[self.feasible], 1.0, atol=1e-9):
            raise ValueError("outcome probabilities of a feasible action must sum to 1")

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]


def _q_values(mdp: TruncatedMdp, h: np.ndarray) -> np.ndarray:
    cont = (mdp.probs * h[mdp.nexts]).sum(axis=2)
    q = mdp.rewards + cont
    return np.where(mdp.feasible, q, -np.inf)


def value_iteration(
    mdp: TruncatedMdp, discount: float, tol: float = 1e-10, max_iter: int = 1_000_000
) -> tuple[np.ndarray, np.ndarray]:
    """Discounted optimal values and a greedy policy (ties -> lowest action).
    Stops when the sup-norm Bellman residual drops to ``tol``."""
    if not 0.0 < discount < 1.0:
        raise ValueError("discount must lie in (0, 1)")
    v = np.zeros(mdp.num_states)
    for _ in range(max_iter):
        q = mdp.rewards + discount * (mdp.probs * v[mdp.nexts]).sum(axis=2)
        q = np.where(mdp.feasible, q, -np.inf)
        v_next = q.max(axis=1)
        if np.abs(v_next - v).max() <= tol:
            return v_next, q.argmax(axis=1)
        v = v_next
    raise ConvergenceError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


def relative_value_iteration(
    mdp: TruncatedMdp,
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
    policy: np.ndarray | None = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Average-reward solve: returns (gain, bias, policy).

    With ``policy=None`` the Bellman operator maximizes over feasible actions
    (ties -> lowest action); with a fixed policy it evaluates that policy's
    gain and bias. Stops when the span of the operator's increment contracts
    to ``tol``; the gain estimate is the midpoint of the increment range.
    """
    if policy is not None:
        policy = np.asarray(policy, dtype=np.int64)
        if not mdp.feasible[np.arange(mdp.num_states), policy].all():
            raise ValueError("fixed policy picks an infeasible action")
    h = np.zeros(mdp.num_states)
    rows = np.arange(mdp.num_states)
    for _ in range(max_iter):
        q = _q_values(mdp, h)
        th = q[rows, policy] if policy is not None else q.max(axis=1)
        inc = th - h
        span = inc.max() - inc.min()
        if span <= tol:
            gain = 0.5 * (inc.max() + inc.min())
            greedy = policy if policy is not None else q.argmax(axis=1)
            return float(gain), th - th[0], np.asarray(greedy, dtype=np.int64)
        h = th - th[0]
    raise ConvergenceError(f"relative value iteration did not contract to span {tol} in {max_iter} sweeps")


def subproblem_mdp(sp: SubProblem, c: float, x_max: int) -> TruncatedMdp:
    """Single-monitor transmit/idle MDP with ages capped at x_max (climbing at
    the cap self-loops). Reward is -(w*x + a*c); action 0 idles, 1 transmits."""
    if x_max < 1:
        raise ValueError("x_max must be >= 1")
    s_count = x_max + 1
    probs = np.zeros((s_count, 2, 2))
    nexts = np.zeros((s_count, 2, 2), dtype=np.int64)
    xs = np.arange(s_count)
    climb = np.minimum(xs + 1, x_max)
    # outcome 0: reset to age 0; outcome 1: climb
    nexts[:, :, 1] = climb[:, None]
    probs[:, 0, 0] = np.where(xs == 0, sp.p, sp.q)
    probs[:, 1, 0] = sp.p
    probs[:, :, 1] = 1.0 - probs[:, :, 0]
    rewards = np.stack([-sp.w * xs, -(sp.w * xs + c)], axis=1)
    feasible = np.ones((s_count, 2), dtype=bool)
    labels = tuple(str(x) for x in xs)
    return TruncatedMdp(probs=probs, nexts=nexts, rewards=rewards, feasible=feasible, labels=labels)


@dataclass(frozen=True)
class JointSpace:
    """Mixed-radix codecs between joint states / channel-action vectors and
    the flat indices used by the dense MDP."""

    num_monitors: int
    num_traffics: int
    num_channels: int
    x_cap: int
    level_counts: tuple[int, ...]
    release_cap: int

    @property
    def state_dims(self) -> tuple[int, ...]:
        return (
            (self.x_cap + 1,) * self.num_monitors
            + self.level_counts
            + (self.release_cap,) * self.num_channels
        )

    @property
    def num_states(self) -> int:
        return int(np.prod(self.state_dims))

    @property
    def num_actions(self) -> int:
        return (self.num_monitors + self.num_traffics + 1) ** self.num_channels

    def encode_state(self, aoii, levels, release) -> int:
        digits = list(aoii) + list(np.asarray(levels).ravel()) + list(release)
        idx = 0
        for d, base in zip(digits, self.state_dims):
            idx = idx * base + int(d)
        return idx

    def decode_state(self, idx: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        digits = []
        for base in reversed(self.state_dims):
            digits.append(idx % base)
            idx //= base
        digits.reverse()
        i, j, m = self.num_monitors, self.num_traffics, self.num_channels
        aoii = np.array(digits[:i], dtype=np.int64)
        levels = np.array(digits[i : i + j * m], dtype=np.int64).reshape(j, m)
        release = np.array(digits[i + j * m :], dtype=np.int64)
        return aoii, levels, release

    def encode_action(self, action) -> int:
        base = self.num_monitors + self.num_traffics + 1
        idx = 0
        for a in action:
            idx = idx * base + int(a)
        return idx

    def decode_action(self, idx: int) -> np.ndarray:
        base = self.num_monitors + self.num_traffics + 1
        out = []
        for _ in range(self.num_channels):
            out.append(idx % base)
            idx //= base
        out.reverse()
        return np.array(out, dtype=np.int64)

    def label(self, idx: int) -> str:
        aoii, levels, release = self.decode_state(idx)
        return (
            "x=" + ",".join(map(str, aoii))
            + "|g=" + ",".join(map(str, levels.ravel()))
            + "|b=" + ",".join(map(str, release))
        )


def joint_mdp(cfg: SystemConfig, x_cap: int, max_states: int = 200_000) -> tuple[TruncatedMdp, JointSpace]:
    """Enumerate the full joint system with monitor ages capped at ``x_cap``
    (self-loop at the cap), rewarding each slot with the shaped signal. Only
    viable for desk-scale instances; larger ones raise StateSpaceError."""
    i_count, j_count, m_count = cfg.num_monitors, cfg.num_traffics, cfg.num_channels
    level_counts = tuple(
        cfg.chains[j][m].num_levels for j in range(j_count) for m in range(m_count)
    )
    release_cap = max(cfg.max_duration, 1)
    space = JointSpace(
        num_monitors=i_count,
        num_traffics=j_count,
        num_channels=m_count,
        x_cap=x_cap,
        level_counts=level_counts,
        release_cap=release_cap,
    )
    s_count, a_count = space.num_states, space.num_actions
    if s_count > max_states:
        raise StateSpaceError(f"joint enumeration needs {s_count} states (> {max_states})")

    p_vec = np.array([pm.self_prob for pm in cfg.monitors])
    q_vec = np.array([pm.flip_back_prob for pm in cfg.monitors])
    w_mon = cfg.monitor_weights()
    w_traf = cfg.traffic_weights()
    durations = cfg.durations()
    ubar = _expected_table(cfg)
    trans = [
        [cfg.chains[j][m].transition_array() for m in range(m_count)] for j in range(j_count)
    ]

    k_count = (2**i_count) * int(np.prod(level_counts)) if level_counts else 2**i_count
    if s_count * a_count * k_count > MAX_CELLS:
        raise StateSpaceError(
            f"{s_count} states x {a_count} actions x {k_count} outcomes exceeds {MAX_CELLS} cells"
        )
    probs = np.zeros((s_count, a_count, k_count))
    nexts = np.zeros((s_count, a_count, k_count), dtype=np.int64)
    rewards = np.zeros((s_count, a_count))
    feasible = np.zeros((s_count, a_count), dtype=bool)

    monitor_outcomes = list(itertools.product((0, 1), repeat=i_count))  # 1 = reset
    level_choices = [range(n) for n in level_counts]

    for s in range(s_count):
        aoii, levels, release = space.decode_state(s)
        flat_levels = levels.ravel()
        for a_idx in range(a_count):
            action = space.decode_action(a_idx)
            if ((release > 0) & (action != 0)).any():
                continue
            feasible[s, a_idx] = True

            transmitted = np.zeros(i_count, dtype=bool)
            for m in range(m_count):
                if 1 <= action[m] <= i_count:
                    transmitted[action[m] - 1] = True
            starts = np.zeros((j_count, m_count), dtype=bool)
            gain_term = 0.0
            for m in range(m_count):
                if action[m] > i_count:
                    j = action[m] - i_count - 1
                    starts[j, m] = True
                    gain_term += w_traf[j] * ubar[j, m, levels[j, m]]
            rewards[s, a_idx] = -float(w_mon @ aoii) + gain_term

            next_release = np.where(release > 0, release - 1, 0)
            for m in range(m_count):
                if action[m] > i_count:
                    next_release[m] = durations[action[m] - i_count - 1] - 1

            reset_prob = np.where(transmitted | (aoii == 0), p_vec, q_vec)
            climb = np.minimum(aoii + 1, x_cap)
            combos_per_reset = int(np.prod(level_counts)) if level_counts else 1
            k = 0
            for resets in monitor_outcomes:
                pm_prob = 1.0
                next_aoii = np.empty(i_count, dtype=np.int64)
                for i in range(i_count):
                    if resets[i]:
                        pm_prob *= reset_prob[i]
                        next_aoii[i] = 0
                    else:
                        pm_prob *= 1.0 - reset_prob[i]
                        next_aoii[i] = climb[i]
                if pm_prob == 0.0:
                    k += combos_per_reset
                    continue
                for combo in itertools.product(*level_choices) if level_choices else [()]:
                    g_prob = 1.0
                    for pair, nxt_level in enumerate(combo):
                        j, m = divmod(pair, m_count)
                        g_prob *= trans[j][m][flat_levels[pair], nxt_level]
                    pr = pm_prob * g_prob
                    if pr > 0.0:
                        nxt_levels = np.array(combo, dtype=np.int64).reshape(j_count, m_count)
                        probs[s, a_idx, k] = pr
                        nexts[s, a_idx, k] = space.encode_state(next_aoii, nxt_levels, next_release)
                    k += 1

    labels = tuple(space.label(s) for s in range(s_count))
    return (
        TruncatedMdp(probs=probs, nexts=nexts, rewards=rewards, feasible=feasible, labels=labels),
        space,
    )
