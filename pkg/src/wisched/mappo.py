"""Multi-agent PPO with Whittle-index-guided action fusion.

One agent per channel. Each actor sees its channel's observation (all monitor
ages, its own gain column, its own release counter) and picks among J+2
high-level choices: start traditional device 1..J, "serve a monitor", or stay
idle. The fusion step turns those choices into concrete device assignments:
the k-th channel (in channel order) that chose "serve a monitor" gets the
monitor with the k-th highest Whittle index at the current ages (ties broken
toward the lower device id, surplus choices beyond I fall back to idle). Each
critic sees the flattened joint state. Training is on-policy: a fixed-length
rollout per episode, then several epochs of full-batch clipped-surrogate
updates per agent with advantages recomputed against the current critic, then
the buffers are discarded.

A channel that is still reserved takes no decision: its slot is recorded with
the forced "idle" choice and its ratio is pinned to 1 during updates, so no
policy gradient flows through it (the entropy bonus still counts every slot).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .environment import Environment, RngStream
from .errors import CorruptBufferError, NonFiniteLossError, NumericalFloorError
from .model import SystemConfig
from .neural import Adam, Mlp, entropy, forward_actor, forward_critic
from .whittle import WhittleTable, build_table, SearchGrid

__all__ = [
    "Hyperparams",
    "Experience",
    "Buffer",
    "ObservationScaler",
    "rank_monitors",
    "fuse_actions",
    "actor_select",
    "compute_returns",
    "compute_advantages",
    "compute_ratios",
    "surrogate_loss",
    "Trainer",
    "TrainedPolicy",
    "save_checkpoint",
    "load_policy",
    "LOG_COLUMNS",
]

CHECKPOINT_VERSION = 1
LOG_COLUMNS = (
    "episode",
    "mean_reward",
    "mean_accuracy",
    "mean_throughput",
    "loss_mean",
    "entropy_mean",
    "violations",
)


@dataclass(frozen=True)
class Hyperparams:
    """Training knobs. ``buffer_slots`` is the rollout length per episode and
    ``update_epochs`` the number of full-batch passes over it."""

    buffer_slots: int = 4000
    update_epochs: int = 80
    clip: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    discount: float = 0.9
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    hidden: tuple[int, ...] = (128, 128)
    activation: str = "tanh"
    standardize_advantages: bool = False
    aoii_scale: float = 50.0

    def __post_init__(self) -> None:
        if self.buffer_slots < 2:
            raise ValueError("buffer_slots must be at least 2")
        if self.update_epochs < 1:
            raise ValueError("update_epochs must be positive")
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass(frozen=True)
class Experience:
    """One slot as one agent recorded it."""

    global_state: np.ndarray
    obs: np.ndarray
    choice: int
    prob: float
    reward: float
    masked: bool


class Buffer:
    """Fixed-capacity struct-of-arrays rollout storage for one agent."""

    def __init__(self, capacity: int, state_dim: int, obs_dim: int) -> None:
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.obs = np.zeros((capacity, obs_dim))
        self.choices = np.zeros(capacity, dtype=np.int64)
        self.probs = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.masked = np.zeros(capacity, dtype=bool)
        self.count = 0

    def add(self, exp: Experience) -> None:
        if self.count >= self.capacity:
            raise CorruptBufferError("buffer overfilled; clear() it between episodes")
        t = self.count
        self.states[t] = exp.global_state
        self.obs[t] = exp.obs
        self.choices[t] = exp.choice
        self.probs[t] = exp.prob
        self.rewards[t] = exp.reward
        self.masked[t] = exp.masked
        self.count += 1

    @property
    def full(self) -> bool:
        return self.count == self.capacity

    def clear(self) -> None:
        self.count = 0


class ObservationScaler:
    """Fixed input normalization: ages divided by a configured scale, gains
    mapped to raw values and divided by the largest level value, release
    counters divided by the largest possible counter."""

    def __init__(self, cfg: SystemConfig, aoii_scale: float = 50.0) -> None:
        self.aoii_scale = float(aoii_scale)
        self.gain_scale = max(cfg.max_gain_value(), 1e-12)
        self.release_scale = float(max(cfg.max_duration - 1, 1))
        j_count, m_count = cfg.num_traffics, cfg.num_channels
        l_max = max((c.num_levels for row in cfg.chains for c in row), default=1)
        self.value_table = np.zeros((j_count, m_count, l_max))
        for j in range(j_count):
            for m in range(m_count):
                lv = cfg.chains[j][m].levels_array()
                self.value_table[j, m, : lv.size] = lv
                self.value_table[j, m, lv.size :] = lv[-1]

    def gain_values(self, levels: np.ndarray) -> np.ndarray:
        if levels.size == 0:
            return np.zeros_like(levels, dtype=float)
        return np.take_along_axis(self.value_table, levels[:, :, None], axis=2)[:, :, 0]

    def state_vector(self, aoii: np.ndarray, levels: np.ndarray, release: np.ndarray) -> np.ndarray:
        return np.concatenate(
            [
                aoii / self.aoii_scale,
                (self.gain_values(levels) / self.gain_scale).ravel(),
                release / self.release_scale,
            ]
        )

    def obs_vector(self, aoii: np.ndarray, gain_values_col: np.ndarray, release_m: float) -> np.ndarray:
        return np.concatenate(
            [aoii / self.aoii_scale, gain_values_col / self.gain_scale, [release_m / self.release_scale]]
        )


def rank_monitors(indices: np.ndarray) -> np.ndarray:
    """Monitor device ids (1-based) ordered by Whittle index, highest first,
    equal indices broken toward the lower id."""
    order = np.lexsort((np.arange(indices.size), -indices))
    return order + 1


def fuse_actions(choices: np.ndarray, ranked_monitors: np.ndarray, num_traffics: int) -> np.ndarray:
    """Map per-channel high-level choices to device assignments.

    ``choices[m]`` uses the 0-based alphabet {0..J-1: start traditional j+1,
    J: serve a monitor, J+1: idle}. The k-th serve-a-monitor channel takes
    ``ranked_monitors[k-1]``; once the ranking is exhausted the channel idles.
    Each monitor is assigned at most once per slot by construction.
    """
    num_monitors = ranked_monitors.size
    out = np.zeros(choices.size, dtype=np.int64)
    taken = 0
    for m, ch in enumerate(choices):
        if ch < num_traffics:
            out[m] = num_monitors + 1 + ch
        elif ch == num_traffics:
            if taken < num_monitors:
                out[m] = ranked_monitors[taken]
            taken += 1
        # ch == num_traffics + 1 leaves the channel idle
    return out


def actor_select(
    actor: Mlp, obs_vec: np.ndarray, masked: bool, rng: RngStream
) -> tuple[int, float, np.ndarray]:
    """Pick a high-level choice for one channel.

    A reserved channel is forced to the idle choice; the actor's current
    probability of that choice is recorded anyway (diagnostic only; updates
    pin the ratio of masked slots to 1). Sampling a probability at or below
    the floating-point floor raises NumericalFloorError.
    """
    probs = forward_actor(actor, obs_vec)[0]
    idle = probs.size - 1
    if masked:
        return idle, float(probs[idle]), probs
    u = rng.random()
    cum = np.cumsum(probs)
    choice = int(np.searchsorted(cum, u, side="right"))
    choice = min(choice, idle)
    if probs[choice] <= 0.0:
        raise NumericalFloorError(f"sampled choice {choice} has probability {probs[choice]}")
    return choice, float(probs[choice]), probs


def compute_returns(rewards: np.ndarray, discount: float) -> np.ndarray:
    """Discounted reward-to-go inside the rollout window, no bootstrap beyond
    the last slot: G[t] = r[t] + discount * G[t+1], G[last] = r[last]."""
    out = np.empty_like(rewards, dtype=float)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + discount * acc
        out[t] = acc
    return out


def compute_advantages(returns: np.ndarray, values: np.ndarray, standardize: bool = False) -> np.ndarray:
    """Return-minus-baseline advantages, treated as constants by the policy
    update. Optional standardization to zero mean / unit deviation."""
    adv = returns - values
    if standardize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv


def compute_ratios(probs_now: np.ndarray, probs_stored: np.ndarray, masked: np.ndarray) -> np.ndarray:
    """Importance ratios; reserved slots are pinned to exactly 1."""
    if (probs_stored <= 0.0).any():
        bad = int(np.nonzero(probs_stored <= 0.0)[0][0])
        raise CorruptBufferError(f"stored probability at slot {bad} is {probs_stored[bad]}")
    return np.where(masked, 1.0, probs_now / probs_stored)


def surrogate_loss(
    ratios: np.ndarray,
    advantages: np.ndarray,
    values: np.ndarray,
    returns: np.ndarray,
    entropies: np.ndarray,
    clip: float,
    value_coef: float,
    entropy_coef: float,
) -> tuple[float, np.ndarray]:
    """Clipped-surrogate loss averaged over the batch, plus the active-branch
    mask (True where the unclipped term is the one being minimized, i.e. where
    policy gradient flows). Non-finite terms raise NonFiniteLossError naming
    the first offending slot."""
    surr1 = ratios * advantages
    surr2 = np.clip(ratios, 1.0 - clip, 1.0 + clip) * advantages
    unclipped_active = surr1 <= surr2
    per_slot = (
        -np.minimum(surr1, surr2)
        + value_coef * (values - returns) ** 2
        - entropy_coef * entropies
    )
    if not np.isfinite(per_slot).all():
        bad = int(np.nonzero(~np.isfinite(per_slot))[0][0])
        raise NonFiniteLossError(f"loss term at slot {bad} is {per_slot[bad]}")
    return float(per_slot.mean()), unclipped_active


class _AgentNets:
    def __init__(self, obs_dim: int, state_dim: int, num_choices: int, hyper: Hyperparams, seed: int, tag: str):
        self.actor = Mlp(
            (obs_dim, *hyper.hidden, num_choices),
            activation=hyper.activation,
            rng=RngStream(seed, f"init-{tag}-actor").gen,
        )
        self.critic = Mlp(
            (state_dim, *hyper.hidden, 1),
            activation=hyper.activation,
            rng=RngStream(seed, f"init-{tag}-critic").gen,
        )
        self.opt_actor = Adam(self.actor.parameters(), lr=hyper.actor_lr)
        self.opt_critic = Adam(self.critic.parameters(), lr=hyper.critic_lr)


class Trainer:
    """On-policy trainer per the episode loop described in the module
    docstring. Deterministic given (config, table, hyperparams, seed)."""

    def __init__(
        self,
        cfg: SystemConfig,
        table: WhittleTable,
        hyper: Hyperparams,
        seed: int,
        auto_extend_table: bool = True,
    ) -> None:
        if table.num_devices != cfg.num_monitors:
            raise ValueError("table must hold one column reference per monitor")
        self.cfg = cfg
        self.table = table
        self.hyper = hyper
        self.seed = int(seed)
        self.auto_extend_table = auto_extend_table
        self.env = Environment(cfg, seed)
        self.scaler = ObservationScaler(cfg, aoii_scale=hyper.aoii_scale)
        self.sample_rng = RngStream(seed, "action-sample")

        i, j, m = cfg.num_monitors, cfg.num_traffics, cfg.num_channels
        self.num_choices = j + 2
        self.obs_dim = i + j + 1
        self.state_dim = i + j * m + m
        self.agents = [
            _AgentNets(self.obs_dim, self.state_dim, self.num_choices, hyper, seed, f"agent{k}")
            for k in range(m)
        ]
        self.buffers = [
            Buffer(hyper.buffer_slots, self.state_dim, self.obs_dim) for _ in range(m)
        ]
        self._index_matrix = table.index_matrix()
        self.episodes_done = 0
        self.max_age_seen = 0

    # -- training ----------------------------------------------------------

    def _indices_at(self, aoii: np.ndarray) -> np.ndarray:
        width = self._index_matrix.shape[1]
        return self._index_matrix[np.arange(aoii.size), np.minimum(aoii, width - 1)]

    def _rollout(self) -> dict:
        env = self.env
        hyper = self.hyper
        env.reset()
        for buf in self.buffers:
            buf.clear()
        n = hyper.buffer_slots
        rewards = np.empty(n)
        tputs = np.empty(n)
        accs = np.empty(n)
        for t in range(n):
            aoii = env._aoii
            levels = env._levels
            release = env.release()
            gain_vals = self.scaler.gain_values(levels)
            aoii_n = aoii / self.scaler.aoii_scale
            state_vec = np.concatenate(
                [aoii_n, (gain_vals / self.scaler.gain_scale).ravel(), release / self.scaler.release_scale]
            )
            choices = np.empty(len(self.agents), dtype=np.int64)
            probs = np.empty(len(self.agents))
            obs_rows = []
            for m, agent in enumerate(self.agents):
                obs_vec = np.concatenate(
                    [aoii_n, gain_vals[:, m] / self.scaler.gain_scale, [release[m] / self.scaler.release_scale]]
                )
                ch, pr, _ = actor_select(agent.actor, obs_vec, release[m] > 0, self.sample_rng)
                choices[m], probs[m] = ch, pr
                obs_rows.append(obs_vec)
            ranked = rank_monitors(self._indices_at(aoii))
            action = fuse_actions(choices, ranked, self.cfg.num_traffics)
            masked = release > 0
            accs[t] = float((aoii == 0).sum()) / self.cfg.num_monitors
            result = env.step(action)
            rewards[t] = result.reward
            tputs[t] = result.throughput
            self.max_age_seen = max(self.max_age_seen, int(env._aoii.max()))
            for m, buf in enumerate(self.buffers):
                buf.add(
                    Experience(
                        global_state=state_vec,
                        obs=obs_rows[m],
                        choice=int(choices[m]),
                        prob=float(probs[m]),
                        reward=float(rewards[t]),
                        masked=bool(masked[m]),
                    )
                )
        return {"rewards": rewards, "throughput": tputs, "accuracy": accs}

    def _update_agent(self, agent: _AgentNets, buf: Buffer, returns: np.ndarray) -> tuple[float, float]:
        hyper = self.hyper
        n = buf.count
        rows = np.arange(n)
        obs = buf.obs[:n]
        states = buf.states[:n]
        choices = buf.choices[:n]
        stored = buf.probs[:n]
        masked = buf.masked[:n]

        probs = forward_actor(agent.actor, obs)
        values = forward_critic(agent.critic, states)
        p_now = probs[rows, choices]
        ratios = compute_ratios(p_now, stored, masked)
        adv = compute_advantages(returns, values, hyper.standardize_advantages)
        ents = entropy(probs)
        loss, unclipped = surrogate_loss(
            ratios, adv, values, returns, ents,
            hyper.clip, hyper.value_coef, hyper.entropy_coef,
        )

        # policy-gradient path: d(-min(surr))/d p_now on active, unmasked slots
        g_probs = np.zeros_like(probs)
        live = unclipped & ~masked
        g_probs[rows[live], choices[live]] = -adv[live] / (stored[live] * n)
        # entropy bonus path: d(-c2*H)/d p = c2*(log p + 1), every slot
        with np.errstate(divide="ignore"):
            logp = np.where(probs > 0.0, np.log(np.maximum(probs, 1e-320)), 0.0)
        g_probs += hyper.entropy_coef * (logp + 1.0) / n
        # through the softmax: dz = p * (g - sum(g * p))
        dlogits = probs * (g_probs - (g_probs * probs).sum(axis=1, keepdims=True))
        actor_grads = agent.actor.backward(dlogits)
        flat_a = [g for pair in actor_grads for g in pair]
        agent.opt_actor.step(agent.actor.parameters(), flat_a)

        dvalues = 2.0 * hyper.value_coef * (values - returns) / n
        critic_grads = agent.critic.backward(dvalues[:, None])
        flat_c = [g for pair in critic_grads for g in pair]
        agent.opt_critic.step(agent.critic.parameters(), flat_c)
        return loss, float(ents.mean())

    def _maybe_extend_table(self) -> None:
        if not self.auto_extend_table:
            return
        if self.max_age_seen <= 0.9 * self.table.x_max:
            return
        col = self.table.columns[0]
        new_x_max = self.table.x_max * 2
        self.table = build_table(
            self.cfg.monitors,
            x_max=new_x_max,
            search=SearchGrid(dc=col.dc, c_low=col.c_low, c_high=col.c_high),
        )
        self._index_matrix = self.table.index_matrix()

    def train(self, episodes: int, log_path=None) -> list[dict]:
        """Run the episode loop; returns one metrics dict per episode and
        optionally streams them to a CSV."""
        history: list[dict] = []
        writer = None
        fh = None
        if log_path is not None:
            fh = open(log_path, "w", newline="", encoding="utf-8")
            writer = csv.writer(fh)
            writer.writerow(LOG_COLUMNS)
        try:
            for _ in range(episodes):
                roll = self._rollout()
                returns = compute_returns(roll["rewards"], self.hyper.discount)
                losses = []
                ents = []
                for _epoch in range(self.hyper.update_epochs):
                    for agent, buf in zip(self.agents, self.buffers):
                        loss, ent = self._update_agent(agent, buf, returns)
                        losses.append(loss)
                        ents.append(ent)
                for buf in self.buffers:
                    buf.clear()
                self._maybe_extend_table()
                self.episodes_done += 1
                row = {
                    "episode": self.episodes_done,
                    "mean_reward": float(roll["rewards"].mean()),
                    "mean_accuracy": float(roll["accuracy"].mean()),
                    "mean_throughput": float(roll["throughput"].mean()),
                    "loss_mean": float(np.mean(losses)),
                    "entropy_mean": float(np.mean(ents)),
                    "violations": self.env.violations,
                }
                history.append(row)
                if writer is not None:
                    writer.writerow([_format_cell(row[c]) for c in LOG_COLUMNS])
                    fh.flush()
        finally:
            if fh is not None:
                fh.close()
        return history

    def policy(self, greedy: bool = True, seed: int | None = None) -> "TrainedPolicy":
        return TrainedPolicy(
            actors=[a.actor for a in self.agents],
            scaler=self.scaler,
            index_matrix=self._index_matrix,
            num_traffics=self.cfg.num_traffics,
            greedy=greedy,
            rng=RngStream(self.seed if seed is None else seed, "online-sample"),
        )


def _format_cell(v) -> str:
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


class TrainedPolicy:
    """Frozen policy closure over trained actors, usable as a stationary
    policy for Environment.run_policy. Greedy mode takes the argmax choice
    (ties toward the lower index); sampled mode draws from the actor."""

    def __init__(self, actors, scaler, index_matrix, num_traffics, greedy, rng) -> None:
        self.actors = actors
        self.scaler = scaler
        self.index_matrix = index_matrix
        self.num_traffics = num_traffics
        self.greedy = greedy
        self.rng = rng

    def __call__(self, aoii: np.ndarray, levels: np.ndarray, release: np.ndarray) -> np.ndarray:
        gain_vals = self.scaler.gain_values(levels)
        aoii_n = aoii / self.scaler.aoii_scale
        num_choices = self.num_traffics + 2
        choices = np.empty(len(self.actors), dtype=np.int64)
        for m, actor in enumerate(self.actors):
            if release[m] > 0:
                choices[m] = num_choices - 1
                continue
            obs_vec = np.concatenate(
                [aoii_n, gain_vals[:, m] / self.scaler.gain_scale, [release[m] / self.scaler.release_scale]]
            )
            row = forward_actor(actor, obs_vec)[0]
            if self.greedy:
                choices[m] = int(np.argmax(row))
            else:
                ch, _, _ = actor_select(actor, obs_vec, False, self.rng)
                choices[m] = ch
        width = self.index_matrix.shape[1]
        indices = self.index_matrix[np.arange(aoii.size), np.minimum(aoii, width - 1)]
        return fuse_actions(choices, rank_monitors(indices), self.num_traffics)


def apply_online(policy: TrainedPolicy, env: Environment, steps: int, dump_path=None) -> dict:
    """Roll a trained policy with no learning; returns the per-slot series."""
    return env.run_policy(policy, steps, dump_path=dump_path)


def save_checkpoint(trainer: Trainer, path) -> None:
    """Single-file checkpoint: every layer, optimizer state, and the input
    normalization constants, with a JSON header describing shapes."""
    arrays: dict[str, np.ndarray] = {}
    for k, agent in enumerate(trainer.agents):
        arrays.update(agent.actor.export_arrays(f"agent{k}.actor"))
        arrays.update(agent.critic.export_arrays(f"agent{k}.critic"))
        arrays.update(agent.opt_actor.export_arrays(f"agent{k}.opt_actor"))
        arrays.update(agent.opt_critic.export_arrays(f"agent{k}.opt_critic"))
    meta = {
        "version": CHECKPOINT_VERSION,
        "num_agents": len(trainer.agents),
        "obs_dim": trainer.obs_dim,
        "state_dim": trainer.state_dim,
        "num_choices": trainer.num_choices,
        "hidden": list(trainer.hyper.hidden),
        "activation": trainer.hyper.activation,
        "aoii_scale": trainer.scaler.aoii_scale,
        "gain_scale": trainer.scaler.gain_scale,
        "release_scale": trainer.scaler.release_scale,
        "episodes_done": trainer.episodes_done,
        "seed": trainer.seed,
    }
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)


def load_policy(path, cfg: SystemConfig, table: WhittleTable, greedy: bool = True, seed: int = 0) -> TrainedPolicy:
    """Rebuild a frozen greedy/sampled policy from a checkpoint."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
        actors = []
        sizes = (meta["obs_dim"], *meta["hidden"], meta["num_choices"])
        for k in range(meta["num_agents"]):
            actors.append(Mlp.from_arrays(sizes, meta["activation"], f"agent{k}.actor", data))
    scaler = ObservationScaler(cfg, aoii_scale=meta["aoii_scale"])
    scaler.gain_scale = meta["gain_scale"]
    scaler.release_scale = meta["release_scale"]
    return TrainedPolicy(
        actors=actors,
        scaler=scaler,
        index_matrix=table.index_matrix(),
        num_traffics=cfg.num_traffics,
        greedy=greedy,
        rng=RngStream(seed, "online-sample"),
    )
