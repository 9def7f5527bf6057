"""Actor-critic trainer: fusion, returns, ratios, loss, exact update
gradients, determinism, and checkpointing."""

import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from wisched import (
    Buffer,
    CorruptBufferError,
    Environment,
    Experience,
    GainChain,
    Hyperparams,
    LOG_COLUMNS,
    Mlp,
    NonFiniteLossError,
    ProcessModel,
    RngStream,
    SearchGrid,
    SystemConfig,
    TrafficModel,
    Trainer,
    actor_select,
    apply_online,
    build_table,
    compute_advantages,
    compute_ratios,
    compute_returns,
    entropy,
    forward_actor,
    forward_critic,
    fuse_actions,
    load_policy,
    rank_monitors,
    save_checkpoint,
    surrogate_loss,
)


def micro_cfg():
    chain = GainChain.random_walk([1.0, 3.0], 0.6)
    return SystemConfig(
        monitors=[ProcessModel(5, 0.7, 1.0), ProcessModel(5, 0.8, 2.0)],
        traffics=[TrafficModel(1, 1.0), TrafficModel(3, 1.0)],
        bandwidths=[1.0, 1.0],
        chains=[[chain, chain], [chain, chain]],
    )


def micro_hyper(**over):
    base = dict(
        buffer_slots=64,
        update_epochs=2,
        hidden=(8, 8),
        actor_lr=1e-3,
        critic_lr=1e-3,
        aoii_scale=5.0,
    )
    base.update(over)
    return Hyperparams(**base)


def micro_table(cfg):
    return build_table(cfg.monitors, x_max=60, search=SearchGrid(dc=0.5, c_low=0.5, c_high=200.0))


class TestHyperparams:
    def test_validation(self):
        with pytest.raises(ValueError):
            Hyperparams(clip=1.0)
        with pytest.raises(ValueError):
            Hyperparams(buffer_slots=1)
        with pytest.raises(ValueError):
            Hyperparams(discount=1.5)
        assert Hyperparams().clip == 0.2


class TestBuffer:
    def test_overfill_raises(self):
        buf = Buffer(capacity=2, state_dim=3, obs_dim=2)
        exp = Experience(np.zeros(3), np.zeros(2), 0, 0.5, 1.0, False)
        buf.add(exp)
        buf.add(exp)
        assert buf.full
        with pytest.raises(CorruptBufferError):
            buf.add(exp)
        buf.clear()
        assert buf.count == 0
        buf.add(exp)
        assert buf.count == 1


class TestRankAndFuse:
    def test_rank_orders_by_index_ties_to_lower_id(self):
        ranked = rank_monitors(np.array([3.0, 9.0, 3.0, 1.0]))
        assert_array_equal(ranked, [2, 1, 3, 4])

    def test_fuse_traditional_monitor_idle(self):
        # two monitors, two traditional devices, three channels; choices use
        # the 0-based alphabet {0,1: traditional, 2: monitor slot, 3: idle}
        ranked = rank_monitors(np.array([5.0, 7.0]))
        out = fuse_actions(np.array([1, 3, 2]), ranked, num_traffics=2)
        assert_array_equal(out, [4, 0, 2])  # traditional 2 -> device 4, idle, top monitor

    def test_fuse_all_idle(self):
        ranked = rank_monitors(np.array([5.0, 7.0]))
        assert_array_equal(fuse_actions(np.array([3, 3, 3]), ranked, 2), [0, 0, 0])

    def test_fuse_kth_monitor_and_age_order(self):
        # equal devices at ages 9 and 1: the higher age ranks first, then id
        ranked = rank_monitors(np.array([30.7, 4.2]))
        out = fuse_actions(np.array([0, 0]), ranked, num_traffics=0)
        assert_array_equal(out, [1, 2])

    def test_fuse_surplus_monitor_slots_idle(self):
        ranked = rank_monitors(np.array([2.0]))
        out = fuse_actions(np.array([1, 1, 1]), ranked, num_traffics=1)
        assert_array_equal(out, [1, 0, 0])

    def test_fused_monitors_always_distinct(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            idx = rng.uniform(0, 10, size=4)
            choices = rng.integers(0, 4, size=3)
            out = fuse_actions(choices, rank_monitors(idx), num_traffics=2)
            served = out[(out >= 1) & (out <= 4)]
            assert len(set(served.tolist())) == served.size


class TestActorSelect:
    def test_masked_forces_idle_with_recorded_prob(self):
        rng = np.random.default_rng(3)
        actor = Mlp((4, 8, 4), rng=rng)
        obs = rng.normal(size=4)
        choice, prob, probs = actor_select(actor, obs, True, RngStream(0, "t"))
        assert choice == 3
        assert_allclose(prob, probs[3])

    def test_sampling_frequencies_match_uniform_actor(self):
        actor = Mlp((2, 4), rng=np.random.default_rng(0))
        # zero the single layer so the policy is exactly uniform
        for p in actor.parameters():
            p[:] = 0.0
        stream = RngStream(1, "freq")
        counts = np.zeros(4)
        n = 100_000
        obs = np.array([0.3, -0.2])
        for _ in range(n):
            ch, prob, _ = actor_select(actor, obs, False, stream)
            counts[ch] += 1
        assert_allclose(prob, 0.25)
        sigma = np.sqrt(0.25 * 0.75 / n)
        assert np.abs(counts / n - 0.25).max() < 3 * sigma + 1e-9

    def test_recorded_prob_is_actor_output_at_choice(self):
        rng = np.random.default_rng(5)
        actor = Mlp((3, 6, 5), rng=rng)
        obs = rng.normal(size=3)
        row = forward_actor(actor, obs)[0]
        ch, prob, _ = actor_select(actor, obs, False, RngStream(2, "t"))
        assert_allclose(prob, row[ch], rtol=1e-15)


class TestReturnsAdvantagesRatios:
    def test_returns_worked_example(self):
        assert_allclose(compute_returns(np.array([1.0, 1.0, 1.0]), 0.5), [1.75, 1.5, 1.0])

    def test_returns_zero_discount_and_zero_rewards(self):
        r = np.array([2.0, -1.0, 0.5])
        assert_allclose(compute_returns(r, 0.0), r)
        assert_allclose(compute_returns(np.zeros(4), 0.9), np.zeros(4))

    def test_advantages(self):
        ret = np.array([1.0, 2.0, 3.0])
        assert_allclose(compute_advantages(ret, ret.copy()), np.zeros(3))
        assert_allclose(compute_advantages(ret, np.zeros(3)), ret)
        std = compute_advantages(ret, np.zeros(3), standardize=True)
        assert abs(std.mean()) < 1e-12
        assert_allclose(std.std(), 1.0, atol=1e-7)

    def test_ratios(self):
        now = np.array([0.3, 0.5, 0.2])
        stored = np.array([0.15, 0.5, 0.4])
        masked = np.array([False, False, True])
        assert_allclose(compute_ratios(now, stored, masked), [2.0, 1.0, 1.0])
        # unchanged actor -> ratios exactly 1
        assert_allclose(compute_ratios(stored, stored, np.zeros(3, bool)), np.ones(3), rtol=1e-12)

    def test_ratio_pinned_on_masked_regardless_of_nets(self):
        now = np.array([0.9])
        stored = np.array([0.1])
        assert compute_ratios(now, stored, np.array([True]))[0] == 1.0

    def test_corrupt_buffer(self):
        with pytest.raises(CorruptBufferError):
            compute_ratios(np.array([0.5]), np.array([0.0]), np.array([False]))


class TestSurrogateLoss:
    def test_entropy_only_when_ratios_one_and_zero_advantage(self):
        n = 5
        ents = np.linspace(0.5, 1.0, n)
        loss, active = surrogate_loss(
            np.ones(n), np.zeros(n), np.zeros(n), np.zeros(n), ents, 0.2, 0.5, 0.01
        )
        assert_allclose(loss, -0.01 * ents.mean())
        assert active.all()

    def test_pessimistic_clip_branch(self):
        loss, active = surrogate_loss(
            np.array([2.0]), np.array([1.0]), np.array([0.0]), np.array([0.0]),
            np.array([0.0]), 0.2, 0.5, 0.0,
        )
        # min(2*1, 1.2*1) = 1.2, negated
        assert_allclose(loss, -1.2)
        assert not active[0]  # clipped branch is the active one

    def test_negative_advantage_keeps_unclipped_branch(self):
        _, active = surrogate_loss(
            np.array([2.0]), np.array([-1.0]), np.array([0.0]), np.array([0.0]),
            np.array([0.0]), 0.2, 0.5, 0.0,
        )
        assert active[0]  # surr1 = -2 <= surr2 = -1.2

    def test_value_term(self):
        loss, _ = surrogate_loss(
            np.ones(2), np.zeros(2), np.array([1.0, 3.0]), np.array([0.0, 0.0]),
            np.zeros(2), 0.2, 0.5, 0.0,
        )
        assert_allclose(loss, 0.5 * (1.0 + 9.0) / 2)

    def test_nonfinite_names_slot(self):
        # an exploding ratio alone is rescued by the clip; a non-finite value
        # estimate is not
        loss, _ = surrogate_loss(
            np.array([np.inf]), np.array([1.0]), np.zeros(1), np.zeros(1),
            np.zeros(1), 0.2, 0.5, 0.0,
        )
        assert np.isfinite(loss)
        with pytest.raises(NonFiniteLossError, match="slot 1"):
            surrogate_loss(
                np.array([1.0, 1.0]), np.array([1.0, 1.0]), np.array([0.0, np.nan]),
                np.zeros(2), np.zeros(2), 0.2, 0.5, 0.0,
            )


class TestUpdateGradients:
    """Central finite differences through the exact scalar the update
    minimizes, against the gradients the update hands the optimizer."""

    def setup_trainer(self):
        cfg = micro_cfg()
        table = micro_table(cfg)
        hyper = micro_hyper()
        tr = Trainer(cfg, table, hyper, seed=3)
        roll = tr._rollout()
        returns = compute_returns(roll["rewards"], hyper.discount)
        # stale the stored behavior probabilities so both clip branches occur
        rng = np.random.default_rng(8)
        for buf in tr.buffers:
            n = buf.count
            factors = rng.uniform(0.5, 1.5, size=n)
            buf.probs[:n] = np.clip(buf.probs[:n] * factors, 1e-6, 1.0)
        return tr, returns

    def capture_grads(self, trainer, agent, buf, returns):
        rec = {}
        agent.opt_actor.step = lambda params, grads: rec.__setitem__("actor", [g.copy() for g in grads])
        agent.opt_critic.step = lambda params, grads: rec.__setitem__("critic", [g.copy() for g in grads])
        trainer._update_agent(agent, buf, returns)
        return rec["actor"], rec["critic"]

    def actor_scalar(self, trainer, agent, buf, returns):
        """The loss as a function of actor parameters: advantages come from
        the frozen critic, so the value term is a constant offset. It is
        zeroed here (values=returns slots) to keep the finite-difference
        noise floor below the actor-gradient scale."""
        n = buf.count
        rows = np.arange(n)
        probs = forward_actor(agent.actor, buf.obs[:n])
        p_now = probs[rows, buf.choices[:n]]
        ratios = compute_ratios(p_now, buf.probs[:n], buf.masked[:n])
        values = forward_critic(agent.critic, buf.states[:n])
        adv = compute_advantages(returns, values, trainer.hyper.standardize_advantages)
        loss, _ = surrogate_loss(
            ratios, adv, returns, returns, entropy(probs),
            trainer.hyper.clip, trainer.hyper.value_coef, trainer.hyper.entropy_coef,
        )
        return loss

    def critic_scalar(self, trainer, agent, buf, returns):
        """Only the value-error term trains the critic; the policy term treats
        advantages as detached constants."""
        n = buf.count
        values = forward_critic(agent.critic, buf.states[:n])
        return trainer.hyper.value_coef * float(((values - returns) ** 2).mean())

    def fd_check(self, params, grads, scalar, n_dirs, seed):
        """Directional derivatives along random unit directions: one central
        difference tests every coordinate of the gradient jointly."""
        rng = np.random.default_rng(seed)
        eps = 1e-6
        for _ in range(n_dirs):
            dirs = [rng.normal(size=p.shape) for p in params]
            norm = np.sqrt(sum((d**2).sum() for d in dirs))
            dirs = [d / norm for d in dirs]
            analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
            saved = [p.copy() for p in params]
            for p, d in zip(params, dirs):
                p += eps * d
            up = scalar()
            for p, s, d in zip(params, saved, dirs):
                p[...] = s - eps * d
            down = scalar()
            for p, s in zip(params, saved):
                p[...] = s
            fd = (up - down) / (2 * eps)
            assert abs(analytic - fd) <= 1e-4 * max(abs(fd), abs(analytic), 1e-8)

    def test_actor_gradient_matches_finite_differences(self):
        tr, returns = self.setup_trainer()
        agent, buf = tr.agents[0], tr.buffers[0]
        actor_grads, _ = self.capture_grads(tr, agent, buf, returns)
        self.fd_check(
            agent.actor.parameters(), actor_grads,
            lambda: self.actor_scalar(tr, agent, buf, returns), 30, seed=1,
        )

    def test_critic_gradient_matches_finite_differences(self):
        tr, returns = self.setup_trainer()
        agent, buf = tr.agents[1], tr.buffers[1]
        _, critic_grads = self.capture_grads(tr, agent, buf, returns)
        self.fd_check(
            agent.critic.parameters(), critic_grads,
            lambda: self.critic_scalar(tr, agent, buf, returns), 30, seed=2,
        )

    def test_masked_slots_receive_no_policy_gradient(self):
        tr, returns = self.setup_trainer()
        agent, buf = tr.agents[0], tr.buffers[0]
        n = buf.count
        assert buf.masked[:n].any(), "rollout should contain reserved slots"
        # entropy off isolates the policy path; masked slots then contribute
        # nothing, so scaling their stored probs must not change the gradient
        tr.hyper = micro_hyper(entropy_coef=0.0)
        g1, _ = self.capture_grads(tr, agent, buf, returns)
        buf.probs[:n][buf.masked[:n]] *= 0.5
        g2, _ = self.capture_grads(tr, agent, buf, returns)
        for a, b in zip(g1, g2):
            assert_array_equal(a, b)


class TestTrainerLoop:
    def test_rollout_masks_and_choice_alphabet(self):
        cfg = micro_cfg()
        tr = Trainer(cfg, micro_table(cfg), micro_hyper(), seed=5)
        tr._rollout()
        idle = cfg.num_traffics + 1
        for buf in tr.buffers:
            n = buf.count
            assert n == 64
            assert (buf.choices[:n] >= 0).all() and (buf.choices[:n] <= idle).all()
            assert (buf.choices[:n][buf.masked[:n]] == idle).all()
            assert (buf.probs[:n] > 0).all() and (buf.probs[:n] <= 1.0).all()

    def test_training_is_deterministic(self, tmp_path):
        cfg = micro_cfg()
        logs = []
        for run in range(2):
            tr = Trainer(cfg, micro_table(cfg), micro_hyper(), seed=7)
            hist = tr.train(2, log_path=tmp_path / f"log{run}.csv")
            logs.append(hist)
        assert logs[0] == logs[1]
        assert (tmp_path / "log0.csv").read_bytes() == (tmp_path / "log1.csv").read_bytes()

    def test_log_csv_schema(self, tmp_path):
        cfg = micro_cfg()
        tr = Trainer(cfg, micro_table(cfg), micro_hyper(), seed=2)
        hist = tr.train(1, log_path=tmp_path / "log.csv")
        with open(tmp_path / "log.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == LOG_COLUMNS
        assert len(rows) == 2
        assert int(rows[1][0]) == 1
        assert float(rows[1][1]) == pytest.approx(hist[0]["mean_reward"])

    def test_buffers_emptied_between_episodes(self):
        cfg = micro_cfg()
        tr = Trainer(cfg, micro_table(cfg), micro_hyper(), seed=2)
        tr.train(1)
        assert all(buf.count == 0 for buf in tr.buffers)

    def test_no_violations_in_short_run(self):
        cfg = micro_cfg()
        tr = Trainer(cfg, micro_table(cfg), micro_hyper(), seed=4)
        hist = tr.train(3)
        assert hist[-1]["violations"] == 0


class TestPolicyAndCheckpoint:
    def trained(self):
        cfg = micro_cfg()
        table = micro_table(cfg)
        tr = Trainer(cfg, table, micro_hyper(), seed=9)
        tr.train(2)
        return cfg, table, tr

    def test_greedy_policy_masks_busy_channels(self):
        cfg, table, tr = self.trained()
        pol = tr.policy(greedy=True)
        act = pol(np.array([3, 0]), np.array([[1, 0], [0, 1]]), np.array([0, 2]))
        assert act[1] == 0

    def test_apply_online_updates_nothing(self):
        cfg, table, tr = self.trained()
        before = [p.copy() for a in tr.agents for p in a.actor.parameters()]
        env = Environment(cfg, seed=33)
        env.reset()
        out = apply_online(tr.policy(greedy=True), env, 200)
        after = [p for a in tr.agents for p in a.actor.parameters()]
        for b, a in zip(before, after):
            assert_array_equal(b, a)
        assert out["reward"].shape == (200,)
        assert env.violations == 0

    def test_checkpoint_round_trip(self, tmp_path):
        cfg, table, tr = self.trained()
        path = tmp_path / "ck.npz"
        save_checkpoint(tr, path)
        restored = load_policy(path, cfg, table, greedy=True)
        direct = tr.policy(greedy=True)
        rng = np.random.default_rng(12)
        for _ in range(25):
            aoii = rng.integers(0, 20, size=2)
            levels = rng.integers(0, 2, size=(2, 2))
            release = rng.integers(0, 3, size=2)
            assert_array_equal(
                restored(aoii, levels, release), direct(aoii, levels, release)
            )

    def test_checkpoint_version_guard(self, tmp_path):
        cfg, table, tr = self.trained()
        path = tmp_path / "ck.npz"
        save_checkpoint(tr, path)
        import json

        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
        meta = json.loads(bytes(arrays["meta"]).decode())
        meta["version"] = 99
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        np.savez(tmp_path / "bad.npz", **arrays)
        with pytest.raises(ValueError):
            load_policy(tmp_path / "bad.npz", cfg, table)

    def test_sampled_policy_reproducible_by_seed(self):
        cfg, table, tr = self.trained()
        state = (np.array([2, 5]), np.array([[0, 1], [1, 0]]), np.array([0, 0]))
        a1 = [tr.policy(greedy=False, seed=4)(*state) for _ in range(5)]
        a2 = [tr.policy(greedy=False, seed=4)(*state) for _ in range(5)]
        for x, y in zip(a1, a2):
            assert_array_equal(x, y)
