import numpy as np
import pytest

from descentrl import autodiff as ad
from descentrl import nets, ppo
from descentrl.envs import ToyPointMassEnv
from descentrl.nets import Network, RunningScaler
from descentrl.ppo import (
    AdamState,
    Batch,
    NumericalDivergence,
    UpdateConfig,
    adapt_clip,
    collect_rollouts,
    dual_discount_returns,
    pad_for_unroll,
    ppo_update,
    returns_and_advantages,
)


def make_episode(rng, n, obs_dim=2, act_dim=1, h_dim=None):
    return ppo.EpisodeRollout(
        obs=rng.normal(size=(n, obs_dim)),
        actions=rng.normal(size=(n, act_dim)),
        log_probs=rng.normal(size=n),
        r1=np.zeros(n),
        r2=rng.normal(size=n),
        h_policy=rng.normal(size=(n, h_dim)) if h_dim else None,
        h_value=rng.normal(size=(n, h_dim)) if h_dim else None,
        cause="timeout",
        terminal_pos=1.0,
        terminal_vel=0.5,
        glideslope=3.0,
        fuel=10.0,
    )


class TestDualDiscountReturns:
    def test_worked_two_step_example(self):
        G = dual_discount_returns(
            np.array([0.0, 10.0]), np.array([-1.0, -1.0]), 0.5, 0.9
        )
        assert G[0] == pytest.approx(3.1, abs=1e-12)
        assert G[1] == pytest.approx(9.0, abs=1e-12)

    def test_equal_discounts_reduce_to_single(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = rng.integers(1, 60)
            r1 = rng.normal(size=n)
            r2 = rng.normal(size=n)
            gamma = rng.uniform(0.5, 0.999)
            got = dual_discount_returns(r1, r2, gamma, gamma)
            # classic single-discount suffix sum on the summed channels
            ref = np.zeros(n)
            acc = 0.0
            for t in range(n - 1, -1, -1):
                acc = (r1[t] + r2[t]) + gamma * acc
                ref[t] = acc
            assert np.max(np.abs(got - ref)) <= 1e-12

    def test_zero_rewards_zero_returns(self):
        G = dual_discount_returns(np.zeros(5), np.zeros(5), 0.9, 0.8)
        assert np.all(G == 0.0)


class _StubValue:
    """Value net stand-in returning fixed predictions."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def forward(self, obs, hidden0, unroll):
        return self.values.reshape(-1, 1), None


class TestReturnsAndAdvantages:
    def test_worked_advantage_example(self):
        ep = ppo.EpisodeRollout(
            obs=np.zeros((2, 2)),
            actions=np.zeros((2, 1)),
            log_probs=np.zeros(2),
            r1=np.array([0.0, 10.0]),
            r2=np.array([-1.0, -1.0]),
            h_policy=None,
            h_value=None,
            cause="landed-success",
            terminal_pos=0.0,
            terminal_vel=0.0,
            glideslope=10.0,
            fuel=0.0,
        )
        batch = pad_for_unroll([ep], 1)
        stub = _StubValue([1.0, 0.0])
        G, A, V = returns_and_advantages(
            [ep], batch, stub, RunningScaler(2), 0.5, 0.9, normalize=False
        )
        assert G[0] == pytest.approx(3.1, abs=1e-12)
        assert A[0] == pytest.approx(2.1, abs=1e-12)

    def test_all_zero_rewards_center_advantages(self):
        rng = np.random.default_rng(1)
        eps = [make_episode(rng, 8), make_episode(rng, 12)]
        for ep in eps:
            ep.r1[...] = 0.0
            ep.r2[...] = 0.0
        batch = pad_for_unroll(eps, 1)
        stub = _StubValue(rng.uniform(0.5, 2.0, batch.size))
        G, A, V = returns_and_advantages(
            eps, batch, stub, RunningScaler(2), 0.9, 0.9, normalize=True
        )
        assert np.all(G == 0.0)
        assert abs(float(A.sum())) < 1e-9  # normalized to zero mean


class TestPadForUnroll:
    def test_seven_steps_pad_to_ten(self):
        rng = np.random.default_rng(2)
        batch = pad_for_unroll([make_episode(rng, 7, h_dim=3)], 5)
        assert batch.size == 10
        assert batch.mask.sum() == 7
        assert np.all(batch.mask[7:] == 0)
        assert batch.h0_policy.shape == (2, 3)

    def test_unroll_one_never_pads(self):
        rng = np.random.default_rng(3)
        for n in (1, 2, 7, 31):
            batch = pad_for_unroll([make_episode(rng, n)], 1)
            assert batch.size == n
            assert batch.mask_total == n

    def test_segment_starts_are_real_steps(self):
        rng = np.random.default_rng(4)
        ep = make_episode(rng, 23, h_dim=4)
        batch = pad_for_unroll([ep], 5)
        assert batch.size == 25
        starts = np.arange(0, 25, 5)
        assert np.all(starts < 23 + 2)  # all injected rows recorded, none filler
        assert np.array_equal(batch.h0_policy, ep.h_policy[np.arange(0, 25, 5)])

    def test_multi_episode_layout(self):
        rng = np.random.default_rng(5)
        eps = [make_episode(rng, 6, h_dim=2), make_episode(rng, 9, h_dim=2)]
        batch = pad_for_unroll(eps, 4)
        assert batch.size == 8 + 12
        assert batch.episode_slices == [(0, 6, 8), (8, 9, 12)]
        assert np.array_equal(batch.obs[:6], eps[0].obs)
        assert np.array_equal(batch.obs[8:17], eps[1].obs)


class TestSurrogateArithmetic:
    def test_clip_inactive_case(self):
        ratio = np.array([1.3])
        A = np.array([1.0])
        surr = ad.minimum(ratio * A, ad.clip(ratio, 0.8, 1.2) * A)
        assert surr[0] == pytest.approx(1.2)

    def test_pessimistic_bound_case(self):
        ratio = np.array([0.5])
        A = np.array([-1.0])
        surr = ad.minimum(ratio * A, ad.clip(ratio, 0.8, 1.2) * A)
        assert surr[0] == pytest.approx(-0.8)

    def test_unity_ratio_recovers_advantage(self):
        A = np.random.default_rng(0).normal(size=50)
        ratio = np.ones(50)
        surr = ad.minimum(ratio * A, ad.clip(ratio, 0.8, 1.2) * A)
        assert np.allclose(surr, A)

    def test_clip_bound_property(self):
        rng = np.random.default_rng(6)
        eps = 0.2
        ratio = rng.uniform(0.0, 3.0, 500)
        A = rng.normal(size=500)
        surr = ad.minimum(ratio * A, ad.clip(ratio, 1 - eps, 1 + eps) * A)
        assert np.all(surr <= (1 + eps) * np.abs(A) + 1e-12)


class TestAdaptClip:
    def test_on_target_unchanged(self):
        cfg = UpdateConfig()
        assert adapt_clip(0.001, 0.2, cfg) == 0.2

    def test_high_kl_shrinks(self):
        cfg = UpdateConfig()
        assert adapt_clip(0.004, 0.3, cfg) == pytest.approx(0.2)
        assert adapt_clip(0.004, 0.011, cfg) == cfg.eps_min

    def test_low_kl_grows_capped(self):
        cfg = UpdateConfig()
        assert adapt_clip(0.0001, 0.2, cfg) == pytest.approx(0.3)
        assert adapt_clip(0.0001, 0.45, cfg) == cfg.eps_max


def build_toy_setup(recurrent=False, seed=0):
    env = ToyPointMassEnv()
    rng = np.random.default_rng(seed)
    policy = Network.build(env.obs_dim, env.act_dim, "policy", recurrent, rng)
    value = Network.build(env.obs_dim, env.act_dim, "value", recurrent, rng)
    scaler = RunningScaler(env.obs_dim)
    return env, policy, value, scaler


class TestCollectRollouts:
    def test_log_probs_self_consistent(self):
        env, policy, value, scaler = build_toy_setup()
        eps = collect_rollouts(env, policy, value, scaler, 5, np.random.SeedSequence(1))
        for ep in eps:
            for i in range(ep.length):
                obs_n = scaler.transform(ep.obs[i])
                mean, _ = policy.act(obs_n)
                lp = float(nets.gaussian_log_prob(mean, policy.params["log_std"], ep.actions[i]))
                assert abs(lp - ep.log_probs[i]) <= 1e-12

    def test_identical_seeds_identical_rollouts(self):
        env1, policy, value, scaler = build_toy_setup()
        env2 = ToyPointMassEnv()
        a = collect_rollouts(env1, policy, value, scaler, 3, np.random.SeedSequence(7))
        b = collect_rollouts(env2, policy, value, scaler, 3, np.random.SeedSequence(7))
        for ea, eb in zip(a, b):
            assert np.array_equal(ea.obs, eb.obs)
            assert np.array_equal(ea.actions, eb.actions)
            assert np.array_equal(ea.log_probs, eb.log_probs)

    def test_recurrent_hidden_states_recorded(self):
        env, policy, value, scaler = build_toy_setup(recurrent=True)
        eps = collect_rollouts(env, policy, value, scaler, 2, np.random.SeedSequence(2))
        for ep in eps:
            assert ep.h_policy.shape == (ep.length, policy.spec.h2)
            assert ep.h_value.shape == (ep.length, value.spec.h2)
            assert np.all(ep.h_policy[0] == 0.0)  # hidden zeroed at episode start

    def test_batch_count(self):
        env, policy, value, scaler = build_toy_setup()
        eps = collect_rollouts(env, policy, value, scaler, 30, np.random.SeedSequence(3))
        assert len(eps) == 30


class TestPpoUpdate:
    def test_ratio_unity_and_zero_kl_before_any_step(self):
        env, policy, value, scaler = build_toy_setup(recurrent=True)
        eps = collect_rollouts(env, policy, value, scaler, 4, np.random.SeedSequence(5))
        cfg = UpdateConfig(unroll=5, policy_epochs=0, value_epochs=0)
        batch = pad_for_unroll(eps, 5)
        obs_n = scaler.transform(batch.obs)
        mu, _ = policy.forward(obs_n, batch.h0_policy, 5)
        lp = nets.gaussian_log_prob(ad.value_of(mu), policy.params["log_std"], batch.actions)
        ratio = np.exp(lp - batch.log_probs_old) * batch.mask + (1 - batch.mask)
        assert np.max(np.abs(ratio - 1.0)) <= 1e-9
        kl = nets.gaussian_kl(
            ad.value_of(mu), policy.params["log_std"], ad.value_of(mu), policy.params["log_std"]
        )
        assert np.max(np.abs(kl)) <= 1e-12

    def test_update_runs_and_reports(self):
        env, policy, value, scaler = build_toy_setup()
        eps = collect_rollouts(env, policy, value, scaler, 6, np.random.SeedSequence(6))
        cfg = UpdateConfig(policy_epochs=3, value_epochs=3)
        res = ppo_update(eps, policy, value, scaler, AdamState(policy.params), AdamState(value.params), cfg)
        assert np.isfinite(res.kl) and res.kl >= 0
        assert res.policy_epochs_run >= 1
        assert np.isfinite(res.policy_loss) and np.isfinite(res.value_loss)

    def test_masked_loss_matches_stepwise_reference(self):
        # padded, batched surrogate must equal the per-step computation over
        # real steps only
        env, policy, value, scaler = build_toy_setup(recurrent=True)
        eps = collect_rollouts(env, policy, value, scaler, 2, np.random.SeedSequence(9))
        eps[0] = ppo.EpisodeRollout(  # truncate to force padding
            obs=eps[0].obs[:7],
            actions=eps[0].actions[:7],
            log_probs=eps[0].log_probs[:7],
            r1=eps[0].r1[:7],
            r2=eps[0].r2[:7],
            h_policy=eps[0].h_policy[:7],
            h_value=eps[0].h_value[:7],
            cause="timeout",
            terminal_pos=1.0,
            terminal_vel=1.0,
            glideslope=0.0,
            fuel=0.0,
        )
        T = 5
        batch = pad_for_unroll(eps, T)
        obs_n = scaler.transform(batch.obs)
        rng = np.random.default_rng(0)
        A = rng.normal(size=batch.size) * batch.mask
        mu, _ = policy.forward(obs_n, batch.h0_policy, T)
        lp = nets.gaussian_log_prob(ad.value_of(mu), policy.params["log_std"], batch.actions)
        ratio = np.exp(lp - batch.log_probs_old)
        surr = ad.minimum(ratio * A, ad.clip(ratio, 0.8, 1.2) * A)
        batched_loss = float((surr * batch.mask).sum() / batch.mask.sum())

        # step-by-step reference over real steps
        terms = []
        cursor = 0
        for ep, (start, n, padded) in zip(eps, batch.episode_slices):
            h = np.zeros(policy.spec.h2)
            for i in range(n):
                mean, h = policy.act(scaler.transform(ep.obs[i]), h)
                lp_i = float(nets.gaussian_log_prob(mean, policy.params["log_std"], ep.actions[i]))
                r = np.exp(lp_i - ep.log_probs[i])
                a_i = A[start + i]
                terms.append(min(r * a_i, np.clip(r, 0.8, 1.2) * a_i))
        ref = float(np.sum(terms) / len(terms))
        assert batched_loss == pytest.approx(ref, abs=1e-12)

    def test_divergence_restores_parameters(self):
        env, policy, value, scaler = build_toy_setup()
        eps = collect_rollouts(env, policy, value, scaler, 2, np.random.SeedSequence(10))
        eps[0].log_probs[0] = -np.inf  # ratio blows up to inf
        before = policy.copy_params()
        cfg = UpdateConfig(policy_epochs=2, value_epochs=1)
        with pytest.raises(NumericalDivergence):
            ppo_update(eps, policy, value, scaler, AdamState(policy.params), AdamState(value.params), cfg)
        for k in before:
            assert np.array_equal(policy.params[k], before[k])

    def test_value_regression_loss_decreases(self):
        rng = np.random.default_rng(3)
        value = Network.build(3, 2, "value", False, rng)
        obs = rng.normal(size=(256, 3))
        target = np.sin(obs @ np.array([1.0, -2.0, 0.5]))
        opt = AdamState(value.params)
        losses = []
        for _ in range(100):
            vt = {k: ad.Tensor(v, requires_grad=True) for k, v in value.params.items()}
            out, _ = nets.forward(vt, value.spec, obs)
            err = out.reshape((256,)) - target
            loss = (err * err).sum() / 256.0
            loss.backward()
            ppo.adam_step(value.params, {k: t.grad for k, t in vt.items()}, opt, 1e-3)
            losses.append(loss.item())
        assert losses[-1] < 0.5 * losses[0]
        assert all(b < a for a, b in zip(losses[:-1], losses[1:]))


class TestImprovementSmoke:
    def test_toy_training_improves(self):
        # the full loop: smoothed batch returns rise monotonically
        env, policy, value, scaler = build_toy_setup(seed=11)
        cfg = UpdateConfig(
            policy_epochs=20,
            value_epochs=10,
            episodes_per_batch=20,
            gamma1=0.99,
            gamma2=0.95,
            minibatch_steps=256,
        )
        opt_pi = AdamState(policy.params)
        opt_v = AdamState(value.params)
        master = np.random.SeedSequence(42)
        warmup = collect_rollouts(env, policy, value, scaler, 10, master.spawn(1)[0])
        scaler.update(np.vstack([ep.obs for ep in warmup]))
        returns = []
        for update in range(60):
            eps = collect_rollouts(
                env, policy, value, scaler, cfg.episodes_per_batch, master.spawn(1)[0]
            )
            res = ppo_update(eps, policy, value, scaler, opt_pi, opt_v, cfg)
            cfg.clip_eps = res.eps_next
            returns.append(res.mean_return)
            scaler.update(np.vstack([ep.obs for ep in eps]))
        ma = np.convolve(returns, np.ones(5) / 5, mode="valid")
        # 5-update moving average, sampled each 10 updates, rises monotonically
        sampled = ma[::10]
        assert np.all(np.diff(sampled) > 0)
        assert ma[-1] > ma[0] + 30.0
