"""Proximal policy optimization with recurrent-aware rollout storage.

Specifics that matter here:

* rewards arrive in two channels (terminal bonus r1, dense shaping r2) and
  are discounted with separate rates when forming returns and advantages;
* each rollout step records the pre-step hidden state of both networks, so
  update-time forward passes can unroll whole batches of segments in
  parallel with the recorded states injected at segment starts;
* training batches are never shuffled (that would destroy the temporal
  structure) and episodes are padded per segment with masked filler steps;
* the clip range adapts between updates to hold the measured policy KL near
  a fixed target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nets
from .nets import Network, RunningScaler


class NumericalDivergence(Exception):
    """A non-finite loss appeared; parameters were restored to the last good set."""


@dataclass
class UpdateConfig:
    gamma1: float = 0.996
    gamma2: float = 0.95
    clip_eps: float = 0.2
    kl_target: float = 0.001
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    policy_epochs: int = 20
    value_epochs: int = 10
    episodes_per_batch: int = 30
    unroll: int = 1
    minibatch_steps: int = 1024  # per-gradient-step slice, taken in order
    kl_stop_factor: float = 4.0
    eps_min: float = 0.01
    eps_max: float = 0.5
    adapt_factor: float = 1.5
    normalize_advantages: bool = True

    def validate(self):
        for g in (self.gamma1, self.gamma2):
            if not 0.0 < g < 1.0:
                raise ValueError("discounts must lie in (0, 1)")
        if not 0.0 < self.clip_eps <= 0.5:
            raise ValueError("clip_eps must lie in (0, 0.5]")
        if self.unroll < 1:
            raise ValueError("unroll must be >= 1")
        if self.minibatch_steps < 1:
            raise ValueError("minibatch_steps must be >= 1")


@dataclass
class EpisodeRollout:
    """One complete episode as recorded during collection."""

    obs: np.ndarray          # (n, obs_dim), raw (unnormalized)
    actions: np.ndarray      # (n, act_dim)
    log_probs: np.ndarray    # (n,), behavior-policy log densities
    r1: np.ndarray           # (n,), terminal-bonus channel
    r2: np.ndarray           # (n,), shaping channel
    h_policy: np.ndarray | None  # (n, h2) pre-step hidden states
    h_value: np.ndarray | None
    cause: str
    terminal_pos: float
    terminal_vel: float
    glideslope: float
    fuel: float

    @property
    def length(self) -> int:
        return self.obs.shape[0]

    @property
    def ret(self) -> float:
        return float(self.r1.sum() + self.r2.sum())


def collect_rollouts(
    env,
    policy: Network,
    value: Network | None,
    scaler: RunningScaler,
    n_episodes: int,
    seed_seq: np.random.SeedSequence,
    stochastic: bool = True,
) -> list[EpisodeRollout]:
    """Run ``n_episodes`` complete episodes under the current policy.

    Each episode gets its own RNG streams derived from ``seed_seq`` (one for
    the environment, one for action noise), so results do not depend on
    collection order. A failing episode is skipped rather than aborting the
    whole batch.
    """
    episodes = []
    errors = []
    for child in seed_seq.spawn(n_episodes):
        env_seed, act_seed = child.spawn(2)
        try:
            episodes.append(
                _run_rollout_episode(
                    env,
                    policy,
                    value,
                    scaler,
                    np.random.default_rng(env_seed),
                    np.random.default_rng(act_seed),
                    stochastic,
                )
            )
        except Exception as exc:  # noqa: BLE001 - isolate per-episode faults
            errors.append(exc)
    if not episodes:
        raise RuntimeError(f"all {n_episodes} rollout episodes failed; first: {errors[0]}")
    return episodes


def _run_rollout_episode(env, policy, value, scaler, rng_env, rng_act, stochastic):
    obs = env.reset(rng_env)
    h_pi = policy.zero_hidden()
    h_v = value.zero_hidden() if value is not None else None
    log_std = policy.params.get("log_std")
    rows_obs, rows_act, rows_lp, rows_r1, rows_r2 = [], [], [], [], []
    rows_hpi, rows_hv = [], []
    out = None
    while True:
        obs_n = scaler.transform(obs)
        if h_pi is not None:
            rows_hpi.append(h_pi)
        if h_v is not None:
            rows_hv.append(h_v)
        mean, h_pi = policy.act(obs_n, h_pi)
        if value is not None and h_v is not None:
            _, h_v = value.act(obs_n, h_v)
        if stochastic:
            action, lp = nets.sample_action(mean, log_std, rng_act)
        else:
            action, lp = mean, float(nets.gaussian_log_prob(mean, log_std, mean))
        out = env.step(action)
        rows_obs.append(obs)
        rows_act.append(action)
        rows_lp.append(lp)
        rows_r1.append(out.r1)
        rows_r2.append(out.r2)
        obs = out.obs
        if out.done:
            break
    return EpisodeRollout(
        obs=np.array(rows_obs),
        actions=np.array(rows_act),
        log_probs=np.array(rows_lp),
        r1=np.array(rows_r1),
        r2=np.array(rows_r2),
        h_policy=np.array(rows_hpi) if rows_hpi else None,
        h_value=np.array(rows_hv) if rows_hv else None,
        cause=out.cause or "unknown",
        terminal_pos=out.info.get("terminal_pos", float("nan")),
        terminal_vel=out.info.get("terminal_vel", float("nan")),
        glideslope=out.info.get("glideslope", float("nan")),
        fuel=out.info.get("fuel", 0.0),
    )


def dual_discount_returns(
    r1: np.ndarray, r2: np.ndarray, gamma1: float, gamma2: float
) -> np.ndarray:
    """Per-step returns with each reward channel discounted at its own rate."""
    n = len(r1)
    out = np.empty(n)
    g1 = 0.0
    g2 = 0.0
    for t in range(n - 1, -1, -1):
        g1 = r1[t] + gamma1 * g1
        g2 = r2[t] + gamma2 * g2
        out[t] = g1 + g2
    return out


@dataclass
class Batch:
    """Episodes concatenated in order, padded so segments divide evenly."""

    obs: np.ndarray
    actions: np.ndarray
    log_probs_old: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    mask: np.ndarray            # 1.0 real step, 0.0 filler
    h0_policy: np.ndarray | None  # (segments, h2) injected states
    h0_value: np.ndarray | None
    unroll: int
    episode_slices: list[tuple[int, int, int]] = field(default_factory=list)
    # (padded start, real length, padded length) per episode

    @property
    def size(self) -> int:
        return self.obs.shape[0]

    @property
    def mask_total(self) -> float:
        return float(self.mask.sum())


def pad_for_unroll(episodes: list[EpisodeRollout], T: int) -> Batch:
    """Concatenate episodes, padding each to a multiple of ``T`` steps.

    Filler steps repeat the episode's final observation, carry zero
    action/reward, and are masked out of every loss and statistic. The
    injected hidden state for each T-step segment is the recorded state at
    the segment's first (always real) step.
    """
    if T < 1:
        raise ValueError("unroll must be >= 1")
    obs_p, act_p, lp_p, r1_p, r2_p, mask_p = [], [], [], [], [], []
    h_pi_p, h_v_p = [], []
    slices = []
    cursor = 0
    for ep in episodes:
        n = ep.length
        pad = (-n) % T
        obs_p.append(ep.obs)
        act_p.append(ep.actions)
        lp_p.append(ep.log_probs)
        r1_p.append(ep.r1)
        r2_p.append(ep.r2)
        mask_p.append(np.ones(n))
        if pad:
            obs_p.append(np.repeat(ep.obs[-1:], pad, axis=0))
            act_p.append(np.zeros((pad, ep.actions.shape[1])))
            lp_p.append(np.zeros(pad))
            r1_p.append(np.zeros(pad))
            r2_p.append(np.zeros(pad))
            mask_p.append(np.zeros(pad))
        starts = np.arange(0, n + pad, T)
        if ep.h_policy is not None:
            h_pi_p.append(ep.h_policy[starts])
        if ep.h_value is not None:
            h_v_p.append(ep.h_value[starts])
        slices.append((cursor, n, n + pad))
        cursor += n + pad
    return Batch(
        obs=np.vstack(obs_p),
        actions=np.vstack(act_p),
        log_probs_old=np.concatenate(lp_p),
        r1=np.concatenate(r1_p),
        r2=np.concatenate(r2_p),
        mask=np.concatenate(mask_p),
        h0_policy=np.vstack(h_pi_p) if h_pi_p else None,
        h0_value=np.vstack(h_v_p) if h_v_p else None,
        unroll=T,
        episode_slices=slices,
    )


def returns_and_advantages(
    episodes: list[EpisodeRollout],
    batch: Batch,
    value: Network,
    scaler: RunningScaler,
    gamma1: float,
    gamma2: float,
    normalize: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(padded returns, advantages, value predictions) for the batch.

    Returns use the dual-discount recursion; advantages subtract the current
    value prediction and are normalized to zero mean / unit std over real
    steps. Filler steps carry zeros everywhere.
    """
    G = np.zeros(batch.size)
    for ep, (start, n, _padded) in zip(episodes, batch.episode_slices):
        G[start : start + n] = dual_discount_returns(ep.r1, ep.r2, gamma1, gamma2)
    obs_n = scaler.transform(batch.obs)
    v_out, _ = value.forward(obs_n, batch.h0_value, batch.unroll)
    V = ad.value_of(v_out).ravel()
    A = (G - V) * batch.mask
    if normalize:
        total = batch.mask_total
        mean = A.sum() / total
        var = ((A - mean) ** 2 * batch.mask).sum() / total
        A = (A - mean) / (np.sqrt(var) + 1e-8) * batch.mask
    return G, A, V


class AdamState:
    """Per-parameter first/second moment accumulators."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            continue
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def adapt_clip(measured_kl: float, eps: float, cfg: UpdateConfig) -> float:
    """Nudge the clip range to keep the measured KL near the target."""
    if measured_kl > 2.0 * cfg.kl_target:
        return max(eps / cfg.adapt_factor, cfg.eps_min)
    if measured_kl < cfg.kl_target / 2.0:
        return min(eps * cfg.adapt_factor, cfg.eps_max)
    return eps


@dataclass
class UpdateResult:
    kl: float
    eps_next: float
    policy_loss: float
    value_loss: float
    clip_fraction: float
    policy_epochs_run: int
    mean_return: float


def _minibatch_ranges(n_segments: int, unroll: int, minibatch_steps: int):
    """Contiguous, in-order segment ranges of roughly ``minibatch_steps`` steps."""
    seg_per_mb = max(1, minibatch_steps // unroll)
    return [(s, min(s + seg_per_mb, n_segments)) for s in range(0, n_segments, seg_per_mb)]


def ppo_update(
    episodes: list[EpisodeRollout],
    policy: Network,
    value: Network,
    scaler: RunningScaler,
    opt_policy: AdamState,
    opt_value: AdamState,
    cfg: UpdateConfig,
) -> UpdateResult:
    """One PPO update: clipped-surrogate ascent then value regression.

    Each epoch sweeps the batch once in contiguous, unshuffled minibatches
    (segment-aligned so recurrent hidden injection stays valid), with one
    Adam step per minibatch. Policy epochs early-stop when the KL against
    the behavior policy exceeds ``kl_stop_factor * kl_target``.
    """
    cfg.validate()
    if policy.spec.recurrent != value.spec.recurrent:
        raise ValueError("policy and value networks must share recurrence")
    T = cfg.unroll if policy.spec.recurrent else 1
    batch = pad_for_unroll(episodes, T)
    obs_n = scaler.transform(batch.obs)
    G, A, _ = returns_and_advantages(
        episodes, batch, value, scaler, cfg.gamma1, cfg.gamma2, cfg.normalize_advantages
    )
    mask = batch.mask
    total = batch.mask_total
    n_segments = batch.size // T
    ranges = _minibatch_ranges(n_segments, T, cfg.minibatch_steps)

    mu_old = ad.value_of(policy.forward(obs_n, batch.h0_policy, T)[0])
    ls_old = policy.params["log_std"].copy()
    snap_policy = policy.copy_params()
    snap_value = value.copy_params()

    def fail(msg):
        policy.set_params(snap_policy)
        value.set_params(snap_value)
        raise NumericalDivergence(msg)

    kl = 0.0
    policy_loss = 0.0
    clip_fraction = 0.0
    epochs_run = 0
    lo, hi = 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps
    for _ in range(cfg.policy_epochs):
        loss_acc = 0.0
        clip_acc = 0.0
        for s0, s1 in ranges:
            r0, r1_ = s0 * T, s1 * T
            mb_mask = mask[r0:r1_]
            mb_total = float(mb_mask.sum())
            if mb_total == 0.0:
                continue
            pt = {k: ad.Tensor(v, requires_grad=True) for k, v in policy.params.items()}
            h0 = None if batch.h0_policy is None else batch.h0_policy[s0:s1]
            mean_t, _ = nets.forward(pt, policy.spec, obs_n[r0:r1_], h0, T)
            lp = nets.gaussian_log_prob(mean_t, pt["log_std"], batch.actions[r0:r1_])
            ratio = ad.exp(lp - batch.log_probs_old[r0:r1_])
            a_mb = A[r0:r1_]
            surrogate = ad.minimum(ratio * a_mb, ad.clip(ratio, lo, hi) * a_mb)
            loss = -(surrogate * mb_mask).sum() / mb_total
            if not np.isfinite(loss.item()):
                fail("policy loss is not finite")
            loss.backward()
            adam_step(policy.params, {k: t.grad for k, t in pt.items()}, opt_policy, cfg.lr_policy)
            loss_acc += loss.item() * mb_total
            clip_acc += float(((np.abs(ad.value_of(ratio) - 1.0) > cfg.clip_eps) * mb_mask).sum())
        policy_loss = loss_acc / total
        clip_fraction = clip_acc / total
        epochs_run += 1
        mu_new = ad.value_of(policy.forward(obs_n, batch.h0_policy, T)[0])
        if not np.all(np.isfinite(mu_new)):
            fail("policy outputs are not finite")
        per_sample = nets.gaussian_kl(mu_old, ls_old, mu_new, policy.params["log_std"])
        kl = float((per_sample * mask).sum() / total)
        if kl > cfg.kl_stop_factor * cfg.kl_target:
            break

    value_loss = 0.0
    for _ in range(cfg.value_epochs):
        loss_acc = 0.0
        for s0, s1 in ranges:
            r0, r1_ = s0 * T, s1 * T
            mb_mask = mask[r0:r1_]
            mb_total = float(mb_mask.sum())
            if mb_total == 0.0:
                continue
            vt = {k: ad.Tensor(v, requires_grad=True) for k, v in value.params.items()}
            h0 = None if batch.h0_value is None else batch.h0_value[s0:s1]
            v_t, _ = nets.forward(vt, value.spec, obs_n[r0:r1_], h0, T)
            err = v_t.reshape((r1_ - r0,)) - G[r0:r1_]
            loss = ((err * err) * mb_mask).sum() / mb_total
            if not np.isfinite(loss.item()):
                fail("value loss is not finite")
            loss.backward()
            adam_step(value.params, {k: t.grad for k, t in vt.items()}, opt_value, cfg.lr_value)
            loss_acc += loss.item() * mb_total
        value_loss = loss_acc / total

    mean_return = float(np.mean([ep.ret for ep in episodes]))
    return UpdateResult(
        kl=kl,
        eps_next=adapt_clip(kl, cfg.clip_eps, cfg),
        policy_loss=policy_loss,
        value_loss=value_loss,
        clip_fraction=clip_fraction,
        policy_epochs_run=epochs_run,
        mean_return=mean_return,
    )
