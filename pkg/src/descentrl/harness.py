"""Run orchestration: seeded training, Monte Carlo evaluation, reports.

Everything an experiment produces lands under one run directory as CSV and
checkpoint files; every number in a report traces back to a per-episode CSV
row, and a master seed fully determines environment draws, network
initialization, action noise, and therefore every output byte.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from . import scenarios
from .drdv import DrdvConfig, DrdvPolicy, default_drdv_config
from .envs import CAUSE_SUCCESS, LanderEnv
from .nets import Network, RunningScaler, load_checkpoint, save_checkpoint
from .ppo import (
    AdamState,
    NumericalDivergence,
    UpdateConfig,
    collect_rollouts,
    ppo_update,
)

POLICY_KINDS = ("drdv", "mlp", "rnn")


class MissingRun(Exception):
    """A comparison referenced an evaluation that has not been produced."""


@dataclass
class RunConfig:
    scenario: str = "mars"
    policy: str = "mlp"
    unroll: int = 1
    seed: int = 0
    updates: int = 100
    eval_episodes: int = 1000
    episodes_per_batch: int = 30
    checkpoint_every: int = 50
    out_dir: str = "runs"
    env_overrides: dict = field(default_factory=dict)
    train_overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.policy not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.policy!r}")
        if self.unroll < 1:
            raise ValueError("unroll must be >= 1")
        if self.eval_episodes < 1:
            raise ValueError("eval episode count must be >= 1")
        if self.updates < 0:
            raise ValueError("training budget must be >= 0")

    @property
    def label(self) -> str:
        return self.policy if self.policy != "rnn" else f"rnn{self.unroll}"

    def run_dir(self) -> Path:
        return Path(self.out_dir) / f"{self.scenario}_{self.label}_s{self.seed}"


def _seed_for(master: int, *tags: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((int(master),) + tuple(int(t) for t in tags))


_TRAIN_RUN_KEYS = {"updates", "episodes_per_batch", "eval_episodes", "checkpoint_every", "unroll"}


def _apply_train_overrides(run: RunConfig, ucfg: UpdateConfig) -> None:
    known = {f.name: f for f in dc_fields(UpdateConfig)}
    for key, raw in run.train_overrides.items():
        if key in _TRAIN_RUN_KEYS:
            setattr(run, key, int(raw))
        elif key in known:
            cur = getattr(ucfg, key)
            setattr(ucfg, key, type(cur)(float(raw)) if not isinstance(cur, bool) else raw)
        else:
            raise ValueError(f"unknown [train] config key {key!r}")
    ucfg.episodes_per_batch = run.episodes_per_batch
    ucfg.unroll = run.unroll


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def build_networks(env, recurrent: bool, rng: np.random.Generator) -> tuple[Network, Network]:
    policy = Network.build(env.obs_dim, env.act_dim, "policy", recurrent, rng)
    value = Network.build(env.obs_dim, env.act_dim, "value", recurrent, rng)
    return policy, value


LEARNING_CURVE_HEADER = [
    "update", "episodes", "mean_return",
    "pos_mean", "pos_std", "pos_max",
    "vel_mean", "vel_std", "vel_max",
    "gs_mean", "gs_min", "fuel_mean", "success_rate",
    "kl", "clip_eps", "policy_loss", "value_loss", "policy_epochs", "steps",
]


def _batch_row(update: int, eps, res, clip_eps: float) -> list:
    pos = np.array([e.terminal_pos for e in eps])
    vel = np.array([e.terminal_vel for e in eps])
    gs = np.array([e.glideslope for e in eps])
    fuel = np.array([e.fuel for e in eps])
    succ = np.mean([e.cause == CAUSE_SUCCESS for e in eps])
    return [
        update, len(eps), res.mean_return,
        float(pos.mean()), float(pos.std(ddof=1)) if len(eps) > 1 else 0.0, float(pos.max()),
        float(vel.mean()), float(vel.std(ddof=1)) if len(eps) > 1 else 0.0, float(vel.max()),
        float(gs.mean()), float(gs.min()), float(fuel.mean()), float(succ),
        res.kl, clip_eps, res.policy_loss, res.value_loss, res.policy_epochs_run,
        int(sum(e.length for e in eps)),
    ]


@dataclass
class TrainResult:
    run_dir: Path
    final_checkpoint: Path
    curve_path: Path
    updates_run: int
    diverged_at: int | None = None


def train(run: RunConfig) -> TrainResult:
    """Full PPO training loop with periodic checkpoints and a learning curve."""
    run.validate()
    if run.policy == "drdv":
        raise ValueError("the drdv baseline has no trainable parameters")
    run_dir = run.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    env = scenarios.make_env(run.scenario, run.env_overrides)
    recurrent = run.policy == "rnn"
    ucfg = UpdateConfig(
        unroll=run.unroll,
        episodes_per_batch=run.episodes_per_batch,
        gamma1=env.config.gamma1,
        gamma2=env.config.gamma2,
    )
    _apply_train_overrides(run, ucfg)

    rng_init = np.random.default_rng(_seed_for(run.seed, 0xD0))
    policy, value = build_networks(env, recurrent, rng_init)
    bias = getattr(env.config, "init_thrust_bias", 0.0)
    if bias and env.act_dim == 3:
        policy.params["b4"][2] += bias  # start near an upward mid-band command
    scaler = RunningScaler(env.obs_dim)
    meta = {"scenario": run.scenario, "policy": run.policy, "unroll": run.unroll,
            "seed": run.seed, "update": 0}

    def checkpoint(tag, update):
        path = run_dir / f"ckpt_{tag}.npz"
        save_checkpoint(path, policy, value, scaler, {**meta, "update": update})
        return path

    checkpoint("000000", 0)
    curve_path = run_dir / "learning_curve.csv"
    rows: list[list] = []
    diverged_at = None
    updates_run = 0
    if run.updates > 0:
        warmup = collect_rollouts(
            env, policy, value, scaler, run.episodes_per_batch,
            _seed_for(run.seed, 0xA0), stochastic=True,
        )
        scaler.update(np.vstack([e.obs for e in warmup]))
        opt_pi = AdamState(policy.params)
        opt_v = AdamState(value.params)
        for update in range(1, run.updates + 1):
            eps = collect_rollouts(
                env, policy, value, scaler, run.episodes_per_batch,
                _seed_for(run.seed, 0xB0, update), stochastic=True,
            )
            try:
                res = ppo_update(eps, policy, value, scaler, opt_pi, opt_v, ucfg)
            except NumericalDivergence:
                diverged_at = update
                break
            rows.append(_batch_row(update, eps, res, ucfg.clip_eps))
            ucfg.clip_eps = res.eps_next
            scaler.update(np.vstack([e.obs for e in eps]))
            updates_run = update
            if run.checkpoint_every and update % run.checkpoint_every == 0:
                checkpoint(f"{update:06d}", update)
    _write_csv(curve_path, LEARNING_CURVE_HEADER, rows)
    final = checkpoint("final", updates_run)
    return TrainResult(run_dir, final, curve_path, updates_run, diverged_at)


class NetController:
    """Deterministic controller: feeds the policy mean back to the env."""

    def __init__(self, policy: Network, scaler: RunningScaler | None):
        self.policy = policy
        self.scaler = scaler
        self.h = None

    def begin(self, env) -> None:
        self.h = self.policy.zero_hidden()

    def step(self, env, obs):
        x = self.scaler.transform(obs) if self.scaler is not None else obs
        action, self.h = self.policy.act(x, self.h)
        return env.step(action)


class DrdvController:
    """Classical baseline with its granted ground-truth access."""

    def __init__(self, config: DrdvConfig):
        self.config = config
        self.law = DrdvPolicy(config)

    def begin(self, env) -> None:
        if not isinstance(env, LanderEnv):
            raise ValueError("the drdv baseline only flies lander scenarios")
        if self.config.use_true_gravity:
            self.config.gravity = env.body.g.copy()
        self.law.begin_episode(env.state.r, env.state.v, env.state.m)

    def step(self, env, obs):
        T = self.law.thrust(env.state.r, env.state.v, env.config.dt)
        return env.step_thrust(T)


def make_controller(run: RunConfig, checkpoint_path=None):
    if run.policy == "drdv":
        cfg_env = scenarios.scenario_config(run.scenario)
        if run.env_overrides:
            scenarios.apply_overrides(cfg_env, run.env_overrides)
        return DrdvController(default_drdv_config(cfg_env))
    if checkpoint_path is None:
        raise MissingRun(f"policy {run.label!r} needs a trained checkpoint")
    policy, _value, scaler, _meta = load_checkpoint(checkpoint_path)
    return NetController(policy, scaler)


def run_episode(env, controller, rng_env: np.random.Generator) -> dict:
    obs = env.reset(rng_env)
    controller.begin(env)
    steps = 0
    ret = 0.0
    while True:
        out = controller.step(env, obs)
        obs = out.obs
        steps += 1
        ret += out.reward
        if out.done:
            return {
                "terminal_pos": out.info["terminal_pos"],
                "terminal_vel": out.info["terminal_vel"],
                "glideslope": out.info["glideslope"],
                "fuel": out.info["fuel"],
                "cause": out.cause,
                "steps": steps,
                "return": ret,
            }


EVAL_HEADER = [
    "episode", "terminal_pos", "terminal_vel", "glideslope",
    "fuel", "cause", "steps", "return",
]


@dataclass
class StatsTable:
    """Monte Carlo summary in the shape of the experiment tables."""

    episodes: int
    pos_mean: float
    pos_std: float
    pos_max: float
    vel_mean: float
    vel_std: float
    vel_max: float
    gs_mean: float
    gs_std: float
    gs_min: float
    fuel_mean: float
    fuel_std: float
    fuel_max: float
    success_rate: float

    @classmethod
    def from_rows(cls, rows: list[dict]) -> "StatsTable":
        pos = np.array([r["terminal_pos"] for r in rows], dtype=float)
        vel = np.array([r["terminal_vel"] for r in rows], dtype=float)
        gs = np.array([r["glideslope"] for r in rows], dtype=float)
        fuel = np.array([r["fuel"] for r in rows], dtype=float)
        n = len(rows)
        std = lambda x: float(x.std(ddof=1)) if n > 1 else 0.0  # noqa: E731
        return cls(
            episodes=n,
            pos_mean=float(pos.mean()), pos_std=std(pos), pos_max=float(pos.max()),
            vel_mean=float(vel.mean()), vel_std=std(vel), vel_max=float(vel.max()),
            gs_mean=float(gs.mean()), gs_std=std(gs), gs_min=float(gs.min()),
            fuel_mean=float(fuel.mean()), fuel_std=std(fuel), fuel_max=float(fuel.max()),
            success_rate=float(np.mean([r["cause"] == CAUSE_SUCCESS for r in rows])),
        )


@dataclass
class EvalResult:
    stats: StatsTable
    csv_path: Path
    rows: list[dict]


def evaluate(run: RunConfig, checkpoint_path=None) -> EvalResult:
    """Fly ``eval_episodes`` deterministic episodes and tabulate statistics.

    Episode i's environment stream depends only on (seed, i), so different
    policies evaluated with the same run seed see identical scenario draws.
    """
    run.validate()
    env = scenarios.make_env(run.scenario, run.env_overrides)
    controller = make_controller(run, checkpoint_path)
    rows = []
    for i in range(run.eval_episodes):
        rng_env = np.random.default_rng(_seed_for(run.seed, 0xE1, i))
        rows.append(run_episode(env, controller, rng_env))
    run_dir = run.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    csv_path = run_dir / "evaluation.csv"
    _write_csv(
        csv_path,
        EVAL_HEADER,
        [
            [i, r["terminal_pos"], r["terminal_vel"], r["glideslope"],
             r["fuel"], r["cause"], r["steps"], r["return"]]
            for i, r in enumerate(rows)
        ],
    )
    return EvalResult(StatsTable.from_rows(rows), csv_path, rows)


COMPARE_HEADER = [
    "policy", "episodes",
    "pos_mean", "pos_std", "pos_max",
    "vel_mean", "vel_std", "vel_max",
    "gs_mean", "gs_std", "gs_min",
    "fuel_mean", "fuel_std", "fuel_max", "success_rate",
]


def _policy_sort_key(label: str) -> tuple:
    if label == "drdv":
        return (0, 0)
    if label == "mlp":
        return (1, 0)
    if label.startswith("rnn"):
        return (2, int(label[3:] or 1))
    return (3, 0)


def load_eval_rows(csv_path) -> list[dict]:
    path = Path(csv_path)
    if not path.exists():
        raise MissingRun(f"no evaluation at {path}")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        rows = []
        for rec in reader:
            rows.append(
                {
                    "terminal_pos": float(rec["terminal_pos"]),
                    "terminal_vel": float(rec["terminal_vel"]),
                    "glideslope": float(rec["glideslope"]),
                    "fuel": float(rec["fuel"]),
                    "cause": rec["cause"],
                    "steps": int(rec["steps"]),
                    "return": float(rec["return"]),
                }
            )
    return rows


def compare(scenario: str, evaluations: dict[str, Path], out_path) -> Path:
    """Combine per-policy evaluation CSVs into one table.

    ``evaluations`` maps policy label (drdv, mlp, rnn20, ...) to its
    per-episode CSV. Rows are ordered baseline first, then mlp, then rnn by
    ascending unroll.
    """
    labels = sorted(evaluations, key=_policy_sort_key)
    rows = []
    for label in labels:
        stats = StatsTable.from_rows(load_eval_rows(evaluations[label]))
        rows.append(
            [
                label, stats.episodes,
                stats.pos_mean, stats.pos_std, stats.pos_max,
                stats.vel_mean, stats.vel_std, stats.vel_max,
                stats.gs_mean, stats.gs_std, stats.gs_min,
                stats.fuel_mean, stats.fuel_std, stats.fuel_max,
                stats.success_rate,
            ]
        )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out_path, COMPARE_HEADER, rows)
    return out_path


def characterize_altimeter(
    seed: int,
    elevations,
    samples: int,
    out_path,
    terrain=None,
) -> Path:
    """Altimeter error table on synthetic terrain (or a supplied map)."""
    from . import terrain as terrain_mod

    if terrain is None:
        terrain = terrain_mod.synthetic_dtm(seed)
    rng = np.random.default_rng(_seed_for(seed, 0xA17))
    rows = terrain_mod.characterize_error(terrain, rng, elevations, samples)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out_path,
        ["elevation_m", "mean_abs_err_m", "std_err_m", "max_abs_err_m", "miss_pct", "samples"],
        [[r.elevation, r.mean_abs, r.std, r.max_abs, r.miss_pct, r.samples] for r in rows],
    )
    return out_path
