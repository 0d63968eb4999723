"""Powered-descent episode state machines.

One ``LanderEnv`` class covers the Mars landing family (nominal,
engine-failure, high-mass-variation, altimeter observations) and the
asteroid landing: scenario differences live entirely in ``EnvConfig``.
Rewards are split into two channels so the trainer can discount them
separately: ``r1`` carries the sparse terminal bonus/penalty and ``r2`` the
dense shaping terms (target-velocity tracking error, control effort, and a
small constant progress bonus).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .dynamics import (
    BodyParams,
    DepletedMass,
    LanderState,
    ThrustCommand,
    sample_disturbance,
    step_dynamics,
)
from . import terrain as terrain_mod

TGO_CAP = 1e4  # s, sentinel for degenerate closing geometry


class ConfigError(Exception):
    pass


@dataclass
class EnvConfig:
    """Full scenario description; every quantity is overridable by key."""

    scenario: str = "mars"
    # initial condition ranges, axes ordered (downrange, crossrange, elevation)
    pos_min: np.ndarray = field(default_factory=lambda: np.array([0.0, -1000.0, 2300.0]))
    pos_max: np.ndarray = field(default_factory=lambda: np.array([2000.0, 1000.0, 2400.0]))
    vel_min: np.ndarray = field(default_factory=lambda: np.array([-70.0, -30.0, -90.0]))
    vel_max: np.ndarray = field(default_factory=lambda: np.array([-10.0, 30.0, -70.0]))
    # body randomization
    g_nominal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -3.7114]))
    g_scale_lo: float = 0.95
    g_scale_hi: float = 1.05
    g_min: np.ndarray | None = None  # componentwise gravity range (asteroid mode)
    g_max: np.ndarray | None = None
    omega_min: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega_max: np.ndarray = field(default_factory=lambda: np.zeros(3))
    srp_min: np.ndarray = field(default_factory=lambda: np.zeros(3))
    srp_max: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mass_lo: float = 1800.0
    mass_hi: float = 2200.0
    dry_mass: float = 200.0
    isp: float = 225.0
    r_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    f_env_sigma: np.ndarray = field(default_factory=lambda: np.array([100.0, 100.0, 100.0]))
    # thrust model
    thrust_mode: str = "band"  # "band" (magnitude in [t_min, t_max]) or "pulsed"
    t_min: float = 2000.0
    t_max: float = 15000.0
    thrust_gain: float = 2.0   # sigmoid steepness of the |action| -> magnitude map
    init_thrust_bias: float = 1.0  # initial policy mean along +z (hover-ish start)
    # engine failure model
    p_fail: float = 0.0
    fail_lateral_factor: float = 2.0
    fail_vertical_factor: float = 1.5
    # reward weights
    alpha: float = -0.01
    beta: float = -0.05
    gamma_const: float = 0.01
    eta: float = 10.0
    depletion_penalty: float = -10.0
    # shaping velocity field
    shaping: str = "piecewise"  # "piecewise" (Mars) or "direct" (asteroid)
    v_o: float | None = None    # None: captured per episode as initial speed
    tau1: float = 20.0
    tau2: float = 100.0
    cutover_alt: float = 15.0
    descent_rate_high: float = 2.0
    descent_rate_low: float = 1.0
    # terminal limits
    r_lim: float = 5.0
    v_lim: float = 2.0
    gs_lim: float = 5.0
    # reward-channel discounts (consumed by the trainer)
    gamma1: float = 0.996
    gamma2: float = 0.95
    # integration / episode
    dt: float = 0.2
    max_steps: int = 600
    # observation
    obs_mode: str = "state"  # "state" | "altimeter" | "altimeter_target"
    terrain_seed: int = 1
    dtm_target: np.ndarray = field(default_factory=lambda: np.array([4000.0, 4000.0, 400.0]))
    range_scale: float = 5000.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (list, tuple)):
                setattr(self, f.name, np.asarray(v, dtype=float))

    def validate(self) -> None:
        def rng_ok(lo, hi, what):
            if np.any(np.asarray(lo) > np.asarray(hi)):
                raise ConfigError(f"inverted range for {what}")

        rng_ok(self.pos_min, self.pos_max, "position")
        rng_ok(self.vel_min, self.vel_max, "velocity")
        rng_ok(self.omega_min, self.omega_max, "omega")
        rng_ok(self.srp_min, self.srp_max, "srp")
        rng_ok(self.mass_lo, self.mass_hi, "mass")
        rng_ok(self.g_scale_lo, self.g_scale_hi, "gravity scale")
        if (self.g_min is None) != (self.g_max is None):
            raise ConfigError("g_min and g_max must be set together")
        if self.g_min is not None:
            rng_ok(self.g_min, self.g_max, "gravity")
        if self.t_min > self.t_max:
            raise ConfigError("t_min exceeds t_max")
        if not 0.0 <= self.p_fail <= 1.0:
            raise ConfigError("p_fail must be within [0, 1]")
        if self.r_lim <= 0 or self.v_lim <= 0:
            raise ConfigError("terminal limits must be positive")
        for g in (self.gamma1, self.gamma2):
            if not 0.0 < g < 1.0:
                raise ConfigError("discounts must lie in (0, 1)")
        if self.thrust_mode not in ("band", "pulsed"):
            raise ConfigError(f"unknown thrust mode {self.thrust_mode!r}")
        if self.obs_mode not in ("state", "altimeter", "altimeter_target"):
            raise ConfigError(f"unknown observation mode {self.obs_mode!r}")
        if self.shaping not in ("piecewise", "direct"):
            raise ConfigError(f"unknown shaping mode {self.shaping!r}")
        if self.dt <= 0 or self.max_steps < 1:
            raise ConfigError("dt and max_steps must be positive")


@dataclass
class FailureState:
    """Per-axis thrust multipliers, fixed for a whole episode."""

    multipliers: np.ndarray

    @classmethod
    def nominal(cls) -> "FailureState":
        return cls(np.ones(3))


@dataclass
class StepOutcome:
    obs: np.ndarray
    reward: float
    r1: float
    r2: float
    done: bool
    cause: str | None
    info: dict


CAUSE_SUCCESS = "landed-success"
CAUSE_MISS = "landed-miss"
CAUSE_CRASH = "crash-limit-violation"
CAUSE_TIMEOUT = "timeout"
CAUSE_DEPLETED = "mass-depleted"


def sample_engine_failure(rng: np.random.Generator, config: EnvConfig) -> FailureState:
    """Draw the episode's thrust-capability multipliers.

    With probability ``p_fail``: the vertical axis loses a factor
    ``fail_vertical_factor`` and one lateral axis (fair coin) a factor
    ``fail_lateral_factor``; otherwise full capability everywhere.
    """
    u_fail, u_axis = rng.random(2)
    mult = np.ones(3)
    if u_fail < config.p_fail:
        lateral = 0 if u_axis < 0.5 else 1
        mult[lateral] = 1.0 / config.fail_lateral_factor
        mult[2] = 1.0 / config.fail_vertical_factor
    return FailureState(mult)


def map_action_to_thrust(
    action: np.ndarray, config: EnvConfig, failure: FailureState
) -> ThrustCommand:
    """Translate a raw policy output into a constrained thrust vector."""
    a = np.asarray(action, dtype=float)
    caps = failure.multipliers * config.t_max
    if config.thrust_mode == "pulsed":
        t = np.where(a > 1.0 / 3.0, config.t_max, np.where(a < -1.0 / 3.0, -config.t_max, 0.0))
        return ThrustCommand(np.clip(t, -caps, caps))
    norm_a = float(np.sqrt(a @ a))
    if norm_a < 1e-12:
        direction = np.array([0.0, 0.0, 1.0])
    else:
        direction = a / norm_a
    # ||action|| ~ 1 sits mid-band; the gain sets how fast the band saturates
    frac = 1.0 / (1.0 + math.exp(-config.thrust_gain * (norm_a - 1.0)))
    T = direction * (config.t_min + (config.t_max - config.t_min) * frac)
    T = np.clip(T, -caps, caps)
    n = float(np.sqrt(T @ T))
    if n < config.t_min:
        if n < 1e-12:
            T = np.array([0.0, 0.0, config.t_min])
        else:
            T = T * (config.t_min / n)
        T = np.clip(T, -caps, caps)
    return ThrustCommand(T)


def constrain_thrust(T: np.ndarray, config: EnvConfig, failure: FailureState) -> ThrustCommand:
    """Clamp an externally commanded thrust (N) to the scenario's envelope."""
    T = np.asarray(T, dtype=float)
    caps = failure.multipliers * config.t_max
    if config.thrust_mode == "band":
        n = float(np.sqrt(T @ T))
        if n > 1e-12:
            T = T * (min(max(n, config.t_min), config.t_max) / n)
        elif config.t_min > 0:
            T = np.array([0.0, 0.0, config.t_min])
    return ThrustCommand(np.clip(T, -caps, caps))


def target_velocity(
    r: np.ndarray, v: np.ndarray, config: EnvConfig, v_o: float
) -> tuple[np.ndarray, float]:
    """Shaping velocity field and time-to-go at the given ground-truth state.

    Piecewise mode aims at a point ``cutover_alt`` above the site with a
    ``descent_rate_high`` sink-rate target, switching below the cutover to a
    purely vertical field with ``descent_rate_low``; direct mode aims at the
    target itself. The field magnitude relaxes from v_o toward zero as
    time-to-go shrinks, with time constant tau.
    """
    if config.shaping == "piecewise":
        if r[2] > config.cutover_alt:
            rh = r - np.array([0.0, 0.0, config.cutover_alt])
            vh = v - np.array([0.0, 0.0, -config.descent_rate_high])
            tau = config.tau1
        else:
            rh = np.array([0.0, 0.0, r[2]])
            vh = v - np.array([0.0, 0.0, -config.descent_rate_low])
            tau = config.tau2
    else:
        rh, vh, tau = r, v, config.tau1
    rn = float(np.sqrt(rh @ rh))
    if rn < 1e-12:
        return np.zeros(3), 0.0
    vn = float(np.sqrt(vh @ vh))
    if vn < 1e-12:
        t_go = TGO_CAP  # degenerate geometry: closing speed vanished
        decay = 1.0
    else:
        t_go = min(rn / vn, TGO_CAP)
        decay = 1.0 - math.exp(-t_go / tau)
    return (-v_o * decay / rn) * rh, t_go


def shaping_reward(v: np.ndarray, v_targ: np.ndarray, T: np.ndarray, config: EnvConfig) -> float:
    """Dense reward channel: velocity-field tracking, effort, progress bonus."""
    err = v - v_targ
    t_norm = config.t_max * (math.sqrt(3.0) if config.thrust_mode == "pulsed" else 1.0)
    return (
        config.alpha * float(np.sqrt(err @ err))
        + config.beta * float(np.sqrt(T @ T)) / t_norm
        + config.gamma_const
    )


def glideslope(v: np.ndarray) -> float:
    horiz = math.hypot(v[0], v[1])
    return abs(v[2]) / max(horiz, 1e-8)


def terminal_check(
    state: LanderState, config: EnvConfig, steps: int
) -> tuple[bool, str | None, float, float]:
    """Returns (done, cause, glideslope, terminal reward r1)."""
    gs = glideslope(state.v)
    if state.r[2] <= 0.0:
        pos_err = float(np.linalg.norm(state.r))
        vel = float(np.linalg.norm(state.v))
        if pos_err < config.r_lim and vel < config.v_lim and gs > config.gs_lim:
            return True, CAUSE_SUCCESS, gs, config.eta
        cause = CAUSE_CRASH if pos_err < config.r_lim else CAUSE_MISS
        return True, cause, gs, 0.0
    if steps >= config.max_steps:
        return True, CAUSE_TIMEOUT, gs, 0.0
    return False, None, gs, 0.0


@dataclass
class AltimeterRig:
    """Terrain plus beam-pointing mode for altimeter observations."""

    terrain: terrain_mod.TerrainMap
    mode: str  # "velocity" | "target"
    dtm_target: np.ndarray
    range_scale: float = 5000.0

    def ranges(self, state: LanderState) -> np.ndarray:
        pos = state.r + self.dtm_target
        try:
            beams = terrain_mod.beam_directions(pos, state.v, self.mode, self.dtm_target)
            reading = terrain_mod.measure(self.terrain, pos, beams)
            return reading.ranges
        except terrain_mod.DegenerateDirection:
            return np.full(4, terrain_mod.MISS_RANGE)


def observe(
    state: LanderState,
    body: BodyParams,
    config: EnvConfig,
    v_o: float,
    rig: AltimeterRig | None = None,
) -> np.ndarray:
    """Build the agent observation; ground-truth horizontal position never leaks."""
    v_targ, t_go = target_velocity(state.r, state.v, config, v_o)
    if config.obs_mode == "state":
        return np.array(
            [
                state.v[0] - v_targ[0],
                state.v[1] - v_targ[1],
                state.v[2] - v_targ[2],
                state.r[2],
                t_go,
            ]
        )
    if rig is None:
        raise ConfigError("altimeter observation mode needs an AltimeterRig")
    scaled = rig.ranges(state) / config.range_scale
    return np.append(scaled, t_go)


def build_rig(config: EnvConfig, terrain: terrain_mod.TerrainMap | None = None) -> AltimeterRig:
    """Construct the altimeter rig, synthesizing terrain when none is given."""
    if terrain is None:
        terrain = terrain_mod.synthetic_dtm(config.terrain_seed)
        # make the landing site geometry coherent: the target hovers 50 m
        # above a hilltop whose peak sits at target_z - 50
        terrain = terrain_mod.add_landing_hill(
            terrain,
            config.dtm_target[0],
            config.dtm_target[1],
            peak=config.dtm_target[2] - 50.0,
        )
    mode = "target" if config.obs_mode == "altimeter_target" else "velocity"
    return AltimeterRig(terrain, mode, np.asarray(config.dtm_target, dtype=float), config.range_scale)


def reset(rng: np.random.Generator, config: EnvConfig):
    """Draw one episode's initial state, body parameters, and failure state."""
    config.validate()
    pos = rng.uniform(config.pos_min, config.pos_max)
    vel = rng.uniform(config.vel_min, config.vel_max)
    if config.g_min is not None:
        gravity = rng.uniform(config.g_min, config.g_max)
    else:
        gravity = config.g_nominal * rng.uniform(config.g_scale_lo, config.g_scale_hi, 3)
    omega = rng.uniform(config.omega_min, config.omega_max)
    srp = rng.uniform(config.srp_min, config.srp_max)
    mass = rng.uniform(config.mass_lo, config.mass_hi)
    body = BodyParams(
        g=gravity + srp,
        omega=omega,
        r_offset=config.r_offset.copy(),
        isp=config.isp,
        dry_mass=config.dry_mass,
        f_env_sigma=config.f_env_sigma.copy(),
    )
    failure = sample_engine_failure(rng, config)
    state = LanderState(pos, vel, float(mass))
    return state, body, failure


class LanderEnv:
    """Single-episode-at-a-time environment; owns one RNG stream per episode."""

    def __init__(self, config: EnvConfig, terrain: terrain_mod.TerrainMap | None = None):
        config.validate()
        self.config = config
        self.rig = None
        if config.obs_mode != "state":
            self.rig = build_rig(config, terrain)
        self.obs_dim = 5
        self.act_dim = 3
        self._rng: np.random.Generator | None = None
        self.state: LanderState | None = None
        self.body: BodyParams | None = None
        self.failure: FailureState | None = None
        self.v_o: float = 0.0
        self.initial_mass: float = 0.0
        self.steps = 0
        self.done = False

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._rng = rng
        self.state, self.body, self.failure = reset(rng, self.config)
        self.v_o = (
            self.config.v_o
            if self.config.v_o is not None
            else float(np.linalg.norm(self.state.v))
        )
        self.initial_mass = self.state.m
        self.steps = 0
        self.done = False
        return observe(self.state, self.body, self.config, self.v_o, self.rig)

    def step(self, action: np.ndarray) -> StepOutcome:
        cmd = map_action_to_thrust(action, self.config, self.failure)
        return self._advance(cmd)

    def step_thrust(self, thrust: np.ndarray) -> StepOutcome:
        cmd = constrain_thrust(thrust, self.config, self.failure)
        return self._advance(cmd)

    def _advance(self, cmd: ThrustCommand) -> StepOutcome:
        if self.done:
            raise RuntimeError("episode already finished; call reset")
        cfg = self.config
        f_env = sample_disturbance(self._rng, self.body)
        depleted = False
        try:
            new = step_dynamics(self.state, cmd, self.body, f_env, cfg.dt)
        except DepletedMass:
            new = self.state
            depleted = True
        if not depleted and new.r[2] <= 0.0 < self.state.r[2]:
            new = _interpolate_touchdown(self.state, new)
        self.steps += 1
        if depleted:
            done, cause, gs, r1 = True, CAUSE_DEPLETED, glideslope(new.v), cfg.depletion_penalty
        else:
            done, cause, gs, r1 = terminal_check(new, cfg, self.steps)
        v_targ, t_go = target_velocity(new.r, new.v, cfg, self.v_o)
        r2 = shaping_reward(new.v, v_targ, cmd.T, cfg)
        self.state = new
        self.done = done
        obs = observe(new, self.body, cfg, self.v_o, self.rig)
        info = {
            "state": new,
            "thrust": cmd.T,
            "glideslope": gs,
            "t_go": t_go,
            "terminal_pos": float(np.linalg.norm(new.r)),
            "terminal_vel": float(np.linalg.norm(new.v)),
            "fuel": new.fuel_used,
        }
        return StepOutcome(obs, r1 + r2, r1, r2, done, cause, info)


def _interpolate_touchdown(pre: LanderState, post: LanderState) -> LanderState:
    """Linear substep interpolation to the r_z = 0 plane crossing."""
    theta = pre.r[2] / (pre.r[2] - post.r[2])
    return LanderState(
        pre.r + theta * (post.r - pre.r),
        pre.v + theta * (post.v - pre.v),
        pre.m + theta * (post.m - pre.m),
        pre.t + theta * (post.t - pre.t),
        pre.fuel_used + theta * (post.fuel_used - pre.fuel_used),
    )


@dataclass
class ToyConfig:
    gamma1: float = 0.99
    gamma2: float = 0.95
    dt: float = 0.2
    max_steps: int = 60
    pos_tol: float = 0.3
    vel_tol: float = 0.5
    accel_max: float = 2.0


class ToyPointMassEnv:
    """1-D double integrator driven to the origin; smoke-test scenario.

    Tiny on purpose: exercises the full PPO loop in seconds.
    """

    def __init__(self, config: ToyConfig | None = None):
        self.config = config or ToyConfig()
        self.obs_dim = 2
        self.act_dim = 1
        self.x = 0.0
        self.v = 0.0
        self.steps = 0
        self.done = False

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.x = float(rng.uniform(2.0, 5.0)) * (1 if rng.random() < 0.5 else -1)
        self.v = float(rng.uniform(-1.0, 1.0))
        self.steps = 0
        self.done = False
        return np.array([self.x, self.v])

    def step(self, action: np.ndarray) -> StepOutcome:
        if self.done:
            raise RuntimeError("episode already finished; call reset")
        cfg = self.config
        a = float(np.clip(np.asarray(action).ravel()[0], -cfg.accel_max, cfg.accel_max))
        self.x += self.v * cfg.dt + 0.5 * a * cfg.dt**2
        self.v += a * cfg.dt
        self.steps += 1
        self.done = self.steps >= cfg.max_steps
        success = abs(self.x) < cfg.pos_tol and abs(self.v) < cfg.vel_tol
        r1 = 10.0 if (self.done and success) else 0.0
        r2 = -0.1 * abs(self.x) - 0.01 * abs(a)
        cause = (CAUSE_SUCCESS if success else CAUSE_TIMEOUT) if self.done else None
        info = {
            "terminal_pos": abs(self.x),
            "terminal_vel": abs(self.v),
            "glideslope": 0.0,
            "fuel": 0.0,
        }
        return StepOutcome(np.array([self.x, self.v]), r1 + r2, r1, r2, self.done, cause, info)
