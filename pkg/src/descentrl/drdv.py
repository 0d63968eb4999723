"""Classical energy-optimal terminal guidance (DR/DV baseline).

The law drives position and velocity errors to zero simultaneously at a
chosen time-to-go:

    a_cmd = -6 r / t_go^2 - 4 v / t_go - g

t_go is picked numerically: over a log-spaced grid (refined by golden
section) we minimize the peak commanded thrust along the predicted
closed-form trajectory, subject to that whole trajectory respecting the
thrust envelope. The flight policy solves once per descent and counts t_go
down (the law itself is closed-loop in the state); if t_go runs out with
altitude remaining it re-plans, and below a small t_go floor it falls back
to gravity cancellation.

The baseline is deliberately privileged: it receives ground-truth position,
velocity, episode-start mass, and (for Mars) the true gravity vector. It has
no knowledge of engine failures, disturbances, or in-flight mass loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_SQRT5 = math.sqrt(5.0)
_INVPHI = (_SQRT5 - 1.0) / 2.0


class Infeasible(Exception):
    """No t_go on the search grid keeps the trajectory inside thrust limits."""


@dataclass
class ThrustEnvelope:
    """What the solver needs to know about the actuators."""

    mode: str          # "band" | "pulsed"
    t_min: float
    t_max: float
    m_est: float       # mass assumed when converting acceleration to thrust
    margin: float = 0.9


def accel_command(r: np.ndarray, v: np.ndarray, g: np.ndarray, t_go: float) -> np.ndarray:
    """Energy-optimal zero-miss/zero-velocity acceleration command."""
    if t_go <= 0:
        raise ValueError("t_go must be positive")
    return -6.0 * r / t_go**2 - 4.0 * v / t_go - g


def predicted_peak_thrust(
    r: np.ndarray,
    v: np.ndarray,
    g: np.ndarray,
    t_go: float,
    envelope: ThrustEnvelope,
    samples: int = 21,
) -> float:
    """Peak commanded thrust along the law's closed-form trajectory.

    Under the law the trajectory is the cubic interpolant from (r, v) to
    (0, 0), whose acceleration is linear in time; thrust follows from
    subtracting gravity and scaling by the assumed mass. For pulsed
    actuators the binding constraint is per-axis, so the peak is taken
    componentwise.
    """
    s = np.linspace(0.0, 1.0, samples)[:, None]
    accel = ((12.0 * s - 6.0) / t_go**2) * r + ((6.0 * s - 4.0) / t_go) * v - g
    thrust = envelope.m_est * accel
    if envelope.mode == "pulsed":
        return float(np.max(np.abs(thrust)))
    return float(np.max(np.linalg.norm(thrust, axis=1)))


def _golden_section(f, a: float, b: float, iters: int = 36) -> float:
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return c if fc < fd else d


def solve_tgo(
    r: np.ndarray,
    v: np.ndarray,
    g: np.ndarray,
    envelope: ThrustEnvelope,
    grid_points: int = 16,
    window: tuple[float, float] = (0.3, 4.0),
    tgo_max: float | None = None,
) -> tuple[float, bool]:
    """Pick a time-to-go minimizing peak thrust within the feasible window.

    The search bracket scales with the instantaneous closing time
    ||r|| / ||v||; for braking-dominated descents the peak-thrust curve has
    an interior minimum inside this bracket. Returns (t_go, feasible); when
    nothing on the grid is feasible the fallback 1.5 ||r|| / ||v|| is
    returned with feasible=False.
    """
    rn = float(np.linalg.norm(r))
    vn = float(np.linalg.norm(v))
    if rn <= 1e-9:
        return 0.0, True  # already at the target: caller hovers
    t_ref = rn / max(vn, 0.1)
    lo = max(window[0] * t_ref, 1e-2)
    hi = max(window[1] * t_ref, lo * 2.0)
    if tgo_max is not None:
        hi = max(min(hi, tgo_max), lo * 1.5)
    grid = np.exp(np.linspace(math.log(lo), math.log(hi), grid_points))
    cap = envelope.margin * envelope.t_max
    peaks = np.array([predicted_peak_thrust(r, v, g, t, envelope) for t in grid])
    feasible = peaks <= cap
    if not np.any(feasible):
        return 1.5 * rn / max(vn, 1e-3), False
    best = int(np.flatnonzero(feasible)[np.argmin(peaks[feasible])])
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, grid_points - 1)]
    t_go = _golden_section(lambda t: predicted_peak_thrust(r, v, g, t, envelope), a, b)
    if predicted_peak_thrust(r, v, g, t_go, envelope) > cap:
        t_go = float(grid[best])
    return float(t_go), True


@dataclass
class DrdvConfig:
    gravity: np.ndarray                  # vector the law assumes
    envelope: ThrustEnvelope
    use_true_gravity: bool = True        # replace `gravity` with each episode's truth
    touchdown_speed: float = 1.5         # m/s sink rate targeted at the surface
    hold_altitude: float = 15.0          # m; 0 disables the vertical letdown phase
    hover_tgo: float = 0.5               # s, below this command gravity cancellation
    max_resolves: int = 16
    pulse_deadband: float = 0.3          # fraction of t_max; nearest-level quantization
    tgo_max: float | None = None         # optional ceiling on planned descent time


def default_drdv_config(env_config) -> DrdvConfig:
    """Baseline settings matched to a scenario's thrust model.

    Band-thrust scenarios get the true per-episode gravity (the baseline's
    stated privilege); pulsed scenarios use a fixed assumed gravity tuned
    well above the actual range, which is where the law performs best.
    """
    envelope = ThrustEnvelope(
        env_config.thrust_mode, env_config.t_min, env_config.t_max, env_config.mass_hi
    )
    if env_config.thrust_mode == "pulsed":
        return DrdvConfig(
            gravity=np.array([0.0, 0.0, -1e-3]),
            envelope=envelope,
            use_true_gravity=False,
            touchdown_speed=0.05,
            hold_altitude=0.0,
            tgo_max=2000.0,
        )
    return DrdvConfig(
        gravity=np.asarray(env_config.g_nominal, dtype=float).copy(),
        envelope=envelope,
        use_true_gravity=True,
        tgo_max=80.0,
    )


class DrdvPolicy:
    """Stateful per-episode wrapper around the guidance law.

    Flies the energy-optimal law to a waypoint ``hold_altitude`` above the
    target, then a plain letdown: constant sink rate with a lateral PD that
    nulls residual horizontal motion so the arrival is near-vertical.
    """

    def __init__(self, config: DrdvConfig):
        self.cfg = config
        self.t_go = 0.0
        self.feasible = True
        self._resolves = 0

    @property
    def _v_f(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.cfg.touchdown_speed])

    @property
    def _waypoint(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.cfg.hold_altitude])

    def begin_episode(self, r: np.ndarray, v: np.ndarray, m0: float) -> None:
        self.cfg.envelope.m_est = float(m0)
        self.t_go, self.feasible = solve_tgo(
            r - self._waypoint, v - self._v_f, self.cfg.gravity, self.cfg.envelope,
            tgo_max=self.cfg.tgo_max,
        )
        self._resolves = 0

    def thrust(self, r: np.ndarray, v: np.ndarray, dt: float) -> np.ndarray:
        """Thrust command (N) for the current ground-truth state."""
        cfg = self.cfg
        if cfg.hold_altitude > 0.0 and r[2] <= cfg.hold_altitude:
            a = self._letdown_accel(r, v)
            return self._shape_thrust(cfg.envelope.m_est * a)
        r_rel = r - self._waypoint
        v_rel = v - self._v_f
        if (
            self.t_go <= cfg.hover_tgo
            and r_rel[2] > 1.0
            and self._resolves < cfg.max_resolves
        ):
            # plan ran out with altitude left (disturbance or saturation):
            # plan a fresh descent from here
            self.t_go, self.feasible = solve_tgo(
                r_rel, v_rel, cfg.gravity, cfg.envelope, tgo_max=cfg.tgo_max
            )
            self._resolves += 1
        if self.t_go <= cfg.hover_tgo:
            a = -cfg.gravity
        else:
            a = accel_command(r_rel, v_rel, cfg.gravity, self.t_go)
        T = cfg.envelope.m_est * a
        self.t_go = max(self.t_go - dt, 0.0)
        return self._shape_thrust(T)

    def _letdown_accel(self, r: np.ndarray, v: np.ndarray) -> np.ndarray:
        # vertical phase: hold the sink rate, PD-null lateral position/velocity
        sink_err = v[2] + self.cfg.touchdown_speed
        return np.array(
            [
                -0.2 * r[0] - 1.2 * v[0],
                -0.2 * r[1] - 1.2 * v[1],
                -4.0 * sink_err,
            ]
        ) - self.cfg.gravity

    def _shape_thrust(self, T: np.ndarray) -> np.ndarray:
        env = self.cfg.envelope
        if env.mode == "pulsed":
            out = np.zeros(3)
            dead = self.cfg.pulse_deadband * env.t_max
            for i in range(3):
                if T[i] > dead:
                    out[i] = env.t_max
                elif T[i] < -dead:
                    out[i] = -env.t_max
            return out
        n = float(np.linalg.norm(T))
        if n < 1e-12:
            return np.array([0.0, 0.0, env.t_min])
        return T * (min(max(n, env.t_min), env.t_max) / n)
