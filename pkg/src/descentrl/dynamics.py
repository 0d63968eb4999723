"""3-DOF translational dynamics for a thrusting lander near a rotating body.

Positions live in a target-centered frame whose axes are aligned with the
body-centered frame; ``r_offset`` carries the translation between the two so
Coriolis and centrifugal terms can be evaluated where they physically act.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

G_REF = 9.8  # m/s^2, reference gravity for the mass-flow equation

_ZERO3 = (0.0, 0.0, 0.0)


class DepletedMass(Exception):
    """A propagation step would burn the lander below its dry mass."""


def _vec3(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


@dataclass
class LanderState:
    """Snapshot of one vehicle at one instant (target-centered frame)."""

    r: np.ndarray  # position, m
    v: np.ndarray  # velocity, m/s
    m: float       # mass, kg
    t: float = 0.0
    fuel_used: float = 0.0

    def __post_init__(self):
        self.r = _vec3(self.r)
        self.v = _vec3(self.v)

    def copy(self) -> "LanderState":
        return LanderState(self.r.copy(), self.v.copy(), self.m, self.t, self.fuel_used)


@dataclass
class BodyParams:
    """Environment constants for one episode.

    ``g`` is the total constant ambient acceleration (gravity plus any
    constant term such as solar radiation pressure). ``omega`` is the body
    rotation rate; ``r_offset`` points from the rotation center to the target.
    """

    g: np.ndarray
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    isp: float = 225.0
    dry_mass: float = 0.0
    g_ref: float = G_REF
    f_env_sigma: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.g = _vec3(self.g)
        self.omega = _vec3(self.omega)
        self.r_offset = _vec3(self.r_offset)
        self.f_env_sigma = _vec3(self.f_env_sigma)
        if self.isp <= 0:
            raise ValueError("isp must be positive")
        if self.g_ref <= 0:
            raise ValueError("g_ref must be positive")
        if np.any(self.f_env_sigma < 0):
            raise ValueError("f_env_sigma must be componentwise nonnegative")


@dataclass
class ThrustCommand:
    T: np.ndarray  # force, N

    def __post_init__(self):
        self.T = _vec3(self.T)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # hand-rolled: np.cross dominates the hot loop otherwise
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def rotational_accel(r_a: np.ndarray, v_a: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Coriolis + centrifugal acceleration, 2 (v_a x omega) + (omega x r_a) x omega.

    ``r_a`` and ``v_a`` are position and velocity in the body-centered frame.
    """
    two_v_cross_w = 2.0 * _cross(v_a, omega)
    w_cross_r = _cross(omega, r_a)
    return two_v_cross_w + _cross(w_cross_r, omega)


def step_dynamics(
    state: LanderState,
    cmd: ThrustCommand,
    body: BodyParams,
    f_env: np.ndarray,
    dt: float,
) -> LanderState:
    """Advance the state by one fixed RK4 step.

    Thrust, disturbance force, and mass are held constant over the step;
    mass itself updates by explicit Euler on the rocket equation afterwards.
    Raises DepletedMass when the burn would drop below ``body.dry_mass``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    T = cmd.T
    m = state.m
    lin = (T + f_env) / m + body.g
    omega = body.omega
    rotating = omega[0] != 0.0 or omega[1] != 0.0 or omega[2] != 0.0

    if rotating:
        off = body.r_offset

        def acc(r, v):
            return lin + rotational_accel(r + off, v, omega)

        r0, v0 = state.r, state.v
        a1 = acc(r0, v0)
        r_k2 = r0 + 0.5 * dt * v0
        v_k2 = v0 + 0.5 * dt * a1
        a2 = acc(r_k2, v_k2)
        v_k3 = v0 + 0.5 * dt * a2
        a3 = acc(r0 + 0.5 * dt * v_k2, v_k3)
        v_k4 = v0 + dt * a3
        a4 = acc(r0 + dt * v_k3, v_k4)
        r_new = r0 + (dt / 6.0) * (v0 + 2.0 * v_k2 + 2.0 * v_k3 + v_k4)
        v_new = v0 + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    else:
        # constant acceleration: RK4 collapses to the exact kinematic update
        r_new = state.r + dt * state.v + (0.5 * dt * dt) * lin
        v_new = state.v + dt * lin

    tn = np.sqrt(T[0] * T[0] + T[1] * T[1] + T[2] * T[2])
    burn = dt * tn / (body.isp * body.g_ref)
    m_new = m - burn
    if m_new <= body.dry_mass:
        raise DepletedMass(f"mass {m_new:.3f} kg at or below dry mass {body.dry_mass:.3f} kg")

    return LanderState(r_new, v_new, m_new, state.t + dt, state.fuel_used + burn)


def sample_disturbance(rng: np.random.Generator, body: BodyParams) -> np.ndarray:
    """Draw one per-axis zero-mean Gaussian disturbance force (N)."""
    return rng.normal(0.0, body.f_env_sigma)
