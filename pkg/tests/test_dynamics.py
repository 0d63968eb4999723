import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from descentrl.dynamics import (
    BodyParams,
    DepletedMass,
    LanderState,
    ThrustCommand,
    rotational_accel,
    sample_disturbance,
    step_dynamics,
)


def vec(*xs):
    return np.array(xs, dtype=float)


class TestRotationalAccel:
    def test_zero_rotation(self):
        out = rotational_accel(vec(123.0, -4.0, 9.0), vec(1.0, 2.0, 3.0), vec(0, 0, 0))
        assert np.allclose(out, 0.0)

    def test_centrifugal_hand_case(self):
        # omega x r = [0, 1, 0]; ([0,1,0]) x omega = [1e-3, 0, 0]
        out = rotational_accel(vec(1000, 0, 0), vec(0, 0, 0), vec(0, 0, 1e-3))
        assert np.allclose(out, vec(1e-3, 0, 0), atol=1e-15)

    def test_coriolis_hand_case(self):
        out = rotational_accel(vec(0, 0, 0), vec(1, 0, 0), vec(0, 0, 1e-3))
        assert np.allclose(out, vec(0, -2e-3, 0), atol=1e-15)

    def test_matches_numpy_cross_composition(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            r, v, w = rng.normal(size=(3, 3))
            expect = 2 * np.cross(v, w) + np.cross(np.cross(w, r), w)
            assert np.allclose(rotational_accel(r, v, w), expect, atol=1e-12)

    @given(
        c=st.floats(0.1, 10.0),
        wz=st.floats(1e-5, 1e-2),
        rx=st.floats(-2000.0, 2000.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_centrifugal_quadratic_in_omega(self, c, wz, rx):
        base = rotational_accel(vec(rx, 0, 0), vec(0, 0, 0), vec(0, 0, wz))
        scaled = rotational_accel(vec(rx, 0, 0), vec(0, 0, 0), vec(0, 0, c * wz))
        assert np.allclose(scaled, c**2 * base, rtol=1e-9, atol=1e-15)

    def test_coriolis_linear_in_velocity(self):
        w = vec(2e-4, -1e-4, 5e-4)
        a = rotational_accel(vec(0, 0, 0), vec(1.0, -2.0, 0.5), w)
        b = rotational_accel(vec(0, 0, 0), 3.0 * vec(1.0, -2.0, 0.5), w)
        assert np.allclose(b, 3.0 * a, rtol=1e-12)


def mars_body(**kw):
    kw.setdefault("g", vec(0, 0, -3.7114))
    kw.setdefault("isp", 225.0)
    kw.setdefault("dry_mass", 200.0)
    return BodyParams(**kw)


class TestStepDynamics:
    def test_free_drift(self):
        s = LanderState(vec(0, 0, 100), vec(0, 0, -10), 2000.0)
        body = BodyParams(g=vec(0, 0, 0))
        out = step_dynamics(s, ThrustCommand(vec(0, 0, 0)), body, np.zeros(3), 0.1)
        assert np.allclose(out.r, vec(0, 0, 99))
        assert np.allclose(out.v, s.v)
        assert out.m == s.m
        assert out.t == pytest.approx(0.1)

    def test_constant_gravity_matches_closed_form(self):
        s = LanderState(vec(0, 0, 100), vec(0, 0, -10), 2000.0)
        out = step_dynamics(s, ThrustCommand(np.zeros(3)), mars_body(), np.zeros(3), 0.1)
        # closed-form constant-acceleration kinematics
        assert np.allclose(out.v, vec(0, 0, -10.37114), atol=1e-12)
        assert np.allclose(out.r, vec(0, 0, 98.981443), atol=1e-9)

    def test_mass_flow_hand_value(self):
        s = LanderState(vec(0, 0, 1000), vec(0, 0, 0), 2000.0)
        out = step_dynamics(s, ThrustCommand(vec(0, 0, 15000)), mars_body(), np.zeros(3), 1.0)
        assert out.m == pytest.approx(2000.0 - 6.80272, abs=1e-5)
        assert out.fuel_used == pytest.approx(6.80272, abs=1e-5)

    def test_mass_strictly_decreases_by_rocket_equation(self):
        rng = np.random.default_rng(0)
        body = mars_body()
        s = LanderState(vec(0, 0, 500), vec(0, 0, -5), 1500.0)
        for _ in range(20):
            T = rng.uniform(2000, 15000) * _random_unit(rng)
            out = step_dynamics(s, ThrustCommand(T), body, np.zeros(3), 0.2)
            expected = 0.2 * np.linalg.norm(T) / (225.0 * 9.8)
            assert out.m == pytest.approx(s.m - expected, rel=1e-12)
            s = out

    def test_depleted_mass_raises(self):
        s = LanderState(vec(0, 0, 100), vec(0, 0, 0), 200.5)
        with pytest.raises(DepletedMass):
            step_dynamics(s, ThrustCommand(vec(0, 0, 15000)), mars_body(), np.zeros(3), 1.0)

    def test_offset_irrelevant_without_rotation(self):
        s = LanderState(vec(10, 20, 300), vec(-1, 2, -30), 1000.0)
        cmd = ThrustCommand(vec(100, -50, 4000))
        a = step_dynamics(s, cmd, mars_body(), np.zeros(3), 0.2)
        b = step_dynamics(
            s, cmd, mars_body(r_offset=vec(1e6, -2e5, 3e4)), np.zeros(3), 0.2
        )
        assert np.array_equal(a.r, b.r) and np.array_equal(a.v, b.v)

    def test_rk4_fourth_order_convergence(self):
        # rotation makes the acceleration state-dependent, so the integrator
        # order is visible: halving dt should shrink the error ~16x
        body = BodyParams(
            g=vec(0, 0, -1e-4), omega=vec(0, 2e-2, 1e-2), r_offset=vec(0, 0, 250)
        )
        s0 = LanderState(vec(900, -400, 1000), vec(1.0, -0.5, -1.0), 450.0)
        cmd = ThrustCommand(vec(0.5, 0.2, 1.0))

        def propagate(dt, n):
            s = s0.copy()
            for _ in range(n):
                s = step_dynamics(s, cmd, body, np.zeros(3), dt)
            return s

        ref = propagate(0.0625, 1024)
        err_coarse = np.linalg.norm(propagate(4.0, 16).r - ref.r)
        err_fine = np.linalg.norm(propagate(2.0, 32).r - ref.r)
        ratio = err_coarse / err_fine
        assert 10.0 < ratio < 24.0

    def test_rejects_nonpositive_dt(self):
        s = LanderState(vec(0, 0, 100), vec(0, 0, 0), 500.0)
        with pytest.raises(ValueError):
            step_dynamics(s, ThrustCommand(np.zeros(3)), mars_body(), np.zeros(3), 0.0)


def _random_unit(rng):
    u = rng.normal(size=3)
    return u / np.linalg.norm(u)


class TestDisturbance:
    def test_degenerate_sigma_is_zero(self):
        body = BodyParams(g=np.zeros(3), f_env_sigma=vec(0, 0, 0))
        rng = np.random.default_rng(5)
        for _ in range(10):
            assert np.allclose(sample_disturbance(rng, body), 0.0)

    def test_sample_mean_near_zero(self):
        body = BodyParams(g=np.zeros(3), f_env_sigma=vec(100, 100, 100))
        rng = np.random.default_rng(11)
        draws = np.array([sample_disturbance(rng, body) for _ in range(100_000)])
        # 3.8 sigma / sqrt(N) bound, per axis
        assert np.all(np.abs(draws.mean(axis=0)) < 1.5)
        assert np.allclose(draws.std(axis=0), 100.0, rtol=0.02)

    def test_seed_determinism(self):
        body = BodyParams(g=np.zeros(3), f_env_sigma=vec(3, 2, 1))
        a = [sample_disturbance(np.random.default_rng(42), body) for _ in range(1)]
        r1 = np.random.default_rng(42)
        r2 = np.random.default_rng(42)
        for _ in range(20):
            assert np.array_equal(sample_disturbance(r1, body), sample_disturbance(r2, body))


class TestValidation:
    def test_body_rejects_bad_isp(self):
        with pytest.raises(ValueError):
            BodyParams(g=np.zeros(3), isp=0.0)

    def test_body_rejects_negative_sigma(self):
        with pytest.raises(ValueError):
            BodyParams(g=np.zeros(3), f_env_sigma=vec(-1, 0, 0))

    def test_state_requires_3_vectors(self):
        with pytest.raises(ValueError):
            LanderState(np.zeros(2), np.zeros(3), 100.0)
