import dataclasses

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from rodcollide.constitutive import FloorLaw, StressLaw
from rodcollide.errors import BadConfig, BarrierViolation, StepFloor
from rodcollide.integrate import (
    StepperConfig,
    Trajectory,
    _Stepper,
    run,
    step_implicit_midpoint,
    step_verlet,
)
from rodcollide.rod import Grid, ModelParams, RodModel, RodState, initial_state, static_equilibrium

SCHEMES = ["velocity-verlet-split", "implicit-midpoint"]
STIFF = dict(stress=StressLaw(100.0), floor=FloorLaw(1.0, 0.5))


def fixed(scheme, dt, **kw):
    return StepperConfig(scheme=scheme, dt_init=dt, dt_max=dt, dt_min=min(dt, 1e-9), **kw)


def drop(n=5, h0=1.0, vc=0.0):
    g = Grid(n)
    return initial_state(g, lambda x: x + h0, vc)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            dict(scheme="rk4"),
            dict(dt_min=1e-3, dt_init=1e-4),
            dict(dt_init=1e-3, dt_max=1e-4),
            dict(eps_guard=0.0),
            dict(h_guard=-1.0),
            dict(barrier_shrink=1.0),
            dict(newton_max_iter=0),
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(BadConfig):
            StepperConfig(**kw)

    def test_h_guard_default(self):
        assert StepperConfig().h_guard_for(ModelParams(floor=FloorLaw(1, 0.4))) == pytest.approx(4e-4)
        assert StepperConfig(h_guard=0.01).h_guard_for(ModelParams()) == 0.01


class TestFreeFall:
    @pytest.mark.parametrize("scheme", SCHEMES)
    @pytest.mark.parametrize("gamma", [0.0, 0.01])
    @pytest.mark.parametrize("mu", [0.0, 5.0])
    def test_closed_form(self, scheme, gamma, mu):
        s0 = drop(vc=0.25)
        p = ModelParams(gamma=gamma, mu=mu, g=-1.0, **STIFF)
        tr = run(s0, p, fixed(scheme, 1e-2), 1.0)
        x = s0.grid.x
        t = tr.t[:, None]
        np.testing.assert_allclose(tr.u, x + 1 + 0.25 * t - 0.5 * t**2, rtol=0, atol=1e-10)
        # midpoint does not damp the stiffest elastic mode, so round-off in u
        # (~1e-12) shows up in v amplified by omega * dt ~ 1e2
        vtol = 1e-10 if scheme == SCHEMES[0] else 1e-9
        np.testing.assert_allclose(tr.v, 0.25 - t + 0 * x, rtol=0, atol=vtol)
        assert np.all(tr.D == 0.0) or mu > 0 and np.max(tr.D) < 1e-20


def rhs(model):
    def f(_, y):
        n = len(y) // 2
        return np.concatenate((y[n:], model.accel(y[:n], y[n:])))

    return f


def contact_state():
    g = Grid(2)
    return RodState(0.0, np.array([-0.1, 0.42, 0.95]), np.array([-0.7, -0.2, 0.3]))


class TestLocalError:
    @pytest.mark.parametrize("scheme", SCHEMES)
    @pytest.mark.parametrize("mu", [0.0, 2.0])
    def test_one_step_third_order(self, scheme, mu):
        # local error of a one-step 2nd-order scheme is O(dt^3); oracle is RK45 at tight tolerance
        s = contact_state()
        p = ModelParams(gamma=0.01, mu=mu, **STIFF)
        model = RodModel(s.grid, p)
        step = step_verlet if scheme == SCHEMES[0] else step_implicit_midpoint
        errs = []
        dts = [4e-3, 2e-3, 1e-3]
        for dt in dts:
            ref = solve_ivp(rhs(model), (0, dt), np.concatenate((s.u, s.v)), method="DOP853", rtol=1e-13, atol=1e-15)
            y = ref.y[:, -1]
            out = step(s, dt, p, fixed(scheme, dt, newton_tol=1e-14))
            errs.append(np.max(np.abs(np.concatenate((out.u, out.v)) - y)))
        orders = np.log2(np.array(errs[:-1]) / errs[1:])
        assert np.all(orders > 2.7), (errs, orders)

    def test_midpoint_vs_verlet(self):
        s = contact_state()
        p = ModelParams(**STIFF)
        d = []
        for dt in (4e-3, 2e-3):
            a = step_verlet(s, dt, p)
            b = step_implicit_midpoint(s, dt, p, fixed(SCHEMES[1], dt, newton_tol=1e-14))
            d.append(np.max(np.abs(a.u - b.u)) + np.max(np.abs(a.v - b.v)))
        assert np.log2(d[0] / d[1]) > 2.7


class TestViscousSubstep:
    def test_crank_nicolson_amplification(self):
        g = Grid(8)
        p = ModelParams(mu=100.0)
        model = RodModel(g, p)
        core = _Stepper(model, StepperConfig())
        for h in (1e-4, 1.0, 1e3):
            A = np.column_stack([core.viscous(e, h) for e in np.eye(9)])
            # generalized eigenproblem: the step matrix is similar to a symmetric one
            lam = np.linalg.eigvals(A)
            assert np.all(np.abs(lam) <= 1 + 1e-12)
            assert np.max(np.abs(lam.imag)) < 1e-10
            # rigid translation is untouched
            np.testing.assert_allclose(A @ np.ones(9), 1.0, atol=1e-12)

    def test_mu_zero_is_plain_verlet(self):
        s = drop(h0=0.1, vc=-1.0)
        p = ModelParams(**STIFF)
        model = RodModel(s.grid, p)
        dt = 2.0**-10  # exact in binary, so no shortened final step
        u, v = s.u.copy(), s.v.copy()
        tr = run(s, p, fixed(SCHEMES[0], dt), 0.5)
        for _ in range(len(tr) - 1):
            vh = v + 0.5 * dt * model.conservative_accel(u)
            u = u + dt * vh
            v = vh + 0.5 * dt * model.conservative_accel(u)
        np.testing.assert_array_equal(tr.records[-1].state.u, u)
        np.testing.assert_array_equal(tr.records[-1].state.v, v)


class TestMidpoint:
    def test_equilibrium_is_fixed_point(self):
        p = ModelParams(gamma=0.01, **STIFF)
        s = static_equilibrium(Grid(5), p)
        out = step_implicit_midpoint(s, 1e-2, p, fixed(SCHEMES[1], 1e-2))
        np.testing.assert_allclose(out.u, s.u, atol=1e-12)
        np.testing.assert_allclose(out.v, 0.0, atol=1e-10)


class TestGlobalOrder:
    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_bounce_order_two(self, scheme):
        # free fall plus one impact; reference at dt/64 of the coarsest step
        s = drop(h0=0.3)
        p = ModelParams(mu=10.0, **STIFF)
        # the split scheme needs dt0 * mu / (m dx) = 0.25 to be in its asymptotic
        # range; midpoint already is at 4x that step
        T, dt0 = 1.6, (1e-3 if scheme == SCHEMES[0] else 4e-3)
        ref = run(s, p, fixed(scheme, dt0 / 64), T, output_every=10**9).records[-1].state
        dts, errs = [], []
        for k in range(3):
            dt = dt0 / 2**k
            end = run(s, p, fixed(scheme, dt), T, output_every=10**9).records[-1].state
            dts.append(dt)
            errs.append(np.max(np.abs(end.u - ref.u)))
        # the floor law has a derivative jump at contact, which makes successive
        # ratios noisy; the fitted slope is the order
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert slope >= 1.9, (errs, slope)


class TestRun:
    def test_deterministic(self):
        s = drop(h0=0.2)
        p = ModelParams(mu=20.0, **STIFF)
        a = run(s, p, StepperConfig(dt_init=1e-3, dt_max=1e-3), 1.0)
        b = run(s, p, StepperConfig(dt_init=1e-3, dt_max=1e-3), 1.0)
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.v, b.v)
        np.testing.assert_array_equal(a.D, b.D)

    def test_dissipation_and_records(self):
        s = drop(h0=0.2)
        p = ModelParams(mu=20.0, **STIFF)
        seen = []
        tr = run(s, p, StepperConfig(dt_init=1e-3, dt_max=1e-3), 1.0, output_every=7, on_record=seen.append)
        assert seen == tr.records
        assert np.all(np.diff(tr.D) >= 0) and tr.D[-1] > 0
        assert tr.t[-1] == 1.0
        assert np.all(np.diff(tr.t) > 0)
        assert tr.G[-1] < tr.G[0]
        assert tr.meta["params"] is p and tr.meta["accepted_steps"] == 1000

    def test_guard_soundness(self):
        s = drop(h0=0.1, vc=-2.5)
        p = ModelParams(**STIFF)
        cfg = StepperConfig(dt_init=2e-3, dt_max=2e-3, eps_guard=0.05, h_guard=0.01)
        tr = run(s, p, cfg, 1.5)
        eps = np.diff(tr.u, axis=1) / s.grid.dx - 1
        assert np.all(eps > -1 + 0.05)
        assert np.all(tr.u[:, 0] > -0.5 + 0.01)

    def test_rejection_shrinks_then_recovers(self, monkeypatch):
        # reject any step longer than 2.5e-3 while the edge is below 0.5
        orig = _Stepper.step

        def picky(self, u, v, h):
            if u[0] < 0.5 and h > 2.5e-3:
                raise BarrierViolation("too long near the floor")
            return orig(self, u, v, h)

        monkeypatch.setattr(_Stepper, "step", picky)
        s = drop(h0=0.6)
        tr = run(s, ModelParams(g=0.0), StepperConfig(dt_init=1e-2, dt_max=1e-2), 0.6)
        # moving with v = 0 at g = 0, the edge never leaves the window
        assert np.all(np.diff(tr.t) <= 1e-2 + 1e-15)
        s = drop(h0=0.45, vc=0.5)
        tr = run(s, ModelParams(g=0.0), StepperConfig(dt_init=1e-2, dt_max=1e-2), 0.5)
        h = np.diff(tr.t)
        low = tr.u[:-1, 0] < 0.5
        assert np.all(h[low] <= 2.5e-3 + 1e-15)
        assert np.isclose(h[-3], 1e-2)  # grown back after leaving the window

    def test_rejection_at_floor_raises(self, monkeypatch):
        def never(self, u, v, h):
            raise BarrierViolation("always")

        monkeypatch.setattr(_Stepper, "step", never)
        with pytest.raises(StepFloor) as ei:
            run(drop(), ModelParams(), StepperConfig(dt_init=1e-2, dt_max=1e-2, dt_min=1e-5), 1.0)
        assert len(ei.value.trajectory) == 1

    def test_step_floor(self):
        # far too fast for a soft floor: the guard cannot be respected
        s = drop(h0=0.01, vc=-50.0)
        p = ModelParams(floor=FloorLaw(1.0, 0.1))
        cfg = StepperConfig(dt_init=1e-3, dt_max=1e-3, dt_min=1e-7)
        with pytest.raises(StepFloor) as ei:
            run(s, p, cfg, 1.0)
        assert isinstance(ei.value.trajectory, Trajectory) and len(ei.value.trajectory) >= 1
        assert ei.value.state.u[0] > -0.1

    def test_bad_arguments(self):
        s = drop()
        with pytest.raises(BadConfig):
            run(s, ModelParams(), StepperConfig(), 0.0)
        with pytest.raises(BadConfig):
            run(s, ModelParams(), StepperConfig(), 1.0, output_every=0)
        with pytest.raises(ValueError):
            step_verlet(s, 0.0, ModelParams())

    def test_trajectory_append_order(self):
        s = drop()
        tr = run(s, ModelParams(), StepperConfig(dt_init=1e-2, dt_max=1e-2), 0.05)
        with pytest.raises(ValueError):
            tr.append(tr.records[0])
