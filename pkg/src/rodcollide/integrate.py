"""Time stepping for the semidiscrete rod.

Two one-step schemes are provided:

``velocity-verlet-split``
    Strang splitting: a Crank-Nicolson half step of the linear viscous term,
    a symplectic velocity-Verlet step of the conservative forces, then
    another viscous half step.  With ``mu = 0`` the viscous sub-steps are
    skipped, so the scheme is plain velocity Verlet.
``implicit-midpoint``
    The midpoint rule on the full first-order system, solved by Newton's
    method with the analytic stiffness.

:func:`run` drives either scheme with step rejection at the strain and floor
barriers, and accumulates the viscous dissipation ``D(t)`` by the trapezoid
rule on step end points.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, solve, solve_banded

from .errors import BadConfig, BarrierViolation, LinearSolveFailure, NewtonDivergence, StepFloor
from .rod import EnergyBreakdown, ModelParams, RodModel, RodState, check_state

logger = logging.getLogger(__name__)

SCHEMES = ("velocity-verlet-split", "implicit-midpoint")


@dataclass(frozen=True)
class StepperConfig:
    scheme: str = "velocity-verlet-split"
    dt_init: float = 1e-4
    dt_min: float = 1e-9
    dt_max: float = 1e-4
    newton_tol: float = 1e-11
    newton_max_iter: int = 25
    eps_guard: float = 1e-3
    h_guard: Optional[float] = None  # None: 1e-3 * beta
    barrier_shrink: float = 0.5

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise BadConfig(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise BadConfig("need 0 < dt_min <= dt_init <= dt_max")
        if not self.eps_guard > 0 or (self.h_guard is not None and not self.h_guard > 0):
            raise BadConfig("guards must be positive")
        if not 0 < self.barrier_shrink < 1:
            raise BadConfig("barrier_shrink must lie in (0, 1)")
        if not self.newton_tol > 0 or int(self.newton_max_iter) < 1:
            raise BadConfig("newton_tol must be > 0 and newton_max_iter >= 1")

    def h_guard_for(self, params: ModelParams) -> float:
        return 1e-3 * params.beta if self.h_guard is None else self.h_guard


@dataclass(frozen=True, eq=False)
class Record:
    t: float
    state: RodState
    energy: EnergyBreakdown
    dissipation: float


@dataclass(eq=False)
class Trajectory:
    """Time-ordered records plus run metadata.

    ``dissipation`` on each record is ``D(t) = mu * int_0^t |u_tx|_H^2``.
    """

    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, rec: Record) -> None:
        if self.records and not rec.t > self.records[-1].t:
            raise ValueError("trajectory times must be strictly increasing")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def t(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    @property
    def u(self) -> np.ndarray:
        return np.array([r.state.u for r in self.records])

    @property
    def v(self) -> np.ndarray:
        return np.array([r.state.v for r in self.records])

    @property
    def G(self) -> np.ndarray:
        return np.array([r.energy.total_G for r in self.records])

    @property
    def D(self) -> np.ndarray:
        return np.array([r.dissipation for r in self.records])


class _Stepper:
    """Scheme state shared across steps (cached forces, factored matrices)."""

    def __init__(self, model: RodModel, config: StepperConfig):
        self.model = model
        self.config = config
        self.mu = model.params.mu
        self._a_cache = None  # (u array, its conservative accel)
        self._visc_cache = {}

    # -- viscous Crank-Nicolson sub-step ------------------------------------
    def viscous(self, v: np.ndarray, h: float) -> np.ndarray:
        """Advance ``M v' = -mu L v`` over ``h`` with Crank-Nicolson."""
        if self.mu == 0:
            return v
        ab = self._visc_cache.get(h)
        if ab is None:
            A = np.diag(self.model.m) + 0.5 * h * self.mu * self.model.L
            n = len(v)
            ab = np.zeros((3, n))
            ab[0, 1:] = np.diag(A, 1)
            ab[1] = np.diag(A)
            ab[2, :-1] = np.diag(A, -1)
            if len(self._visc_cache) > 8:
                self._visc_cache.clear()
            self._visc_cache[h] = ab
        rhs = self.model.m * v - 0.5 * h * self.mu * (self.model.L @ v)
        try:
            out = solve_banded((1, 1), ab, rhs, check_finite=False)
        except (LinAlgError, ValueError) as exc:
            raise LinearSolveFailure(str(exc)) from exc
        if not np.all(np.isfinite(out)):
            raise LinearSolveFailure("non-finite viscous sub-step")
        return out

    def _cons_accel(self, u: np.ndarray) -> np.ndarray:
        c = self._a_cache
        if c is not None and c[0] is u:
            return c[1]
        a = self.model.conservative_accel(u)
        self._a_cache = (u, a)
        return a

    def verlet(self, u: np.ndarray, v: np.ndarray, dt: float):
        v = self.viscous(v, 0.5 * dt)
        v_half = v + (0.5 * dt) * self._cons_accel(u)
        u1 = u + dt * v_half
        a1 = self.model.conservative_accel(u1)
        v1 = v_half + (0.5 * dt) * a1
        self._a_cache = (u1, a1)
        v1 = self.viscous(v1, 0.5 * dt)
        return u1, v1

    def midpoint(self, u: np.ndarray, v: np.ndarray, dt: float):
        model, cfg = self.model, self.config
        m, mu = model.m, self.mu
        h = 0.5 * dt
        # unknown: midpoint velocity V; u_mid = u + h V, v_new = 2V - v
        V = v + h * model.accel(u, v)
        for _ in range(int(cfg.newton_max_iter)):
            u_mid = u + h * V
            a_mid = model.accel(u_mid, V)
            r = V - v - h * a_mid
            if not np.all(np.isfinite(r)):
                raise NewtonDivergence("non-finite Newton residual")
            if np.max(np.abs(r)) <= cfg.newton_tol:
                break
            J = np.diag(m) + (h * h) * model.stiffness(u_mid)
            if mu > 0:
                J += (h * mu) * model.L
            try:
                V = V - solve(J, m * r, assume_a="sym", check_finite=False)
            except (LinAlgError, ValueError) as exc:
                raise LinearSolveFailure(str(exc)) from exc
        else:
            raise NewtonDivergence(f"no convergence in {cfg.newton_max_iter} Newton iterations")
        u1 = u + dt * V
        model.check(u1)
        return u1, 2.0 * V - v

    def step(self, u, v, dt):
        if self.config.scheme == "implicit-midpoint":
            return self.midpoint(u, v, dt)
        return self.verlet(u, v, dt)


def _model(state: RodState, params: ModelParams, config: StepperConfig | None) -> tuple[RodModel, StepperConfig]:
    config = config or StepperConfig()
    model = RodModel(state.grid, params, config.eps_guard, config.h_guard_for(params))
    return model, config


def step_verlet(state: RodState, dt: float, params: ModelParams, config: StepperConfig | None = None) -> RodState:
    """One split velocity-Verlet step; raises :class:`BarrierViolation` on a guard breach."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    model, config = _model(state, params, config)
    u1, v1 = _Stepper(model, config).verlet(state.u, state.v, dt)
    return RodState(state.t + dt, u1, v1)


def step_implicit_midpoint(state: RodState, dt: float, params: ModelParams, config: StepperConfig | None = None) -> RodState:
    """One implicit-midpoint step solved by Newton iteration."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    model, config = _model(state, params, config)
    u1, v1 = _Stepper(model, config).midpoint(state.u, state.v, dt)
    return RodState(state.t + dt, u1, v1)


def run(
    initial: RodState,
    params: ModelParams,
    stepper: StepperConfig,
    t_end: float,
    output_every: int = 1,
    meta: dict | None = None,
    log_every: int = 10000,
    on_record=None,
) -> Trajectory:
    """Advance ``initial`` to ``t_end`` with adaptive, barrier-aware stepping.

    A rejected step (guard breach, Newton failure, failed linear solve)
    multiplies ``dt`` by ``barrier_shrink``; ten consecutive accepted steps
    grow it back by ``1 / barrier_shrink`` up to ``dt_max``.  Every
    ``output_every`` accepted steps, and at ``t_end``, a record is stored.

    ``on_record(record)`` is called for each stored record, in order.

    Raises :class:`StepFloor` (carrying the partial trajectory) when a step at
    ``dt_min`` is still rejected.
    """
    if not t_end > initial.t:
        raise BadConfig("t_end must exceed the initial time")
    if int(output_every) < 1:
        raise BadConfig("output_every must be >= 1")
    check_state(initial, params)
    model = RodModel(initial.grid, params, stepper.eps_guard, stepper.h_guard_for(params))
    model.check(initial.u)
    core = _Stepper(model, stepper)

    traj = Trajectory(meta=dict(meta or {}))
    traj.meta.setdefault("params", params)
    traj.meta.setdefault("stepper", asdict(stepper))

    u, v, t = initial.u, initial.v, initial.t
    dx = initial.grid.dx
    min_slope = float(np.min(np.diff(u))) / dx
    min_height = float(u[0])
    D = 0.0
    P = model.dissipation_rate(v)
    def store(rec):
        traj.append(rec)
        if on_record is not None:
            on_record(rec)

    store(Record(t, RodState(t, u, v), model.energy(u, v), D))

    dt = stepper.dt_init
    clean = 0
    steps = 0
    shrink = stepper.barrier_shrink
    span = t_end - initial.t
    while t < t_end:
        h = dt
        if t + h >= t_end or t_end - (t + h) < 1e-6 * h:
            h = t_end - t
        try:
            u1, v1 = core.step(u, v, h)
        except (BarrierViolation, NewtonDivergence, LinearSolveFailure) as exc:
            clean = 0
            if dt <= stepper.dt_min:
                raise StepFloor(
                    f"step rejected at dt_min={stepper.dt_min} (t={t!r}): {exc}",
                    state=RodState(t, u, v),
                    trajectory=traj,
                ) from exc
            dt = max(dt * shrink, stepper.dt_min)
            logger.debug("rejected step at t=%r: %s; dt -> %r", t, exc, dt)
            continue
        P1 = model.dissipation_rate(v1)
        D += 0.5 * h * (P + P1)
        P = P1
        t_new = t + h
        if h == t_end - t:
            t_new = t_end
        u, v, t = u1, v1, t_new
        # hard invariants over every accepted state, not only stored ones
        min_slope = min(min_slope, float(np.min(np.diff(u))) / dx)
        min_height = min(min_height, float(u[0]))
        steps += 1
        clean += 1
        if clean >= 10 and dt < stepper.dt_max:
            dt = min(dt / shrink, stepper.dt_max)
            clean = 0
        if steps % output_every == 0 or t >= t_end:
            e = model.energy(u, v)
            store(Record(t, RodState(t, u, v), e, D))
            if log_every and steps % log_every < output_every:
                logger.info(
                    "step=%d t=%.6g dt=%.3g G=%.12g D=%.6g progress=%.1f%%",
                    steps, t, dt, e.total_G, D, 100.0 * (t - initial.t) / span,
                )
    traj.meta["accepted_steps"] = steps
    traj.meta["min_slope_accepted"] = min_slope
    traj.meta["min_height_accepted"] = min_height
    traj.meta["max_strain_seen"] = model.max_strain_seen
    traj.meta["max_height_seen"] = model.max_height_seen
    return traj
