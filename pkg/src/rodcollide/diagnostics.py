"""Checks run on finished trajectories.

Nothing here re-steps the model: every diagnostic works from the stored
records only (times, nodal ``u`` and ``v``, the energy breakdown and ``D``).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .constitutive import coercivity_constants
from .errors import BadTest, NoBounces
from .integrate import Trajectory
from .rod import Grid, ModelParams, static_equilibrium

WORKERS_ENV = "RODCOLLIDE_WORKERS"


def _params(traj: Trajectory) -> ModelParams:
    p = traj.meta.get("params")
    if not isinstance(p, ModelParams):
        raise ValueError("trajectory meta lacks ModelParams under 'params'")
    return p


def _grid(traj: Trajectory) -> Grid:
    return Grid(len(traj.records[0].state.u) - 1)


def _trapezoid_cumulative(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y, dtype=float)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


# ---------------------------------------------------------------- energy ledger


@dataclass
class EnergyLedger:
    t: np.ndarray
    G: np.ndarray
    D: np.ndarray
    defect: np.ndarray
    bound_lhs: np.ndarray
    bound_rhs: np.ndarray

    @property
    def G0(self) -> float:
        return float(self.G[0])

    @property
    def max_relative_defect(self) -> float:
        return float(np.max(self.defect) / abs(self.G0)) if self.G0 != 0 else float(np.max(self.defect))

    @property
    def max_drift(self) -> float:
        return float(np.max(np.abs(self.G - self.G0)))

    @property
    def bound_violations(self) -> np.ndarray:
        return np.flatnonzero(self.bound_lhs > self.bound_rhs)


def energy_ledger(traj: Trajectory) -> EnergyLedger:
    """Per-record ``G``, ``D`` and ``|G(0) - G(t) - D(t)|``, plus the a-priori bound.

    The bound compares

        KE + bending + D + c_f * int 1/u_x^2 - sigma_b_hat(u(t,0))

    against ``C0 + C_f + |g| int_0^t |u_t|_H``, where ``C0`` is the initial
    energy without the gravity term.  It follows from the energy identity and
    the coercivity of ``f_hat`` for either sign of ``g``.
    """
    p = _params(traj)
    grid = _grid(traj)
    t, G, D = traj.t, traj.G, traj.D
    C_f, c_f = coercivity_constants(p.stress)
    U, V = traj.u, traj.v
    ux = np.diff(U, axis=1) / grid.dx
    inv = np.sum(grid.dx / ux**2, axis=1)
    kin = np.array([r.energy.kinetic for r in traj.records])
    bend = np.array([r.energy.bending for r in traj.records])
    floor = np.array([r.energy.floor for r in traj.records])
    e0 = traj.records[0].energy
    C0 = e0.kinetic + e0.bending + e0.elastic + e0.floor
    speed = np.sqrt(np.maximum(V**2 @ grid.masses, 0.0))
    lhs = kin + bend + D + c_f * inv + floor
    rhs = C0 + C_f + abs(p.g) * _trapezoid_cumulative(speed, t)
    return EnergyLedger(t, G, D, np.abs(G[0] - G - D), lhs, rhs)


# ---------------------------------------------------------------- weak form


@dataclass(frozen=True)
class TestFunction:
    """Space-time test function with its derivatives.

    Each callable takes ``(t, x)`` arrays that broadcast against each other.
    ``T`` is the final time at which ``eta`` must vanish.
    """

    __test__ = False  # not a pytest class

    eta: Callable
    eta_t: Callable
    eta_x: Callable
    eta_xx: Callable
    T: float
    label: str = ""

    def __add__(self, other: "TestFunction") -> "TestFunction":
        return TestFunction(
            lambda t, x: self.eta(t, x) + other.eta(t, x),
            lambda t, x: self.eta_t(t, x) + other.eta_t(t, x),
            lambda t, x: self.eta_x(t, x) + other.eta_x(t, x),
            lambda t, x: self.eta_xx(t, x) + other.eta_xx(t, x),
            self.T,
            f"({self.label})+({other.label})",
        )


def separable(phi, dphi, psi, dpsi, ddpsi, T: float, label: str = "") -> TestFunction:
    """``eta(t, x) = phi(t) * psi(x)``."""
    return TestFunction(
        lambda t, x: phi(t) * psi(x),
        lambda t, x: dphi(t) * psi(x),
        lambda t, x: phi(t) * dpsi(x),
        lambda t, x: phi(t) * ddpsi(x),
        T,
        label,
    )


_SPATIAL = [
    ("1", lambda x: np.ones_like(x), lambda x: np.zeros_like(x), lambda x: np.zeros_like(x)),
    ("x", lambda x: x, lambda x: np.ones_like(x), lambda x: np.zeros_like(x)),
    ("x^2", lambda x: x**2, lambda x: 2 * x, lambda x: 2 * np.ones_like(x)),
    ("x^3", lambda x: x**3, lambda x: 3 * x**2, lambda x: 6 * x),
    ("(1-x)^3", lambda x: (1 - x) ** 3, lambda x: -3 * (1 - x) ** 2, lambda x: 6 * (1 - x)),
    ("x^2(1-x)^2", lambda x: x**2 * (1 - x) ** 2,
     lambda x: 2 * x * (1 - x) ** 2 - 2 * x**2 * (1 - x),
     lambda x: 2 * (1 - x) ** 2 - 8 * x * (1 - x) + 2 * x**2),
    ("sin(pi x/2)", lambda x: np.sin(0.5 * np.pi * x), lambda x: 0.5 * np.pi * np.cos(0.5 * np.pi * x),
     lambda x: -0.25 * np.pi**2 * np.sin(0.5 * np.pi * x)),
    ("exp(x)", np.exp, np.exp, np.exp),
]


def default_test_family(T: float) -> list[TestFunction]:
    """Eight test functions ``(1 - t/T) * psi(x)``.

    The time factor is linear so that the trapezoid rule in time is exact on
    the free-fall solution; the spatial factors span polynomials up to
    degree four, a sine and an exponential profile (each with nonzero
    mean, so no family member has all its integrals vanish on free fall).
    """
    return [
        separable(lambda t: 1.0 - t / T, lambda t: -np.ones_like(t) / T, psi, dpsi, ddpsi, T,
                  f"(1-t/T)*{name}")
        for name, psi, dpsi, ddpsi in _SPATIAL
    ]


def polynomial_time_family(T: float, power: int) -> list[TestFunction]:
    """``(1 - t/T)^power * psi(x)`` over the same spatial profiles."""
    return [
        separable(lambda t, k=power: (1.0 - t / T) ** k,
                  lambda t, k=power: -k * (1.0 - t / T) ** (k - 1) / T,
                  psi, dpsi, ddpsi, T, f"(1-t/T)^{power}*{name}")
        for name, psi, dpsi, ddpsi in _SPATIAL
    ]


def weak_form_terms(traj: Trajectory, test: TestFunction) -> dict:
    """Signed integrals of the weak formulation for one test function.

    Space: trapezoid on nodes for ``u_t eta_t``, ``g eta`` and
    ``u_xx eta_xx``; cell differences of ``eta`` against cell stresses and
    cell velocity gradients.  Time: trapezoid on record times.
    """
    p = _params(traj)
    grid = _grid(traj)
    t = traj.t
    T = float(t[-1])
    x = grid.x
    scale = max(1.0, float(np.max(np.abs(test.eta(np.zeros_like(x), x)))))
    if np.max(np.abs(test.eta(np.full_like(x, T), x))) > 1e-12 * scale:
        raise BadTest(f"test function {test.label!r} does not vanish at T={T}")
    U, V = traj.u, traj.v
    m = grid.masses
    tt, xx = t[:, None], x[None, :]
    eta = np.broadcast_to(test.eta(tt, xx), U.shape)
    eta_t = np.broadcast_to(test.eta_t(tt, xx), U.shape)

    eps = np.diff(U, axis=1) / grid.dx - 1.0
    stress = p.stress.value(eps)
    d_eta = np.diff(eta, axis=1)

    def time_int(y):
        return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))

    terms = {
        "inertia": -time_int((V * eta_t) @ m),
        "stress": time_int(np.sum(stress * d_eta, axis=1)),
        "bending": 0.0,
        "viscous": 0.0,
        "initial": float((V[0] * eta[0]) @ m),
        "gravity": time_int(p.g * (eta @ m)),
        "floor": time_int(p.floor.value(U[:, 0]) * eta[:, 0]),
    }
    if p.gamma > 0:
        eta_xx = np.broadcast_to(test.eta_xx(tt, xx), U.shape)
        curv = np.zeros_like(U)
        curv[:, 1:-1] = (U[:, 2:] - 2 * U[:, 1:-1] + U[:, :-2]) / grid.dx**2
        terms["bending"] = p.gamma * time_int((curv * eta_xx) @ m)
    if p.mu > 0:
        terms["viscous"] = p.mu * time_int(np.sum(np.diff(V, axis=1) / grid.dx * d_eta, axis=1))
    return terms


_LEFT = ("inertia", "stress", "bending", "viscous")
_RIGHT = ("initial", "gravity", "floor")


def signed_residual(terms: dict) -> float:
    return sum(terms[k] for k in _LEFT) - sum(terms[k] for k in _RIGHT)


def weak_residual(traj: Trajectory, tests: Sequence[TestFunction]) -> np.ndarray:
    """Normalised residual ``|LHS - RHS| / sum |terms|`` per test function."""
    out = []
    for test in tests:
        terms = weak_form_terms(traj, test)
        scale = sum(abs(v) for v in terms.values())
        out.append(abs(signed_residual(terms)) / scale if scale > 0 else 0.0)
    return np.array(out)


# ---------------------------------------------------------------- bounces


@dataclass
class BounceReport:
    """Impact windows, apexes and restitution estimates.

    Restitution is measured from centre-of-mass apex heights above the
    resting height ``rest_height``:
    ``e_k = sqrt((apex_{k+1} - rest) / (apex_k - rest))``.  The rod's centre
    of mass follows an exact parabola in flight, so each apex is refined by
    the parabola through the three records around the sampled maximum.
    """

    windows: list = field(default_factory=list)
    apex_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    apex_heights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rest_height: float = 0.0
    restitution: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _parabola_peak(t3, y3):
    (t0, t1, t2), (y0, y1, y2) = t3, y3
    # Newton divided differences of the interpolating quadratic
    d1 = (y1 - y0) / (t1 - t0)
    d2 = ((y2 - y1) / (t2 - t1) - d1) / (t2 - t0)
    if not d2 < 0:
        return t1, y1
    # q(s) = y0 + d1 (s - t0) + d2 (s - t0)(s - t1)
    ts = 0.5 * (t0 + t1) - d1 / (2 * d2)
    if not t0 <= ts <= t2:
        return t1, y1
    return ts, y0 + d1 * (ts - t0) + d2 * (ts - t0) * (ts - t1)


def resting_height(params: ModelParams, grid: Grid) -> float:
    """Centre-of-mass height of the rod at rest on the floor (0 without downward gravity)."""
    if not params.g < 0:
        return 0.0
    return float(grid.masses @ static_equilibrium(grid, params).u)


def detect_bounces(traj: Trajectory, rest_height: float | None = None) -> BounceReport:
    """Impact windows from sign changes of ``u(., 0)``; one apex per flight phase."""
    t = traj.t
    U = traj.u
    grid = _grid(traj)
    contact = U[:, 0] < 0
    if not contact.any():
        raise NoBounces("the rod edge never went below the floor")
    if rest_height is None:
        rest_height = resting_height(_params(traj), grid)
    com = U @ grid.masses

    idx = np.flatnonzero(contact)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    ends = np.concatenate((idx[breaks], [idx[-1]]))
    windows = [(float(t[a]), float(t[b])) for a, b in zip(starts, ends)]

    # flight phases: before the first window, between windows, after the last
    phases = [(0, starts[0] - 1)]
    phases += [(e + 1, s - 1) for e, s in zip(ends[:-1], starts[1:])]
    phases.append((ends[-1] + 1, len(t) - 1))
    apex_t, apex_h = [], []
    last = len(t) - 1
    for a, b in phases:
        if b < a:
            continue
        k = a + int(np.argmax(com[a : b + 1]))
        if k == last:
            continue  # still rising when the run stopped
        if k == 0:
            apex_t.append(float(t[0]))
            apex_h.append(float(com[0]))
            continue
        if k == a or k == b:
            continue  # monotone flight phase, no interior maximum
        tk, hk = _parabola_peak(t[k - 1 : k + 2], com[k - 1 : k + 2])
        apex_t.append(float(tk))
        apex_h.append(float(hk))
    heights = np.array(apex_h)
    above = heights - rest_height
    with np.errstate(invalid="ignore", divide="ignore"):
        e = np.sqrt(above[1:] / above[:-1]) if len(above) > 1 else np.zeros(0)
    return BounceReport(windows, np.array(apex_t), heights, float(rest_height), e)


# ---------------------------------------------------------------- strain bound


@dataclass
class StrainBound:
    r1: np.ndarray
    r2: np.ndarray
    bound: np.ndarray
    min_ux: np.ndarray
    informational: bool  # gamma == 0: the bound is outside its hypotheses

    @property
    def ok(self) -> np.ndarray:
        return self.min_ux >= self.bound

    @property
    def violations(self) -> np.ndarray:
        finite = np.isfinite(self.r1) & np.isfinite(self.r2)
        return np.flatnonzero(finite & ~self.ok)


def strain_bound_check(traj: Trajectory) -> StrainBound:
    """Lower bound ``(r2/sqrt 2) exp(-r1 r2^2)`` on ``z = u_x`` for every record.

    ``r1 = int 1/z^2`` and ``r2 = |z|_{H^1}`` are computed from the cell
    slopes (piecewise constant) and their differences between neighbouring
    cells.  Failures are reported, never raised.
    """
    grid = _grid(traj)
    U = traj.u
    z = np.diff(U, axis=1) / grid.dx
    r1 = np.sum(grid.dx / z**2, axis=1)
    dz = np.diff(z, axis=1) / grid.dx
    r2 = np.sqrt(np.sum(z**2, axis=1) * grid.dx + np.sum(dz**2, axis=1) * grid.dx)
    with np.errstate(over="ignore", invalid="ignore"):
        bound = r2 / math.sqrt(2.0) * np.exp(-r1 * r2**2)
    return StrainBound(r1, r2, bound, z.min(axis=1), _params(traj).gamma == 0)


# ---------------------------------------------------------------- convergence


EXACT_REGIME = 1e-11


@dataclass
class ConvergenceReport:
    n_cells: list
    dt: list
    state_error: np.ndarray
    energy_defect: np.ndarray
    weak_residual: np.ndarray
    state_order: np.ndarray
    energy_order: np.ndarray
    weak_order: np.ndarray
    exact_regime: bool

    def rows(self) -> list[dict]:
        out = []
        for k in range(len(self.n_cells)):
            out.append({
                "level": k,
                "n_cells": self.n_cells[k],
                "dt": self.dt[k],
                "state_error": float(self.state_error[k]) if k < len(self.state_error) else None,
                "energy_defect": float(self.energy_defect[k]),
                "weak_residual": float(self.weak_residual[k]),
            })
        return out


def _orders(err: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log2(err[:-1] / err[1:])


def convergence_study(base_config, levels: int, workers: int | None = None) -> ConvergenceReport:
    """Run ``base_config`` at ``(dx, dt) / 2^k`` for ``k < levels`` and estimate orders.

    Terminal-state errors are taken against the finest level at the coarse
    nodes (grids are nested); energy defects and weak residuals need no
    reference.  Orders are base-2 logarithms of successive error ratios.
    Runs are independent and fan out over ``workers`` threads (default from
    the ``RODCOLLIDE_WORKERS`` environment variable, else 1).
    """
    from .config import execute, refine

    if levels < 3:
        raise ValueError("a convergence study needs at least 3 levels")
    configs = [refine(base_config, 2**k) for k in range(levels)]
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)

    def one(k):
        try:
            return execute(configs[k])
        except Exception as exc:
            raise type(exc)(f"level {k}: {exc}") from exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        trajs = list(pool.map(one, range(levels)))

    finest = trajs[-1]
    uf, vf = finest.records[-1].state.u, finest.records[-1].state.v
    state_err = []
    for k, tr in enumerate(trajs[:-1]):
        stride = 2 ** (levels - 1 - k)
        u, v = tr.records[-1].state.u, tr.records[-1].state.v
        state_err.append(max(np.max(np.abs(u - uf[::stride])), np.max(np.abs(v - vf[::stride]))))
    state_err = np.array(state_err)
    defects = np.array([energy_ledger(tr).max_relative_defect for tr in trajs])
    weak = np.array([np.max(weak_residual(tr, default_test_family(tr.t[-1]))) for tr in trajs])
    exact = bool(np.all(state_err <= EXACT_REGIME) and np.all(defects <= EXACT_REGIME))
    return ConvergenceReport(
        n_cells=[c.n_cells for c in configs],
        dt=[c.stepper.dt_init for c in configs],
        state_error=state_err,
        energy_defect=defects,
        weak_residual=weak,
        state_order=_orders(state_err),
        energy_order=_orders(defects),
        weak_order=_orders(weak),
        exact_regime=exact,
    )
