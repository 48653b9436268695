"""Spatial discretisation of the rod on a uniform staggered grid.

Heights ``u`` and velocities ``v`` live on the ``n_cells + 1`` nodes; strains,
stresses and velocity gradients live on cells.  The node masses are lumped
(``dx`` inside, ``dx/2`` at both ends; unit density), so that

* the stress divergence is a flux difference ``f(eps_j) - f(eps_{j-1})``,
* the floor reaction enters node 0 as a boundary flux,
* the bending force is the exact gradient of ``gamma/2 * sum(dx * kappa_i^2)``
  where ``kappa_i`` are nodal second differences with ``u_xx = 0`` imposed at
  both ends (equivalent to the 5-point stencil with ghost nodes eliminated).

Every conservative force is therefore minus the gradient of
:func:`discrete_energy`, which is what makes the discrete energy ledger close.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.optimize import brentq

from .constitutive import FloorLaw, StressLaw
from .errors import BadConfig, BarrierViolation, InvariantViolation

Profile = Union[Callable[[np.ndarray], np.ndarray], np.ndarray, float]


@dataclass(frozen=True)
class Grid:
    n_cells: int

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise BadConfig(f"n_cells must be an integer >= 2, got {self.n_cells}")

    @property
    def dx(self) -> float:
        return 1.0 / self.n_cells

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.dx

    @property
    def x_mid(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def masses(self) -> np.ndarray:
        m = np.full(self.n_cells + 1, self.dx)
        m[0] = m[-1] = 0.5 * self.dx
        return m


def make_grid(n_cells: int) -> Grid:
    return Grid(n_cells)


@dataclass(frozen=True, eq=False)
class RodState:
    t: float
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        v = np.array(self.v, dtype=float)
        if u.ndim != 1 or u.shape != v.shape:
            raise BadConfig(f"u and v must be 1-D of equal length, got {u.shape}, {v.shape}")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "t", float(self.t))

    @property
    def grid(self) -> Grid:
        return Grid(len(self.u) - 1)


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of the beam equation plus the two constitutive laws."""

    gamma: float = 0.0
    mu: float = 0.0
    g: float = -1.0
    stress: object = field(default_factory=StressLaw)
    floor: object = field(default_factory=FloorLaw)

    def __post_init__(self):
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise BadConfig(f"gamma must be >= 0, got {self.gamma}")
        if not (self.mu >= 0 and math.isfinite(self.mu)):
            raise BadConfig(f"mu must be >= 0, got {self.mu}")
        if not math.isfinite(self.g):
            raise BadConfig(f"g must be finite, got {self.g}")

    @property
    def beta(self) -> float:
        return -self.floor.lower


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    bending: float
    elastic: float
    floor: float
    gravity: float

    @property
    def total_G(self) -> float:
        return self.kinetic + self.bending + self.elastic + self.floor + self.gravity

    def as_dict(self) -> dict:
        return {
            "kinetic": self.kinetic,
            "bending": self.bending,
            "elastic": self.elastic,
            "floor": self.floor,
            "gravity": self.gravity,
            "total_G": self.total_G,
        }


def _second_difference_matrix(n_cells: int, dx: float) -> np.ndarray:
    n = n_cells + 1
    B = np.zeros((n_cells - 1, n))
    for k in range(n_cells - 1):
        B[k, k : k + 3] = (1.0, -2.0, 1.0)
    return B / (dx * dx)


class RodModel:
    """Precomputed operators for one grid and parameter set.

    The integrators call into this directly; the module-level functions are
    thin wrappers around it.
    """

    def __init__(self, grid: Grid, params: ModelParams, eps_guard: float = 0.0, h_guard: float = 0.0):
        self.grid = grid
        self.params = params
        self.dx = grid.dx
        self.m = grid.masses
        self.inv_m = 1.0 / self.m
        self.gm = params.g * self.m
        self.strain_floor = -1.0 + eps_guard
        self.height_floor = -params.beta + h_guard
        n = grid.n_cells + 1
        self.B = _second_difference_matrix(grid.n_cells, self.dx)
        self.K_bend = params.gamma * self.dx * (self.B.T @ self.B) if params.gamma > 0 else None
        # viscous operator L = D^T D / dx with D the nodal difference
        D = np.zeros((grid.n_cells, n))
        idx = np.arange(grid.n_cells)
        D[idx, idx] = -1.0
        D[idx, idx + 1] = 1.0
        self.L = (D.T @ D) / self.dx
        # largest arguments ever handed to the laws; lets a truncation level be
        # chosen afterwards that provably never bites
        self.max_strain_seen = -math.inf
        self.max_height_seen = -math.inf

    # -- checks -----------------------------------------------------------
    def strains(self, u: np.ndarray) -> np.ndarray:
        return np.diff(u) / self.dx - 1.0

    def check(self, u: np.ndarray, eps: np.ndarray | None = None) -> np.ndarray:
        if eps is None:
            eps = self.strains(u)
        emin = eps.min()
        if not emin > self.strain_floor:
            raise BarrierViolation(f"min strain {emin!r} not above {self.strain_floor!r}")
        if not u[0] > self.height_floor:
            raise BarrierViolation(f"edge height {u[0]!r} not above {self.height_floor!r}")
        return eps

    # -- forces -----------------------------------------------------------
    def conservative_force(self, u: np.ndarray) -> np.ndarray:
        """Nodal force from stress, floor, gravity and bending (not divided by mass)."""
        eps = self.check(u)
        emax = eps.max()
        if emax > self.max_strain_seen:
            self.max_strain_seen = emax
        if u[0] > self.max_height_seen:
            self.max_height_seen = u[0]
        fs = self.params.stress.value(eps)
        F = np.diff(np.concatenate(([0.0], fs, [0.0])))
        F[0] += self.params.floor.value(u[0])
        F += self.gm
        if self.K_bend is not None:
            F -= self.K_bend @ u
        return F

    def viscous_force(self, v: np.ndarray) -> np.ndarray:
        return -self.params.mu * (self.L @ v)

    def conservative_accel(self, u: np.ndarray) -> np.ndarray:
        return self.conservative_force(u) * self.inv_m

    def accel(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        F = self.conservative_force(u)
        if self.params.mu > 0:
            F += self.viscous_force(v)
        return F * self.inv_m

    def stiffness(self, u: np.ndarray) -> np.ndarray:
        """Hessian of the potential energy (minus the Jacobian of the conservative force)."""
        eps = self.check(u)
        k = self.params.stress.derivative(eps) / self.dx
        n = len(u)
        K = np.zeros((n, n))
        i = np.arange(n - 1)
        K[i, i] += k
        K[i + 1, i + 1] += k
        K[i, i + 1] -= k
        K[i + 1, i] -= k
        K[0, 0] -= self.params.floor.derivative(u[0])
        if self.K_bend is not None:
            K += self.K_bend
        return K

    def dissipation_rate(self, v: np.ndarray) -> float:
        """``mu * |u_tx|_H^2`` with the velocity gradient taken on cells."""
        if self.params.mu == 0:
            return 0.0
        dv = np.diff(v)
        return self.params.mu * float(dv @ dv) / self.dx

    # -- energy -----------------------------------------------------------
    def energy(self, u: np.ndarray, v: np.ndarray) -> EnergyBreakdown:
        p = self.params
        eps = self.strains(u)
        kinetic = 0.5 * float(self.m @ (v * v))
        if p.gamma > 0:
            curv = self.B @ u
            bending = 0.5 * p.gamma * self.dx * float(curv @ curv)
        else:
            bending = 0.0
        elastic = float(np.sum(p.stress.potential(eps))) * self.dx
        floor = -float(p.floor.potential(u[0]))
        gravity = -p.g * float(self.m @ u)
        return EnergyBreakdown(kinetic, bending, elastic, floor, gravity)

    def potential_energy(self, u: np.ndarray) -> float:
        e = self.energy(u, np.zeros_like(u))
        return e.bending + e.elastic + e.floor + e.gravity


def _sample(profile: Profile, x: np.ndarray) -> np.ndarray:
    if callable(profile):
        out = np.asarray(profile(x), dtype=float)
        return np.broadcast_to(out, x.shape).astype(float)
    arr = np.asarray(profile, dtype=float)
    if arr.ndim == 0:
        return np.full(x.shape, float(arr))
    if arr.shape != x.shape:
        raise BadConfig(f"nodal profile has {arr.size} values, grid has {x.size} nodes")
    return arr.copy()


def check_state(state: RodState, params: ModelParams) -> None:
    """Raise :class:`InvariantViolation` unless ``u_x > 0`` on all cells and ``u[0] > -beta``."""
    u = state.u
    ux = np.diff(u) * (len(u) - 1)
    if not np.all(ux > 0):
        raise InvariantViolation(f"non-positive cell slope u_x (min {ux.min()!r})")
    if not u[0] > -params.beta:
        raise InvariantViolation(f"edge height {u[0]!r} at or below -beta = {-params.beta!r}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(state.v))):
        raise InvariantViolation("non-finite state")


def initial_state(grid: Grid, u0_profile: Profile, v0_profile: Profile, params: ModelParams | None = None) -> RodState:
    """Sample initial height and velocity profiles at the grid nodes.

    Profiles may be callables of ``x``, nodal arrays, or constants.
    """
    x = grid.x
    state = RodState(0.0, _sample(u0_profile, x), _sample(v0_profile, x))
    check_state(state, params if params is not None else ModelParams())
    return state


def strain_field(grid: Grid, state: RodState) -> np.ndarray:
    return np.diff(state.u) / grid.dx - 1.0


def assemble_accel(grid: Grid, state: RodState, params: ModelParams, eps_guard: float = 0.0, h_guard: float = 0.0) -> np.ndarray:
    """Nodal accelerations of the semidiscrete beam equation.

    Raises :class:`InvariantViolation` (as its subclass
    :class:`BarrierViolation`) when a strain is at or below ``-1 + eps_guard``
    or the edge is at or below ``-beta + h_guard``.
    """
    return RodModel(grid, params, eps_guard, h_guard).accel(state.u, state.v)


def discrete_energy(grid: Grid, state: RodState, params: ModelParams) -> EnergyBreakdown:
    return RodModel(grid, params).energy(state.u, state.v)


@dataclass(frozen=True)
class Observables:
    com_height: float
    min_strain: float
    floor_gap: float
    signorini_defect: float

    def as_dict(self) -> dict:
        return {
            "com_height": self.com_height,
            "min_strain": self.min_strain,
            "floor_gap": self.floor_gap,
            "signorini_defect": self.signorini_defect,
        }


def observables(grid: Grid, state: RodState) -> Observables:
    """Centre-of-mass height, minimum strain, edge height and Signorini defect.

    The defect ``|min(u(0), 0) * u_x(0)|`` measures how far the penalty floor
    lets the edge sink below the hard-contact complementarity condition; it
    is a diagnostic only and is expected to be nonzero during contact.
    """
    u = state.u
    eps = np.diff(u) / grid.dx - 1.0
    ux0 = eps[0] + 1.0
    return Observables(
        com_height=float(grid.masses @ u),
        min_strain=float(eps.min()),
        floor_gap=float(u[0]),
        signorini_defect=abs(min(float(u[0]), 0.0) * ux0),
    )


def static_equilibrium(grid: Grid, params: ModelParams, tol: float = 1e-13, max_iter: int = 50) -> RodState:
    """Rod at rest on the floor with the floor reaction balancing gravity.

    For ``gamma = 0`` each cell stress equals the weight of the nodes above
    it, which is inverted cell by cell; the edge height solves
    ``sigma_b(u0) = -g``.  With bending the result is polished by Newton
    iteration on the full nodal force balance.
    """
    if not params.g < 0:
        raise BadConfig("a resting equilibrium needs downward gravity (g < 0)")
    m = grid.masses
    weight_above = params.g * (np.cumsum(m[::-1])[::-1][1:])  # cells 0..N-1
    law = params.stress
    eps = np.empty(grid.n_cells)
    for j, target in enumerate(weight_above):
        lo = -1.0 + 1e-15
        eps[j] = brentq(lambda e: law.value(e) - target, lo, 0.0, xtol=1e-16, rtol=1e-15)
    b = params.beta
    weight = params.g * float(m.sum())
    u0 = brentq(lambda h: params.floor.value(h) + weight, -b * (1 - 1e-15), 0.0, xtol=1e-17, rtol=1e-15)
    u = np.concatenate(([u0], u0 + np.cumsum((1.0 + eps) * grid.dx)))
    if params.gamma > 0:
        model = RodModel(grid, params)
        for _ in range(max_iter):
            F = model.conservative_force(u)
            if np.max(np.abs(F * model.inv_m)) <= tol:
                break
            du = np.linalg.solve(model.stiffness(u), F)
            u = u + du
            # the residual bottoms out at round-off times 1/dx; stop on a stalled update
            if np.max(np.abs(du)) <= 1e-15 * np.max(np.abs(u)):
                break
        else:
            raise ArithmeticError("static equilibrium Newton iteration did not converge")
    state = RodState(0.0, u, np.zeros_like(u))
    check_state(state, params)
    return state
