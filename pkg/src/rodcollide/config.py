"""Run configuration: INI parsing, presets and execution.

A configuration file has the sections below; every key is optional except
where noted, and unknown sections or keys are rejected::

    [model]    gamma mu g kappa kappa_b beta truncation
    [grid]     n_cells
    [initial]  kind (rigid-drop | nodal | equilibrium) h0 v_c u v
    [stepper]  scheme dt_init dt_min dt_max newton_tol newton_max_iter
               eps_guard h_guard barrier_shrink
    [run]      t_end output_every
    [output]   path

``truncation`` is ``none``, ``auto`` or a positive number ``N``; both the
stress and the floor law are then frozen above ``N``.  ``auto`` runs the
untruncated laws and afterwards reports a level ten times above anything the
run evaluated, at which the truncated run is bit-identical.
``u`` and ``v`` (for ``kind = nodal``) are whitespace-separated nodal values.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, fields
from typing import Optional, Union

import numpy as np

from .constitutive import FloorLaw, StressLaw, truncate
from .errors import BadConfig, UnknownPreset
from .integrate import SCHEMES, StepperConfig, Trajectory, run
from .rod import Grid, ModelParams, RodState, initial_state, static_equilibrium

INITIAL_KINDS = ("rigid-drop", "nodal", "equilibrium")

# physical constants used by the presets are choices of this package,
# picked so that each impact is a single clean contact
PRESET_NOTE = "preset constants (kappa, kappa_b, beta, g, h0) are package defaults"


@dataclass(frozen=True)
class RunConfig:
    gamma: float = 0.0
    mu: float = 0.0
    g: float = -1.0
    kappa: float = 1.0
    kappa_b: float = 1.0
    beta: float = 0.1
    truncation: Union[str, float] = "auto"
    n_cells: int = 5
    initial: str = "rigid-drop"
    h0: float = 1.0
    v_c: float = 0.0
    u: Optional[tuple] = None
    v: Optional[tuple] = None
    stepper: StepperConfig = field(default_factory=StepperConfig)
    t_end: float = 1.0
    output_every: int = 1
    output_path: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.truncation, str):
            if self.truncation not in ("auto", "none"):
                raise BadConfig(f"truncation must be 'auto', 'none' or a number, got {self.truncation!r}")
        elif not (self.truncation > 0 and math.isfinite(self.truncation)):
            raise BadConfig(f"truncation level must be positive, got {self.truncation!r}")
        if self.initial not in INITIAL_KINDS:
            raise BadConfig(f"initial kind must be one of {INITIAL_KINDS}, got {self.initial!r}")
        if self.initial == "nodal":
            if self.u is None or self.v is None:
                raise BadConfig("initial kind 'nodal' needs both u and v")
            if not len(self.u) == len(self.v) == self.n_cells + 1:
                raise BadConfig(f"nodal u and v need n_cells + 1 = {self.n_cells + 1} values")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise BadConfig("t_end must be positive")
        if int(self.output_every) != self.output_every or self.output_every < 1:
            raise BadConfig("output_every must be a positive integer")
        # delegate the remaining checks to the runtime types
        self.params()
        Grid(self.n_cells)

    def params(self, level: Optional[float] = None) -> ModelParams:
        stress, floor = StressLaw(self.kappa), FloorLaw(self.kappa_b, self.beta)
        if level is None and not isinstance(self.truncation, str):
            level = self.truncation
        if level is not None:
            stress, floor = truncate(stress, level), truncate(floor, level)
        return ModelParams(self.gamma, self.mu, self.g, stress, floor)

    @property
    def grid(self) -> Grid:
        return Grid(self.n_cells)

    def initial_state(self) -> RodState:
        grid, params = self.grid, self.params()
        if self.initial == "rigid-drop":
            return initial_state(grid, lambda x: x + self.h0, self.v_c, params)
        if self.initial == "nodal":
            return initial_state(grid, np.array(self.u, float), np.array(self.v, float), params)
        return static_equilibrium(grid, params)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------- dict / INI

_SECTIONS = {
    "model": ("gamma", "mu", "g", "kappa", "kappa_b", "beta", "truncation"),
    "grid": ("n_cells",),
    "initial": ("kind", "h0", "v_c", "u", "v"),
    "stepper": tuple(f.name for f in fields(StepperConfig)),
    "run": ("t_end", "output_every"),
    "output": ("path",),
}
_RENAMED = {("initial", "kind"): "initial", ("output", "path"): "output_path"}
_INTS = {"n_cells", "output_every", "newton_max_iter"}
_STRINGS = {"kind", "scheme", "path"}


def to_dict(cfg: RunConfig) -> dict:
    """Sectioned plain-Python form of ``cfg`` (JSON-ready, lossless)."""
    out = {}
    for section, keys in _SECTIONS.items():
        sec = {}
        for key in keys:
            if section == "stepper":
                val = getattr(cfg.stepper, key)
            else:
                val = getattr(cfg, _RENAMED.get((section, key), key))
            if isinstance(val, tuple):
                val = list(val)
            sec[key] = val
        out[section] = sec
    return out


def _parse_value(key: str, raw):
    if raw is None or isinstance(raw, (list, tuple)):
        return None if raw is None else tuple(float(x) for x in raw)
    if not isinstance(raw, str):
        return int(raw) if key in _INTS else raw
    text = raw.strip()
    if text.lower() == "none" and key not in ("truncation",):
        return None
    if key in _STRINGS:
        return text
    if key == "truncation":
        return text.lower() if text.lower() in ("auto", "none") else float(text)
    if key in ("u", "v"):
        return tuple(float(x) for x in text.split())
    if key in _INTS:
        return int(text)
    return float(text)


def from_dict(data: dict) -> RunConfig:
    """Inverse of :func:`to_dict`; values may also be strings as read from INI."""
    kwargs, stepper = {}, {}
    for section, sec in data.items():
        if section not in _SECTIONS:
            raise BadConfig(f"unknown section [{section}]")
        for key, raw in sec.items():
            if key not in _SECTIONS[section]:
                raise BadConfig(f"unknown key {key!r} in [{section}]")
            try:
                val = _parse_value(key, raw)
            except (TypeError, ValueError) as exc:
                raise BadConfig(f"[{section}] {key}: cannot parse {raw!r}") from exc
            if section == "stepper":
                stepper[key] = val
            else:
                kwargs[_RENAMED.get((section, key), key)] = val
    kwargs["stepper"] = StepperConfig(**stepper)
    return RunConfig(**kwargs)


def _ini_value(val) -> str:
    if val is None:
        return "none"
    if isinstance(val, (list, tuple)):
        return " ".join(repr(float(x)) for x in val)
    if isinstance(val, float):
        return repr(val)
    return str(val)


def dumps(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for section, sec in to_dict(cfg).items():
        cp[section] = {k: _ini_value(v) for k, v in sec.items() if v is not None}
    from io import StringIO

    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()


def loads(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise BadConfig(f"malformed configuration: {exc}") from exc
    return from_dict({s: dict(cp[s]) for s in cp.sections()})


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


# ---------------------------------------------------------------- presets


def _bounce(mu: float, t_end: float) -> RunConfig:
    return RunConfig(
        gamma=0.0, mu=mu, g=-1.0, kappa=100.0, kappa_b=1.0, beta=0.5,
        n_cells=5, initial="rigid-drop", h0=1.0, v_c=0.0,
        stepper=StepperConfig(dt_init=1e-4, dt_max=1e-4),
        t_end=t_end, output_every=10,
    )


def preset(name: str) -> RunConfig:
    """Named configurations: ``fig5``, ``fig6``, ``freefall``, ``rest-equilibrium``."""
    if name == "fig5":
        return _bounce(0.0, 18.0)
    if name == "fig6":
        return _bounce(100.0, 16.0)
    if name == "freefall":
        # the edge reaches h0 - t_end^2/2 = 0.5 > 0: no contact
        return RunConfig(
            kappa=100.0, kappa_b=1.0, beta=0.5, n_cells=5, h0=1.0, v_c=0.0,
            stepper=StepperConfig(dt_init=1e-3, dt_max=1e-3), t_end=1.0, output_every=1,
        )
    if name == "rest-equilibrium":
        return RunConfig(
            kappa=100.0, kappa_b=1.0, beta=0.5, n_cells=5, initial="equilibrium",
            stepper=StepperConfig(scheme="implicit-midpoint", dt_init=1e-3, dt_max=1e-3),
            t_end=1.0, output_every=10,
        )
    raise UnknownPreset(f"unknown preset {name!r}; expected one of {PRESETS}")


PRESETS = ("fig5", "fig6", "freefall", "rest-equilibrium")


# ---------------------------------------------------------------- execution


def refine(cfg: RunConfig, factor: int) -> RunConfig:
    """Same physical problem with ``dx`` and all step sizes divided by ``factor``.

    ``output_every`` is kept, so finer levels also store records more
    densely in time; time quadratures over the records (weak residual)
    then refine together with the scheme.  Nodal initial data is
    interpolated linearly onto the finer grid.
    """
    if factor == 1:
        return cfg
    st = cfg.stepper
    stepper = dataclasses.replace(
        st, dt_init=st.dt_init / factor, dt_min=st.dt_min / factor, dt_max=st.dt_max / factor
    )
    changes = dict(n_cells=cfg.n_cells * factor, stepper=stepper)
    if cfg.initial == "nodal":
        xc, xf = cfg.grid.x, Grid(cfg.n_cells * factor).x
        changes["u"] = tuple(np.interp(xf, xc, cfg.u))
        changes["v"] = tuple(np.interp(xf, xc, cfg.v))
    return cfg.replace(**changes)


def resolve_truncation(cfg: RunConfig, traj: Trajectory) -> Optional[float]:
    """Truncation level actually in force (``auto``: one that provably never bit)."""
    if cfg.truncation == "none":
        return None
    if cfg.truncation == "auto":
        seen = max(traj.meta["max_strain_seen"], traj.meta["max_height_seen"], 1.0)
        return float(10.0 ** math.ceil(math.log10(10.0 * seen)))
    return float(cfg.truncation)


def execute(cfg: RunConfig, on_record=None, log_every: int = 10000) -> Trajectory:
    # "auto" runs the untruncated laws; below the resolved level they agree bit for bit
    params = cfg.params()
    traj = run(
        cfg.initial_state(), params, cfg.stepper, cfg.t_end,
        output_every=cfg.output_every, meta={"config": cfg},
        log_every=log_every, on_record=on_record,
    )
    traj.meta["truncation_level"] = resolve_truncation(cfg, traj)
    return traj
