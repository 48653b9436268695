"""Line-delimited JSON trajectory files.

One JSON object per line, tagged by ``kind``:

``header``   format name, version, configuration echo, grid
``record``   t, u, v, energy breakdown, D, observables (one per stored step)
``failure``  written instead of ``end`` when the solver hit its step floor
``end``      resolved truncation level, largest law arguments seen, step count

Floats are written with ``repr`` precision, so reading a file back yields
the in-memory values bit for bit.
"""

from __future__ import annotations

import json
from typing import IO, Optional

import numpy as np

from . import config as _config
from .errors import BadConfig, FormatError
from .integrate import Record, Trajectory
from .rod import EnergyBreakdown, Grid, RodState, observables

FORMAT = "rodcollide-trajectory"
VERSION = 1


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=True)


class TrajectoryWriter:
    """Streams a run to an open text file."""

    def __init__(self, fh: IO[str], cfg: "_config.RunConfig"):
        self.fh = fh
        self.cfg = cfg
        self.grid = cfg.grid
        self._line({
            "kind": "header",
            "format": FORMAT,
            "version": VERSION,
            "config": _config.to_dict(cfg),
            "note": _config.PRESET_NOTE,
            "grid": {"n_cells": self.grid.n_cells, "dx": self.grid.dx, "x": self.grid.x.tolist()},
        })

    def _line(self, obj):
        self.fh.write(_dump(obj))
        self.fh.write("\n")

    def record(self, rec: Record) -> None:
        self._line({
            "kind": "record",
            "t": rec.t,
            "u": rec.state.u.tolist(),
            "v": rec.state.v.tolist(),
            "energy": rec.energy.as_dict(),
            "D": rec.dissipation,
            "observables": observables(self.grid, rec.state).as_dict(),
        })

    def failure(self, message: str, state: Optional[RodState]) -> None:
        obj = {"kind": "failure", "message": message}
        if state is not None:
            obj.update(t=state.t, u=state.u.tolist(), v=state.v.tolist())
        self._line(obj)

    def end(self, traj: Trajectory) -> None:
        self._line({
            "kind": "end",
            "config_resolved": {"truncation": traj.meta.get("truncation_level")},
            "max_seen": {
                "strain": traj.meta.get("max_strain_seen"),
                "height": traj.meta.get("max_height_seen"),
            },
            "accepted_steps": traj.meta.get("accepted_steps"),
        })


def write_trajectory(path, cfg, traj: Trajectory) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        w = TrajectoryWriter(fh, cfg)
        for rec in traj.records:
            w.record(rec)
        w.end(traj)


def _record(obj: dict, n_nodes: int) -> Record:
    try:
        t = float(obj["t"])
        u, v = np.array(obj["u"], dtype=float), np.array(obj["v"], dtype=float)
        e = obj["energy"]
        energy = EnergyBreakdown(*(float(e[k]) for k in ("kinetic", "bending", "elastic", "floor", "gravity")))
        D = float(obj["D"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed record: {exc}") from exc
    if u.shape != (n_nodes,) or v.shape != (n_nodes,):
        raise FormatError(f"record at t={t} has {u.size} nodes, header says {n_nodes}")
    return Record(t, RodState(t, u, v), energy, D)


def read_trajectory(path) -> tuple[dict, Trajectory, dict]:
    """Return ``(header, trajectory, trailer)``.

    ``trailer`` is the ``end`` or ``failure`` object (empty if the file was
    cut short).  The trajectory's ``meta`` carries the parsed configuration
    and model parameters so the diagnostics can run on it directly.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty file")
    try:
        objs = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON line: {exc}") from exc
    header = objs[0]
    if not isinstance(header, dict) or header.get("kind") != "header":
        raise FormatError(f"{path}: first line is not a header")
    if header.get("format") != FORMAT:
        raise FormatError(f"{path}: not a {FORMAT} file (format={header.get('format')!r})")
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')!r}, this reader handles {VERSION}")
    try:
        cfg = _config.from_dict(header["config"])
    except (KeyError, BadConfig) as exc:
        raise FormatError(f"{path}: bad configuration echo: {exc}") from exc
    n_nodes = Grid(cfg.n_cells).n_cells + 1

    traj = Trajectory(meta={"config": cfg, "params": cfg.params()})
    trailer = {}
    for obj in objs[1:]:
        kind = obj.get("kind") if isinstance(obj, dict) else None
        if trailer:
            raise FormatError(f"{path}: data after the {trailer['kind']} record")
        if kind == "record":
            try:
                traj.append(_record(obj, n_nodes))
            except ValueError as exc:  # non-increasing t
                raise FormatError(f"{path}: {exc}") from exc
        elif kind in ("end", "failure"):
            trailer = obj
        else:
            raise FormatError(f"{path}: unknown record kind {kind!r}")
    if not traj.records:
        raise FormatError(f"{path}: no data records")
    if trailer.get("kind") == "end":
        traj.meta["truncation_level"] = trailer.get("config_resolved", {}).get("truncation")
    return header, traj, trailer
