"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 solver step floor,
4 I/O error, 5 malformed trajectory file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import config as cfgmod
from . import diagnostics as diag
from .errors import BadConfig, FormatError, NoBounces, StepFloor
from .io import TrajectoryWriter, read_trajectory

EXIT_OK, EXIT_CONFIG, EXIT_STEP_FLOOR, EXIT_IO, EXIT_FORMAT = 0, 2, 3, 4, 5

REPORTS = ("energy", "bounces", "weak", "lemma21", "columns")

log = logging.getLogger("rodcollide")


def _json(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(type(o).__name__)

    return json.dumps(obj, default=default)


def cmd_simulate(args) -> int:
    cfg = cfgmod.load(args.config)
    with open(args.out, "w", encoding="utf-8") as fh:
        writer = TrajectoryWriter(fh, cfg)
        try:
            traj = cfgmod.execute(cfg, on_record=writer.record)
        except StepFloor as exc:
            writer.failure(str(exc), exc.state)
            log.error("%s", exc)
            return EXIT_STEP_FLOOR
        writer.end(traj)
    log.info("wrote %d records to %s", len(traj), args.out)
    return EXIT_OK


def _energy_report(traj):
    led = diag.energy_ledger(traj)
    yield {
        "report": "energy",
        "G0": led.G0,
        "max_relative_defect": led.max_relative_defect,
        "max_drift": led.max_drift,
        "bound_violations": led.bound_violations.tolist(),
    }
    for k in range(len(led.t)):
        yield {"t": led.t[k], "G": led.G[k], "D": led.D[k], "defect": led.defect[k],
               "bound_lhs": led.bound_lhs[k], "bound_rhs": led.bound_rhs[k]}


def _bounce_report(traj):
    try:
        rep = diag.detect_bounces(traj)
    except NoBounces as exc:
        yield {"report": "bounces", "windows": [], "note": str(exc)}
        return
    yield {
        "report": "bounces",
        "windows": rep.windows,
        "apex_times": rep.apex_times,
        "apex_heights": rep.apex_heights,
        "rest_height": rep.rest_height,
        "restitution": rep.restitution,
    }


def _weak_report(traj):
    tests = diag.default_test_family(float(traj.t[-1]))
    res = diag.weak_residual(traj, tests)
    yield {"report": "weak", "max_residual": float(res.max())}
    for test, r in zip(tests, res):
        yield {"test": test.label, "residual": r}


def _lemma_report(traj):
    sb = diag.strain_bound_check(traj)
    yield {"report": "lemma21", "informational": sb.informational, "violations": sb.violations.tolist()}
    for k, t in enumerate(traj.t):
        yield {"t": t, "r1": sb.r1[k], "r2": sb.r2[k], "bound": sb.bound[k],
               "min_ux": sb.min_ux[k], "ok": bool(sb.ok[k])}


def _columns(traj):
    # plain whitespace table for external plotting: t, nodal heights, COM
    grid = traj.records[0].state.grid
    n = grid.n_cells + 1
    yield "# t " + " ".join(f"u{i}" for i in range(n)) + " com"
    for t, u in zip(traj.t, traj.u):
        yield " ".join(repr(float(x)) for x in (t, *u, float(grid.masses @ u)))


def cmd_analyze(args) -> int:
    _, traj, _ = read_trajectory(args.inp)
    if args.report == "columns":
        lines = list(_columns(traj))
    else:
        gen = {"energy": _energy_report, "bounces": _bounce_report,
               "weak": _weak_report, "lemma21": _lemma_report}[args.report]
        lines = [_json(obj) for obj in gen(traj)]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_converge(args) -> int:
    cfg = cfgmod.load(args.config)
    rep = diag.convergence_study(cfg, args.levels)
    print(f"{'level':>5} {'n_cells':>8} {'dt':>10} {'state_err':>12} {'energy_def':>12} {'weak_res':>12}")
    for row in rep.rows():
        se = row["state_error"]
        print(f"{row['level']:>5d} {row['n_cells']:>8d} {row['dt']:>10.3g} "
              f"{(f'{se:.4e}' if se is not None else '-'):>12} "
              f"{row['energy_defect']:>12.4e} {row['weak_residual']:>12.4e}")

    def fmt(orders):
        return " ".join(f"{o:.3f}" for o in orders)

    print(f"orders  state: {fmt(rep.state_order)}")
    print(f"orders  energy: {fmt(rep.energy_order)}")
    print(f"orders  weak: {fmt(rep.weak_order)}")
    if rep.exact_regime:
        print("errors at round-off level: the scheme is exact for this problem")
    return EXIT_OK


def cmd_preset(args) -> int:
    text = cfgmod.dumps(cfgmod.preset(args.name))
    if args.emit:
        with open(args.emit, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rodcollide", description="Viscoelastic rod-floor collision simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="progress log lines on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a configuration and write a trajectory file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="diagnostics on a trajectory file")
    a.add_argument("--in", dest="inp", required=True)
    a.add_argument("--report", required=True, choices=REPORTS)
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("converge", help="refinement study over (dx, dt) levels")
    c.add_argument("--config", required=True)
    c.add_argument("--levels", type=int, default=3)
    c.set_defaults(func=cmd_converge)

    r = sub.add_parser("preset", help="print or write a named configuration")
    r.add_argument("name")
    r.add_argument("--emit", metavar="PATH")
    r.set_defaults(func=cmd_preset)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s %(message)s",
    )
    try:
        return args.func(args)
    except (BadConfig, ValueError) as exc:
        # ValueError here comes from argument checks such as levels < 3
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StepFloor as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_STEP_FLOOR


if __name__ == "__main__":
    sys.exit(main())
