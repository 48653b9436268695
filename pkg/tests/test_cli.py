import json

import numpy as np
import pytest

from rodcollide import config as C
from rodcollide.cli import EXIT_CONFIG, EXIT_FORMAT, EXIT_IO, EXIT_OK, EXIT_STEP_FLOOR, main
from rodcollide.constitutive import TruncatedLaw
from rodcollide.errors import BadConfig, FormatError, UnknownPreset
from rodcollide.integrate import StepperConfig
from rodcollide.io import read_trajectory, write_trajectory


def short_freefall(**kw):
    return C.preset("freefall").replace(t_end=0.1, **kw)


class TestPresets:
    def test_figures(self):
        f5, f6 = C.preset("fig5"), C.preset("fig6")
        assert (f5.mu, f5.n_cells, f5.gamma) == (0.0, 5, 0.0)
        assert (f6.mu, f6.n_cells, f6.gamma) == (100.0, 5, 0.0)
        assert f5.initial == f6.initial == "rigid-drop"
        assert f5.g < 0

    def test_freefall_never_touches(self):
        f = C.preset("freefall")
        assert f.h0 + f.v_c * f.t_end + 0.5 * f.g * f.t_end**2 > 0

    def test_rest(self):
        f = C.preset("rest-equilibrium")
        tr = C.execute(f)
        assert np.max(np.abs(tr.u - tr.u[0])) < 1e-9

    def test_unknown(self):
        with pytest.raises(UnknownPreset):
            C.preset("fig7")
        assert main(["preset", "fig7"]) == EXIT_CONFIG


class TestConfigFile:
    @pytest.mark.parametrize("name", C.PRESETS)
    def test_ini_round_trip(self, name):
        cfg = C.preset(name)
        assert C.loads(C.dumps(cfg)) == cfg

    def test_nodal_round_trip(self):
        u = tuple(1.0 + 0.2 * np.arange(6) + 1e-17)
        cfg = C.RunConfig(initial="nodal", u=u, v=(0.1,) * 6, truncation=7.5, output_path="x.ndjson")
        back = C.loads(C.dumps(cfg))
        assert back == cfg
        assert back.u == u

    @pytest.mark.parametrize(
        "text",
        [
            "[model]\nkappa = 1\nkapa = 2\n",
            "[modle]\nkappa = 1\n",
            "[model]\nkappa = abc\n",
            "[model]\nkappa = -1\n",
            "[grid]\nn_cells = 1\n",
            "[model]\ntruncation = sometimes\n",
            "[initial]\nkind = nodal\nu = 1 2 3\n",
            "[stepper]\ndt_min = 1\n",
            "not an ini file",
        ],
    )
    def test_rejects(self, text):
        with pytest.raises(BadConfig):
            C.loads(text)

    def test_inline_comments(self):
        cfg = C.loads("[model]\nkappa = 7.5   # stiff\nmu = 2 ; viscous\n")
        assert (cfg.kappa, cfg.mu) == (7.5, 2.0)

    def test_truncation_levels(self):
        assert isinstance(C.RunConfig(truncation=5.0).params().stress, TruncatedLaw)
        assert not isinstance(C.RunConfig(truncation="none").params().stress, TruncatedLaw)
        assert not isinstance(C.RunConfig().params().stress, TruncatedLaw)  # auto

    def test_refine(self):
        cfg = C.RunConfig(initial="nodal", u=tuple(np.linspace(1, 2, 6)), v=(0.0,) * 6, output_every=3)
        r = C.refine(cfg, 2)
        assert r.n_cells == 10 and r.output_every == 3
        assert r.stepper.dt_init == cfg.stepper.dt_init / 2
        np.testing.assert_allclose(r.u, np.linspace(1, 2, 11))


class TestExecute:
    def test_auto_truncation_is_invisible(self):
        cfg = C.preset("fig5").replace(t_end=2.5)
        a = C.execute(cfg)
        level = a.meta["truncation_level"]
        assert level >= 10 * max(a.meta["max_strain_seen"], a.meta["max_height_seen"])
        b = C.execute(cfg.replace(truncation=level))
        assert b.meta["truncation_level"] == level
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.v, b.v)
        np.testing.assert_array_equal(a.G, b.G)


class TestTrajectoryFile:
    def test_round_trip(self, tmp_path):
        cfg = C.preset("fig6").replace(t_end=2.0)
        tr = C.execute(cfg)
        path = tmp_path / "run.ndjson"
        write_trajectory(path, cfg, tr)
        header, back, trailer = read_trajectory(path)
        assert header["version"] == 1 and trailer["kind"] == "end"
        assert back.meta["config"] == cfg
        assert len(back) == len(tr)
        for r0, r1 in zip(tr.records, back.records):
            assert r0.t == r1.t and r0.dissipation == r1.dissipation
            assert np.array_equal(r0.state.u, r1.state.u) and np.array_equal(r0.state.v, r1.state.v)
            assert r0.energy == r1.energy

    def test_config_echo_reproduces_run(self, tmp_path):
        path = tmp_path / "a.ndjson"
        cfg = short_freefall()
        write_trajectory(path, cfg, C.execute(cfg))
        header, back, _ = read_trajectory(path)
        again = C.execute(C.from_dict(header["config"]))
        np.testing.assert_array_equal(again.u, back.u)

    def _write(self, tmp_path, lines):
        p = tmp_path / "bad.ndjson"
        p.write_text("\n".join(lines) + "\n")
        return p

    def test_format_errors(self, tmp_path):
        good = tmp_path / "good.ndjson"
        cfg = short_freefall()
        write_trajectory(good, cfg, C.execute(cfg))
        lines = good.read_text().splitlines()
        header = json.loads(lines[0])
        cases = {
            "version": [json.dumps(dict(header, version=2))] + lines[1:],
            "format": [json.dumps(dict(header, format="other"))] + lines[1:],
            "no header": lines[1:],
            "garbage": lines[:3] + ["{not json"],
            "order": [lines[0], lines[2], lines[1]],
            "nodes": [lines[0], json.dumps(dict(json.loads(lines[1]), u=[1.0]))],
            "after end": lines + [lines[1]],
            "kind": lines[:2] + ['{"kind": "mystery"}'],
            "empty": [""],
        }
        for name, content in cases.items():
            with pytest.raises(FormatError):
                read_trajectory(self._write(tmp_path, content))
        with pytest.raises(FormatError, match="version"):
            read_trajectory(self._write(tmp_path, cases["version"]))


class TestCommands:
    def test_preset_emit(self, tmp_path, capsys):
        assert main(["preset", "fig5"]) == EXIT_OK
        assert "[model]" in capsys.readouterr().out
        p = tmp_path / "f.ini"
        assert main(["preset", "fig6", "--emit", str(p)]) == EXIT_OK
        assert C.load(p) == C.preset("fig6")

    def test_simulate_and_analyze(self, tmp_path, capsys):
        ini = tmp_path / "c.ini"
        ini.write_text(C.dumps(C.preset("fig5").replace(t_end=4.0)))
        out = tmp_path / "o.ndjson"
        assert main(["simulate", "--config", str(ini), "--out", str(out)]) == EXIT_OK
        _, tr, trailer = read_trajectory(out)
        assert trailer["kind"] == "end" and tr.t[-1] == 4.0
        for report in ("energy", "bounces", "weak", "lemma21"):
            rep = tmp_path / f"{report}.ndjson"
            assert main(["analyze", "--in", str(out), "--report", report, "--out", str(rep)]) == EXIT_OK
            first = json.loads(rep.read_text().splitlines()[0])
            assert first["report"] == report
        bounces = json.loads((tmp_path / "bounces.ndjson").read_text())
        assert len(bounces["windows"]) >= 1
        assert main(["analyze", "--in", str(out), "--report", "columns"]) == EXIT_OK
        cols = capsys.readouterr().out.splitlines()
        assert cols[0].startswith("# t u0") and len(cols) == len(tr) + 1

    def test_exit_codes(self, tmp_path):
        ini = tmp_path / "bad.ini"
        ini.write_text("[model]\nkappa = 0\n")
        assert main(["simulate", "--config", str(ini), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
        assert main(["simulate", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path / "x")]) == EXIT_IO
        good = tmp_path / "good.ini"
        good.write_text(C.dumps(short_freefall()))
        assert main(["simulate", "--config", str(good), "--out", str(tmp_path / "no" / "dir" / "x")]) == EXIT_IO
        junk = tmp_path / "junk.ndjson"
        junk.write_text("hello\n")
        assert main(["analyze", "--in", str(junk), "--report", "energy"]) == EXIT_FORMAT
        assert main(["converge", "--config", str(good), "--levels", "2"]) == EXIT_CONFIG

    def test_step_floor_writes_failure(self, tmp_path):
        cfg = C.RunConfig(
            h0=0.01, v_c=-50.0, t_end=1.0,
            stepper=StepperConfig(dt_init=1e-3, dt_max=1e-3, dt_min=1e-7),
        )
        ini = tmp_path / "crash.ini"
        ini.write_text(C.dumps(cfg))
        out = tmp_path / "crash.ndjson"
        assert main(["simulate", "--config", str(ini), "--out", str(out)]) == EXIT_STEP_FLOOR
        _, tr, trailer = read_trajectory(out)
        assert trailer["kind"] == "failure" and "dt_min" in trailer["message"]
        assert len(tr) >= 1 and trailer["t"] >= tr.t[-1]

    def test_converge(self, tmp_path, capsys):
        ini = tmp_path / "ff.ini"
        ini.write_text(C.dumps(short_freefall()))
        assert main(["converge", "--config", str(ini), "--levels", "3"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "round-off" in out and out.count("\n") >= 7
