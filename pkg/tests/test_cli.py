"""Tests for the config-driven command line and its file artifacts.

Exit-code contract: 0 pass, 1 config error, 2 solver failure,
3 integrator failure, 4 verification failure.
"""

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from bundleflow.cli import main
from bundleflow.m2 import e_of, einstein_points, f_of
from bundleflow.params import make_params
from bundleflow.verify import CheckRecord, _report

SQ2 = math.sqrt(2.0)
ETA_11 = (3.0 - SQ2) / 14.0
M2_PARAMS = {"n": [1, 1], "lam": [3.0, 3.0]}


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    data = [ln for ln in lines if ln and not ln.startswith("#")]
    header = data[0].split(",")
    rows = [ln.split(",") for ln in data[1:]]
    return header, rows, comments


def run(tmp_path, command, payload, *extra, out="out"):
    cfg = write_config(tmp_path, payload)
    out_dir = tmp_path / out
    rc = main([command, "--config", cfg, "--out", str(out_dir), *extra])
    return rc, out_dir


class TestEinstein:
    def test_m2_symmetric(self, tmp_path):
        rc, out = run(tmp_path, "einstein", {"params": M2_PARAMS})
        assert rc == 0
        payload = json.loads((out / "einstein.json").read_text())
        assert payload["system"] == "m2"
        assert payload["eta"]["location"] == pytest.approx([0.11327, 0.11327], abs=1e-5)
        assert payload["xi"]["location"][0] == pytest.approx((3 + SQ2) / 14, abs=1e-12)
        assert payload["xi"]["residual"] < 1e-9
        assert payload["eta"]["residual"] < 1e-9
        assert payload["eta"]["classification"] == "sink"
        assert payload["xi"]["classification"] == "hyperbolic"
        assert payload["einstein_constants"]["eta"] > 0

    def test_general_closed_form(self, tmp_path):
        rc, out = run(tmp_path, "einstein", {"params": {"m": 3, "d": 1}})
        assert rc == 0
        payload = json.loads((out / "einstein.json").read_text())
        assert payload["system"] == "general"
        assert payload["plus"]["beta"] == pytest.approx(
            (9.0 + math.sqrt(21.0)) / 24.0, rel=1e-12
        )
        assert payload["plus"]["residual"] < 1e-12
        assert payload["minus"]["residual"] < 1e-12
        assert payload["plus"]["lambda3"] > 0
        assert payload["minus"]["lambda3"] < 0
        assert len(payload["plus"]["v2_eigenvalues"]) == 2 * 3 - 1

    def test_malformed_config_no_partial_files(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text("{not json")
        out = tmp_path / "out"
        rc = main(["einstein", "--config", str(cfg), "--out", str(out)])
        assert rc == 1
        assert not (out / "einstein.json").exists()

    def test_bad_params(self, tmp_path):
        rc, out = run(tmp_path, "einstein", {"params": {"n": [0, 3], "lam": [2, 5]}})
        assert rc == 1
        assert not (out / "einstein.json").exists()

    def test_missing_config_flag(self, tmp_path):
        assert main(["einstein", "--out", str(tmp_path / "out")]) == 1

    def test_missing_config_file(self, tmp_path):
        rc = main(
            ["einstein", "--config", str(tmp_path / "nope.json"),
             "--out", str(tmp_path / "out")]
        )
        assert rc == 1


class TestClassify:
    def test_seven_points(self, tmp_path):
        rc, out = run(tmp_path, "classify", {"params": M2_PARAMS})
        assert rc == 0
        payload = json.loads((out / "classification.json").read_text())
        points = {pt["kind"]: pt for pt in payload["points"]}
        assert len(payload["points"]) == 7
        assert set(points) == {
            "origin", "v1", "v1_tilde", "v2", "v2_tilde", "xi", "eta",
        }
        assert points["origin"]["classification"] == "source"
        assert points["eta"]["classification"] == "sink"
        assert points["xi"]["unstable_dimension"] == 1
        res = sorted(ev[0] for ev in points["v1"]["eigenvalues"])
        assert res == pytest.approx([-0.4, 0.54], rel=1e-12)

    def test_general_params_rejected(self, tmp_path):
        rc, out = run(tmp_path, "classify", {"params": {"m": 3, "d": 1}})
        assert rc == 1


class TestFlow:
    def omega1_config(self):
        return {
            "params": M2_PARAMS,
            "y0": [0.2, 0.2],
            "u_end": 200.0,
            "psi0": 1.0,
        }

    def test_omega1_run(self, tmp_path):
        rc, out = run(tmp_path, "flow", self.omega1_config())
        assert rc == 0
        header, rows, comments = read_csv(out / "trajectory.csv")
        assert header == ["u", "Y1", "Y2", "region", "E"]
        assert not comments
        assert float(rows[0][0]) == 0.0
        assert float(rows[0][1]) == 0.2
        assert rows[0][3] == "omega1"
        e_vals = np.array([float(r[4]) for r in rows])
        assert np.all(np.diff(e_vals) <= 1e-9)
        p = make_params(2, (1, 1), (3.0, 3.0))
        _, eta_fp, _ = einstein_points(p)
        final = np.array([float(rows[-1][1]), float(rows[-1][2])])
        assert np.linalg.norm(final - np.array(eta_fp.location)) < 1e-8

        header, _, _ = read_csv(out / "metric.csv")
        assert header == ["tau", "psi", "b1", "b2"]
        rep = json.loads((out / "asymptotics.json").read_text())
        assert rep["collapse_time"] is None
        assert rep["slope_target"] == pytest.approx(e_of(eta_fp.location, p), rel=1e-9)
        assert rep["slope"] == pytest.approx(rep["slope_target"], rel=1e-3)

    def test_deterministic_outputs(self, tmp_path):
        rc1, out1 = run(tmp_path, "flow", self.omega1_config(), out="out1")
        rc2, out2 = run(tmp_path, "flow", self.omega1_config(), out="out2")
        assert rc1 == rc2 == 0
        for name in ("trajectory.csv", "metric.csv", "asymptotics.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_fixed_point_start_constant_rows(self, tmp_path):
        cfg = {
            "params": M2_PARAMS,
            "y0": [ETA_11, ETA_11],
            "u_end": 5.0,
            "psi0": 1.0,
        }
        rc, out = run(tmp_path, "flow", cfg)
        assert rc == 0
        _, rows, _ = read_csv(out / "trajectory.csv")
        ys = np.array([[float(r[1]), float(r[2])] for r in rows])
        assert np.max(np.abs(ys - ETA_11)) < 1e-10
        assert float(rows[-1][0]) == pytest.approx(5.0)

    def test_general_flow(self, tmp_path):
        # Start near the all-stable Einstein point so the run converges
        # instead of exiting the domain.
        cfg = {
            "params": {"m": 3, "d": 1},
            "x0": [1 / 3, 1 / 3, 1 / 3],
            "y0": [0.57, 0.552, 0.535],
            "u_end": 5.0,
            "a_hat0": 1.0,
        }
        rc, out = run(tmp_path, "flow", cfg)
        assert rc == 0
        header, rows, _ = read_csv(out / "trajectory.csv")
        assert header == ["u", "X1", "X2", "X3", "Y1", "Y2", "Y3", "E"]
        xs = np.array([[float(v) for v in r[1:4]] for r in rows])
        assert np.max(np.abs(xs.sum(axis=1) - 1.0)) < 1e-9
        header, _, _ = read_csv(out / "metric.csv")
        assert header == ["tau", "a_hat", "a1", "a2", "a3", "b1", "b2", "b3"]
        rep = json.loads((out / "asymptotics.json").read_text())
        assert rep["terminal"]["kind"] in {"max_time", "reached_fixed_point"}

    def test_step_budget_exhaustion_exit_3(self, tmp_path):
        cfg = dict(self.omega1_config(), max_steps=40)
        rc, out = run(tmp_path, "flow", cfg)
        assert rc == 3
        text = (out / "trajectory.csv").read_text()
        assert text.splitlines()[-1].startswith("#")

    def test_short_path_asymptotics_exit_3(self, tmp_path):
        # One forced step gives a two-node path, too short for any fit.
        cfg = dict(self.omega1_config(), u_end=1e-4, first_step=1e-4)
        rc, out = run(tmp_path, "flow", cfg)
        assert rc == 3
        # The trajectory and metric files are complete; only the fit failed.
        _, _, comments = read_csv(out / "metric.csv")
        assert not comments
        rep = json.loads((out / "asymptotics.json").read_text())
        assert "error" in rep


class TestPortrait:
    def test_full_portrait(self, tmp_path):
        cfg = {
            "params": M2_PARAMS,
            "seeds": [[0.2, 0.2], [0.05, 0.05]],
            "u_end": 30.0,
            "samples": 64,
        }
        rc, out = run(tmp_path, "portrait", cfg)
        assert rc == 0
        header, rows, _ = read_csv(out / "fixedpoints.csv")
        assert header[:5] == [
            "kind", "Y1", "Y2", "classification", "unstable_dimension",
        ]
        assert len(rows) == 7
        header, rows, _ = read_csv(out / "nullclines.csv")
        assert header == ["locus", "t", "Y1", "Y2"]
        assert len(rows) == 2 * 64
        p = make_params(2, (1, 1), (3.0, 3.0))
        for row in rows:
            y = (float(row[2]), float(row[3]))
            f1, f2 = f_of(y, p)
            resid = f1 if row[0] == "f1" else f2
            assert abs(resid) < 1e-9
        assert (out / "trajectory_000.csv").exists()
        assert (out / "trajectory_001.csv").exists()
        assert not (out / "trajectory_002.csv").exists()
        header, _, _ = read_csv(out / "trajectory_000.csv")
        assert header == ["u", "Y1", "Y2", "region", "E"]

    def test_empty_seed_grid(self, tmp_path):
        cfg = {"params": M2_PARAMS, "seeds": [], "samples": 32}
        rc, out = run(tmp_path, "portrait", cfg)
        assert rc == 0
        assert (out / "nullclines.csv").exists()
        assert (out / "fixedpoints.csv").exists()
        assert not (out / "trajectory_000.csv").exists()

    def test_general_params_rejected(self, tmp_path):
        rc, _ = run(tmp_path, "portrait", {"params": {"m": 3, "d": 1}, "seeds": []})
        assert rc == 1


class TestReconstruct:
    def test_backward_collapse_window(self, tmp_path):
        cfg = {
            "params": M2_PARAMS,
            "y0": [0.05, 0.05],
            "u_end": -60.0,
            "psi0": 1.0,
        }
        rc, out = run(tmp_path, "reconstruct", cfg)
        assert rc == 0
        assert not (out / "trajectory.csv").exists()
        header, _, _ = read_csv(out / "metric.csv")
        assert header == ["tau", "psi", "b1", "b2"]
        rep = json.loads((out / "asymptotics.json").read_text())
        p = make_params(2, (1, 1), (3.0, 3.0))
        _, eta_fp, _ = einstein_points(p)
        lo = 1.0 / e_of(eta_fp.location, p)
        assert lo < rep["collapse_time"] < 2.0


class TestVerify:
    def small_config(self):
        return {
            "m2_grid": [[1, 1], [2, 3]],
            "general_grid": [[3, 1]],
            "scenarios": ["m2-omega1-interior"],
        }

    def test_small_grids_deterministic(self, tmp_path):
        rc1, out1 = run(tmp_path, "verify", self.small_config(), out="out1")
        rc2, out2 = run(tmp_path, "verify", self.small_config(), out="out2")
        assert rc1 == rc2 == 0
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
        assert (out1 / "report.txt").read_bytes() == (out2 / "report.txt").read_bytes()
        payload = json.loads((out1 / "report.json").read_text())
        assert set(payload["summary"]) == {
            "lemma-eta-bound",
            "prop-classification",
            "xi-claims",
            "general-lemmas",
            "dynamics",
        }
        assert all(rec["pass"] for rec in payload["records"])

    def test_family_filter(self, tmp_path):
        rc, out = run(
            tmp_path, "verify", self.small_config(), "--family", "lemma-eta-bound"
        )
        assert rc == 0
        payload = json.loads((out / "report.json").read_text())
        assert payload["records"]
        assert all(
            rec["check_id"].startswith("lemma-eta-bound") for rec in payload["records"]
        )
        assert set(payload["summary"]) == {"lemma-eta-bound"}

    def test_unknown_family(self, tmp_path):
        rc, _ = run(tmp_path, "verify", self.small_config(), "--family", "bogus")
        assert rc == 1

    def test_out_of_domain_grid(self, tmp_path):
        rc, out = run(tmp_path, "verify", {"m2_grid": [[0, 3]]})
        assert rc == 1
        assert not (out / "report.json").exists()

    def test_failing_check_exits_4(self, tmp_path, monkeypatch):
        bad = CheckRecord(
            check_id="dynamics.forced-failure",
            params={},
            claim="forced",
            lhs=0.0,
            rhs=1.0,
            margin=-1.0,
            passed=False,
        )
        monkeypatch.setattr(
            "bundleflow.verify.run_all", lambda **kw: _report([bad], {})
        )
        rc, out = run(tmp_path, "verify", {})
        assert rc == 4
        payload = json.loads((out / "report.json").read_text())
        assert payload["summary"]["dynamics"]["failed"] == 1


class TestUsage:
    def test_unknown_command(self):
        assert main(["bogus"]) == 1

    def test_no_command(self):
        assert main([]) == 1

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0

    def test_module_invocation(self, tmp_path):
        cfg = write_config(tmp_path, {"params": M2_PARAMS})
        out = tmp_path / "out"
        proc = subprocess.run(
            [sys.executable, "-m", "bundleflow.cli", "einstein",
             "--config", cfg, "--out", str(out)],
            capture_output=True,
        )
        assert proc.returncode == 0
        assert (out / "einstein.json").exists()
