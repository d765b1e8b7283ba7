import csv
import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from kron_dyson.cli import _exit_code, main
from kron_dyson.errors import DomainError, InputError, NumericalError


@pytest.fixture()
def runner():
    return CliRunner()


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestExitCodes:
    def test_mapping(self):
        assert _exit_code(DomainError("x")) == 1
        assert _exit_code(InputError("x")) == 2
        assert _exit_code(NumericalError("x")) == 3


class TestValidate:
    def test_preset_ok(self, runner):
        result = runner.invoke(main, ["validate", "semicircle"])
        assert result.exit_code == 0
        assert result.output.startswith("OK n=1 d=1 beta=2")

    def test_shipped_file_ok(self, runner):
        path = os.path.join(os.path.dirname(__file__), "..", "ensembles", "pencil4.json")
        result = runner.invoke(main, ["validate", path])
        assert result.exit_code == 0
        assert "n=4 d=7" in result.output

    def test_unknown_spec(self, runner):
        result = runner.invoke(main, ["validate", "no_such_ensemble"])
        assert result.exit_code == 2

    def test_invalid_model_file(self, runner, tmp_path):
        # well-formed encoding but K0 is not Hermitian
        bad = {
            "n": 2, "d": 0, "beta": 2, "entry_law": "gaussian",
            "K0": [[{"re": 0.0}, {"re": 1.0}], [{"re": 0.0}, {"re": 0.0}]],
            "L": [],
        }
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(bad))
        result = runner.invoke(main, ["validate", str(p)])
        assert result.exit_code == 1

    def test_malformed_file(self, runner, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        result = runner.invoke(main, ["validate", str(p)])
        assert result.exit_code == 2


class TestDos:
    def test_semicircle_curve(self, runner, tmp_path):
        out = tmp_path / "dos"
        result = runner.invoke(
            main, ["dos", "semicircle", "--points", "401", "--out", str(out)]
        )
        assert result.exit_code == 0
        header, rows = read_csv(out / "dos.csv")
        assert header[:2] == ["x", "rho"]
        # edge refinement adds rows beyond the requested grid
        assert len(rows) >= 401
        xs = np.array([float(r[0]) for r in rows])
        rho = np.array([float(r[1]) for r in rows])
        assert abs(rho[np.argmin(np.abs(xs))] - 1 / np.pi) < 1e-6
        summary = json.loads((out / "dos_summary.json").read_text())
        assert abs(summary["mass"] - 1.0) < 1e-3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "dos"
        assert manifest["config"]["points"] == 401
        assert len(manifest["config_sha256"]) == 64

    def test_bad_points(self, runner, tmp_path):
        result = runner.invoke(
            main, ["dos", "semicircle", "--points", "-5", "--out", str(tmp_path / "x")]
        )
        assert result.exit_code == 2

    def test_atomic_spectrum_has_no_density(self, runner, tmp_path):
        # d = 0 spectra are delta atoms; the mass check refuses the curve
        result = runner.invoke(
            main, ["dos", "free_diag", "--points", "51", "--out", str(tmp_path / "x")]
        )
        assert result.exit_code == 3

    def test_config_file_resolution(self, runner, tmp_path):
        cfg = tmp_path / "cfg.json"
        out = tmp_path / "out"
        cfg.write_text(json.dumps({"points": 51, "out": str(out)}))
        result = runner.invoke(main, ["dos", "semicircle", "--config", str(cfg)])
        assert result.exit_code == 0
        _, rows = read_csv(out / "dos.csv")
        assert len(rows) >= 51

    def test_flag_overrides_config(self, runner, tmp_path):
        cfg = tmp_path / "cfg.json"
        base_out = tmp_path / "base"
        cfg.write_text(json.dumps({"points": 81, "out": str(base_out)}))
        assert runner.invoke(main, ["dos", "semicircle", "--config", str(cfg)]).exit_code == 0
        over_out = tmp_path / "over"
        result = runner.invoke(
            main,
            ["dos", "semicircle", "--config", str(cfg), "--points", "31",
             "--out", str(over_out)],
        )
        assert result.exit_code == 0
        _, base_rows = read_csv(base_out / "dos.csv")
        _, over_rows = read_csv(over_out / "dos.csv")
        assert len(over_rows) < len(base_rows)


class TestFlatness:
    def test_block_wigner(self, runner, tmp_path):
        out = tmp_path / "flat"
        result = runner.invoke(
            main,
            ["flatness", "block_wigner2", "--restarts", "20", "--out", str(out)],
        )
        assert result.exit_code == 0
        payload = json.loads((out / "flatness.json").read_text())
        assert payload["exponent"] == 1
        assert payload["c_estimate"] > 0.1
        assert payload["support_pattern"] == [[1, 1], [1, 1]]

    def test_pencil_exponent(self, runner, tmp_path):
        out = tmp_path / "flat4"
        result = runner.invoke(
            main, ["flatness", "pencil4", "--restarts", "20", "--out", str(out)]
        )
        assert result.exit_code == 0
        payload = json.loads((out / "flatness.json").read_text())
        assert payload["exponent"] == 3
        assert payload["c_estimate"] > 0.05


class TestMdeProbe:
    def test_known_point(self, runner, tmp_path):
        out = tmp_path / "mde"
        result = runner.invoke(
            main, ["mde-probe", "semicircle", "--z", "2j", "--out", str(out)]
        )
        assert result.exit_code == 0
        header, rows = read_csv(out / "mde.csv")
        row = dict(zip(header, rows[0]))
        assert abs(float(row["m00_im"]) - (np.sqrt(2) - 1)) < 1e-9
        assert abs(float(row["m00_re"])) < 1e-12
        assert float(row["residual"]) < 1e-10

    def test_bad_literal(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["mde-probe", "semicircle", "--z", "2+bogus", "--out", str(tmp_path / "x")],
        )
        assert result.exit_code == 2


class TestStabilityProbe:
    def test_scalar_probe(self, runner, tmp_path):
        out = tmp_path / "stab"
        result = runner.invoke(
            main,
            ["stability-probe", "real_semicircle", "--e0", "0.0",
             "--eps", "1e-2,5e-3", "--out", str(out)],
        )
        assert result.exit_code == 0
        header, rows = read_csv(out / "stability.csv")
        assert header[0] == "eps" and len(rows) == 2
        assert float(rows[0][5]) < 1e-3
        payload = json.loads((out / "stability.json").read_text())
        assert payload["kernel_dim"] == 1
        assert abs(payload["top_eigenvalue"] - 1.0) < 1e-6


class TestLocallaw:
    def test_sweep_outputs(self, runner, tmp_path):
        out = tmp_path / "ll"
        result = runner.invoke(
            main,
            ["locallaw", "semicircle", "--n-list", "32,64", "--samples", "4",
             "--eta", "0.5", "--out", str(out)],
        )
        assert result.exit_code == 0
        header, rows = read_csv(out / "locallaw.csv")
        assert [r[0] for r in rows] == ["32", "64"]
        summary = json.loads((out / "locallaw_summary.json").read_text())
        assert np.isfinite(summary["entry_slope"])

    def test_bad_eta(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["locallaw", "semicircle", "--n-list", "32", "--samples", "2",
             "--eta", "soon", "--out", str(tmp_path / "x")],
        )
        assert result.exit_code == 2

    def test_worker_count_byte_identity(self, runner, tmp_path):
        outs = []
        for threads in ("1", "3"):
            out = tmp_path / f"ll{threads}"
            result = runner.invoke(
                main,
                ["locallaw", "semicircle", "--n-list", "32,64", "--samples", "6",
                 "--eta", "0.5", "--threads", threads, "--out", str(out)],
            )
            assert result.exit_code == 0
            outs.append((out / "locallaw.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_rerun_byte_identity(self, runner, tmp_path):
        blobs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            result = runner.invoke(
                main,
                ["locallaw", "real_semicircle", "--n-list", "48", "--samples", "5",
                 "--eta", "0.4", "--seed", "3", "--out", str(out)],
            )
            assert result.exit_code == 0
            blobs.append((out / "locallaw.csv").read_bytes())
            summary = json.loads((out / "locallaw_summary.json").read_text())
            # a single-size ladder carries no slope estimate
            assert summary["entry_slope"] is None
        assert blobs[0] == blobs[1]


class TestTwopoint:
    def test_study_outputs(self, runner, tmp_path):
        out = tmp_path / "tp"
        result = runner.invoke(
            main,
            ["twopoint", "block_wigner2", "--n", "16", "--e0", "0.3",
             "--etas", "0.2", "--samples", "3",
             "--b-matrix", "[[0.7,1.1],[-0.4,0.2]]", "--out", str(out)],
        )
        assert result.exit_code == 0
        header, rows = read_csv(out / "twopoint.csv")
        assert header == ["variant", "eta", "rel_err_mean", "rel_err_sem"]
        assert sorted(r[0] for r in rows) == ["plain", "tilde"]
        for r in rows:
            assert float(r[2]) > 0

    def test_bad_b_matrix(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["twopoint", "block_wigner2", "--n", "16", "--e0", "0.3",
             "--etas", "0.2", "--samples", "2", "--b-matrix", "[[1.0]]",
             "--out", str(tmp_path / "x")],
        )
        assert result.exit_code == 2


class TestClt:
    def test_dry_run_echoes_config(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["clt", "semicircle", "--samples", "0", "--gamma", "0.3",
             "--n", "256", "--out", str(tmp_path / "never")],
        )
        assert result.exit_code == 0
        resolved = json.loads(result.output)
        assert resolved["samples"] == 0
        assert resolved["gamma"] == 0.3
        assert resolved["n"] == 256
        assert not (tmp_path / "never").exists()

    def test_small_run(self, runner, tmp_path):
        out = tmp_path / "clt"
        result = runner.invoke(
            main,
            ["clt", "semicircle", "--n", "32", "--samples", "100",
             "--out", str(out)],
        )
        assert result.exit_code == 0
        header, rows = read_csv(out / "clt.csv")
        assert len(rows) == 100
        report = json.loads((out / "clt.json").read_text())
        assert report["variance_ratio"] > 0
        assert report["samples"] == 100

    def test_unknown_tag(self, runner, tmp_path):
        result = runner.invoke(
            main, ["clt", "semicircle", "--g", "sinc", "--samples", "0"]
        )
        assert result.exit_code == 2

    def test_edge_energy_refused(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["clt", "semicircle", "--e0", "5.0", "--n", "32", "--samples", "100",
             "--out", str(tmp_path / "x")],
        )
        assert result.exit_code == 1
