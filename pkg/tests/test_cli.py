"""In-process command line tests: exit codes, artifacts, determinism."""

import json
import shutil
import subprocess

import numpy as np
import pytest

from hmingraph.cli import ConfigError, boundary_expression, canonical_json, main


def write_cfg(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def solve_cfg(out_dir, **overrides):
    cfg = {
        "grid": {"x1": [0, 1], "x2": [0, 1], "n1": 17, "n2": 17},
        "boundary": {"expr": "2*x1 - 1"},
        "eps": 0.5,
        "output_dir": str(out_dir),
    }
    cfg.update(overrides)
    return cfg


def load_u_column(csv_path):
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    return data[:, 0], data[:, 1], data[:, 2]


@pytest.fixture(scope="module")
def fan_run_dir(tmp_path_factory):
    """A completed three-step continuation used by the read-back commands."""
    base = tmp_path_factory.mktemp("fanrun")
    run_dir = base / "run"
    cfg = write_cfg(base / "cont.json", {
        "grid": {"x1": [0, 1], "x2": [1, 2], "n1": 33, "n2": 33},
        "boundary": {"expr": "x2 / (x1 + 2)"},
        "schedule": {"eps_start": 1.0, "factor": 0.5, "eps_min": 0.25},
        "output_dir": str(run_dir),
    })
    assert main(["continuation", cfg]) == 0
    return run_dir


class TestSolve:
    def test_affine_solve_writes_exact_solution(self, tmp_path):
        out = tmp_path / "out"
        cfg = solve_cfg(out)
        assert main(["solve", write_cfg(tmp_path / "c.json", cfg)]) == 0
        x1, x2, u = load_u_column(out / "solution.csv")
        assert np.max(np.abs(u - (2 * x1 - 1))) <= 1e-12
        report = json.loads((out / "report.json").read_text())
        assert report["converged"] is True
        assert report["eps"] == 0.5
        assert report["final_residual"] <= 1e-12

    def test_report_hash_matches_the_config(self, tmp_path):
        import hashlib
        out = tmp_path / "out"
        cfg = solve_cfg(out)
        main(["solve", write_cfg(tmp_path / "c.json", cfg)])
        report = json.loads((out / "report.json").read_text())
        assert report["config_sha256"] == hashlib.sha256(canonical_json(cfg).encode()).hexdigest()

    def test_catalog_boundary(self, tmp_path):
        out = tmp_path / "out"
        cfg = solve_cfg(out, boundary={"catalog": "affine", "params": {"a": 2, "c": -1}})
        assert main(["solve", write_cfg(tmp_path / "c.json", cfg)]) == 0
        x1, x2, u = load_u_column(out / "solution.csv")
        assert np.max(np.abs(u - (2 * x1 - 1))) <= 1e-12

    def test_nonconvergence_exits_2_and_keeps_the_best_iterate(self, tmp_path):
        out = tmp_path / "out"
        cfg = {
            "grid": {"x1": [0, 1], "x2": [1, 2], "n1": 33, "n2": 33},
            "boundary": {"expr": "x2 / (x1 + 2) + 0.25*x1*(1 - x1)"},
            "eps": 0.001,
            "solver": {"max_newton_iter": 2, "picard_fallback": False},
            "output_dir": str(out),
        }
        assert main(["solve", write_cfg(tmp_path / "c.json", cfg)]) == 2
        assert (out / "solution.csv").exists()
        report = json.loads((out / "report.json").read_text())
        assert report["converged"] is False
        assert report["iterations"] >= 1

    def test_missing_eps_is_a_config_error(self, tmp_path, capsys):
        cfg = solve_cfg(tmp_path / "out")
        del cfg["eps"]
        assert main(["solve", write_cfg(tmp_path / "c.json", cfg)]) == 1
        assert "eps" in capsys.readouterr().err

    def test_unknown_solver_key_is_named(self, tmp_path, capsys):
        cfg = solve_cfg(tmp_path / "out", solver={"newton_iterations": 3})
        assert main(["solve", write_cfg(tmp_path / "c.json", cfg)]) == 1
        assert "newton_iterations" in capsys.readouterr().err


class TestConfigHandling:
    def test_malformed_json_reports_position(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text('{"grid": }')
        assert main(["solve", str(p)]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error: ")
        assert f"{p}:1:" in err

    def test_missing_file_is_exit_1(self, tmp_path, capsys):
        assert main(["solve", str(tmp_path / "nope.json")]) == 1

    def test_missing_output_dir_mentions_the_override(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv("HMINGRAPH_OUT", raising=False)
        cfg = solve_cfg(tmp_path / "out")
        del cfg["output_dir"]
        assert main(["solve", write_cfg(tmp_path / "c.json", cfg)]) == 1
        assert "HMINGRAPH_OUT" in capsys.readouterr().err

    def test_env_override_redirects_output(self, tmp_path, monkeypatch):
        other = tmp_path / "redirected"
        monkeypatch.setenv("HMINGRAPH_OUT", str(other))
        cfg = solve_cfg(tmp_path / "ignored")
        assert main(["solve", write_cfg(tmp_path / "c.json", cfg)]) == 0
        assert (other / "solution.csv").exists()
        assert not (tmp_path / "ignored").exists()

    def test_lock_file_blocks_a_second_writer(self, tmp_path, capsys):
        out = tmp_path / "out"
        out.mkdir()
        (out / ".lock").touch()
        cfg = solve_cfg(out)
        assert main(["solve", write_cfg(tmp_path / "c.json", cfg)]) == 1
        assert "already in use" in capsys.readouterr().err

    def test_lock_is_released_after_a_run(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_cfg(tmp_path / "c.json", solve_cfg(out))
        assert main(["solve", cfg]) == 0
        assert not (out / ".lock").exists()


class TestBoundaryExpressions:
    def test_whitelisted_arithmetic_works(self):
        f = boundary_expression("sin(pi*x1) + x2**2 - 0.5")
        assert f(0.5, 2.0) == pytest.approx(1.0 + 4.0 - 0.5)

    @pytest.mark.parametrize("src", [
        "__import__('os')",
        "open('/etc/passwd')",
        "x1.real",
        "(lambda: 1)()",
        "[1, 2]",
        "x3 + 1",
    ])
    def test_non_arithmetic_sources_are_rejected(self, src):
        with pytest.raises(ConfigError):
            boundary_expression(src)

    def test_rejection_reaches_the_exit_code(self, tmp_path, capsys):
        cfg = solve_cfg(tmp_path / "out", boundary={"expr": "__import__('os')"})
        assert main(["solve", write_cfg(tmp_path / "c.json", cfg)]) == 1


class TestContinuationCommand:
    def test_artifact_layout(self, fan_run_dir):
        names = sorted(p.name for p in fan_run_dir.iterdir())
        assert names == ["ledger.json", "run.json",
                         "solution_000.csv", "solution_001.csv", "solution_002.csv"]
        meta = json.loads((fan_run_dir / "run.json").read_text())
        assert meta["eps_values"] == [1.0, 0.5, 0.25]
        assert len(meta["sup_diffs"]) == 2
        ledger = json.loads((fan_run_dir / "ledger.json").read_text())
        assert [r["eps"] for r in ledger["rows"]] == [1.0, 0.5, 0.25]

    def test_reruns_are_byte_identical(self, fan_run_dir, tmp_path, monkeypatch):
        other = tmp_path / "rerun"
        monkeypatch.setenv("HMINGRAPH_OUT", str(other))
        cfg = write_cfg(tmp_path / "c.json", {
            "grid": {"x1": [0, 1], "x2": [1, 2], "n1": 33, "n2": 33},
            "boundary": {"expr": "x2 / (x1 + 2)"},
            "schedule": {"eps_start": 1.0, "factor": 0.5, "eps_min": 0.25},
            "output_dir": str(fan_run_dir),
        })
        assert main(["continuation", cfg]) == 0
        for name in ("run.json", "ledger.json", "solution_002.csv"):
            assert (other / name).read_bytes() == (fan_run_dir / name).read_bytes()


class TestFoliateCommand:
    def test_leaves_and_summary(self, fan_run_dir, tmp_path):
        out = tmp_path / "fol"
        cfg = write_cfg(tmp_path / "c.json", {
            "foliate": {"run_dir": str(fan_run_dir), "seed_spacing": 0.1},
            "output_dir": str(out),
        })
        assert main(["foliate", cfg]) == 0
        j = json.loads((out / "leaves.json").read_text())
        assert 0.5 < j["coverage"] <= 1.0
        assert j["leaves"]
        first = j["leaves"][0]
        assert (out / first["file"]).exists()
        fitted = [l for l in j["leaves"] if "c3" in l]
        assert fitted
        assert all(np.isfinite(l["c3"]) for l in fitted)

    def test_missing_run_dir_is_exit_1(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "c.json", {
            "foliate": {"run_dir": str(tmp_path / "nope")},
            "output_dir": str(tmp_path / "out"),
        })
        assert main(["foliate", cfg]) == 1
        assert "no run.json or report.json" in capsys.readouterr().err


class TestDiagnoseCommand:
    def test_smooth_run_passes(self, fan_run_dir, tmp_path):
        out = tmp_path / "diag"
        cfg = write_cfg(tmp_path / "c.json", {
            "diagnose": {"run_dir": str(fan_run_dir)},
            "output_dir": str(out),
        })
        assert main(["diagnose", cfg]) == 0
        v = json.loads((out / "verdict.json").read_text())
        assert v["pass"] is True
        assert set(v["residuals"]) == {"v", "z"}
        assert v["x2u_sup"] < 0.01

    def test_unknown_budget_key_is_exit_1(self, fan_run_dir, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "c.json", {
            "diagnose": {"run_dir": str(fan_run_dir), "budgets": {"holder_max": 1}},
            "output_dir": str(tmp_path / "out"),
        })
        assert main(["diagnose", cfg]) == 1
        assert "holder_max" in capsys.readouterr().err


class TestExampleCommand:
    def test_pauls_table_and_flags(self, tmp_path):
        out = tmp_path / "ex"
        cfg = write_cfg(tmp_path / "c.json", {
            "example": {"name": "pauls"},
            "grid": {"x1": [2, 4], "x2": [0.2, 1.2], "n1": 17, "n2": 17},
            "output_dir": str(out),
        })
        assert main(["example", cfg]) == 0
        x1, x2, u = load_u_column(out / "example.csv")
        assert len(u) == 17 * 17
        assert np.allclose(u, x2 / (x1 - 1.0), atol=1e-13)
        j = json.loads((out / "example.json").read_text())
        assert j["flags"]["C1_smooth"] is False
        assert j["flags"]["minimal_H0"] is True

    def test_grid_outside_the_domain_is_exit_1(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "c.json", {
            "example": {"name": "pauls"},
            "grid": {"x1": [0, 4], "x2": [0.2, 1.2], "n1": 9, "n2": 9},
            "output_dir": str(tmp_path / "out"),
        })
        assert main(["example", cfg]) == 1
        assert "undefined" in capsys.readouterr().err

    def test_unknown_name_is_exit_1(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "c.json", {
            "example": {"name": "parabola"},
            "grid": {"x1": [0, 1], "x2": [0, 1], "n1": 9, "n2": 9},
            "output_dir": str(tmp_path / "out"),
        })
        assert main(["example", cfg]) == 1


class TestDistanceCommand:
    def test_gauge_comparison_table(self, fan_run_dir, tmp_path):
        out = tmp_path / "dist"
        cfg = write_cfg(tmp_path / "c.json", {
            "distance": {"run_dir": str(fan_run_dir), "x0": [0.5, 1.5], "n_points": 6,
                         "mesh": 0.04, "box": [0.2, 0.2, 0.2], "seed": 0},
            "output_dir": str(out),
        })
        assert main(["distance", cfg]) == 0
        j = json.loads((out / "distance.json").read_text())
        assert j["n_points"] == 6
        assert 0.2 <= j["ratio_min"] <= j["ratio_max"] <= 5.0
        rows = np.loadtxt(out / "distance.csv", delimiter=",", skiprows=1)
        assert rows.shape == (6, 7)
        assert np.all(np.isfinite(rows))

    def test_off_node_base_point_is_exit_1(self, fan_run_dir, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "c.json", {
            "distance": {"run_dir": str(fan_run_dir), "x0": [0.512, 1.5]},
            "output_dir": str(tmp_path / "out"),
        })
        assert main(["distance", cfg]) == 1


def test_installed_entry_point_smoke(tmp_path):
    exe = shutil.which("hmingraph")
    if exe is None:
        pytest.skip("console script not on PATH")
    out = tmp_path / "out"
    cfg = write_cfg(tmp_path / "c.json", solve_cfg(out))
    proc = subprocess.run([exe, "solve", cfg], capture_output=True, text=True)
    assert proc.returncode == 0
    assert (out / "report.json").exists()
