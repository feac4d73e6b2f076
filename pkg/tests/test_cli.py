import json
import os
import subprocess
import sys

import pytest

from fracheat.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, apply_overrides, main
from fracheat.spectral import SpectralField, read_field

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


def small_plan(tmp_path, name="plan.toml", body=None):
    body = body or 'experiment = "embedding_chain"\nladder = [256, 512, 1024]\nensemble_count = 3\nseed = 5\n'
    path = tmp_path / name
    path.write_text(body)
    return str(path)


def test_overrides_are_typed_and_dotted():
    doc = apply_overrides({"solver": {"p": 3.0}}, ["solver.p=4", "grid.points=512", "forcing.0.kind='zero'",
                                                   "solver.tol=1e-9"])
    assert doc["solver"]["p"] == 4 and doc["grid"]["points"] == 512
    assert doc["solver"]["tol"] == 1e-9


def test_solve_small_config(tmp_path):
    out = tmp_path / "o"
    code = main(["solve", "--config", os.path.join(CONFIGS, "delta_theta2.toml"), "--out", str(out),
                 "grid.points=512", "solver.n_time=64", "output.snapshots=[1, 32, 64]", "-q"])
    assert code == EXIT_OK
    rep = json.loads((out / "solve_report.json").read_text())
    assert rep["converged"] and rep["resolved_config"]["grid"]["points"] == 512
    assert [s["slice"] for s in rep["snapshots"]] == [1, 32, 64]
    assert rep["weak_star"]["exponent"] > 0.8
    assert isinstance(read_field(out / "u_00064.frht"), SpectralField)
    assert isinstance(read_field(out / "mu.frht"), SpectralField)
    lines = (out / "slice_norms.csv").read_text().splitlines()
    assert lines[0].startswith("#") and len([x for x in lines if not x.startswith("#")]) == 66


def test_solve_divergent_exit_one(tmp_path):
    code = main(["solve", "--config", os.path.join(CONFIGS, "delta_theta2.toml"), "--out", str(tmp_path),
                 "grid.points=512", "solver.n_time=64", "forcing.0.amplitude=1e4", "output.snapshots=[64]", "-q"])
    assert code == EXIT_FAIL
    assert json.loads((tmp_path / "solve_report.json").read_text())["verdict"] == "diverged"


def test_norms(tmp_path):
    code = main(["norms", "--config", os.path.join(CONFIGS, "homogeneous_norms.toml"), "--out", str(tmp_path),
                 "grid.points=1024"])
    assert code == EXIT_OK
    res = json.loads((tmp_path / "norms.json").read_text())
    assert res["lorentz_ul"] <= res["lorentz"] * (1 + 1e-12)
    assert (tmp_path / "blocks.csv").exists()


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["solve"],
    ["solve", "--config", "/nonexistent.toml"],
    ["solve", "--config", os.path.join(CONFIGS, "delta_theta2.toml"), "solver.p=1.5"],
    ["solve", "--config", os.path.join(CONFIGS, "delta_theta2.toml"), "solver.bogus=1"],
    ["solve", "--config", os.path.join(CONFIGS, "delta_theta2.toml"), "forcing.0.kind='wavelet'"],
    ["kernel", "--theta", "3"],
    ["kernel", "--theta", "1", "--half-length", "64"],
    ["verify", "--plan", "/nonexistent.toml"],
    ["verify", "--jobs", "0", "--plan", "x.toml"],
])
def test_usage_errors_exit_two(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path / "o")] if argv else argv) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_unwritable_output_is_usage_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    plan = small_plan(tmp_path)
    assert main(["verify", "--plan", plan, "--out", str(blocker / "sub")]) == EXIT_USAGE


def test_bad_plan_schema(tmp_path):
    plan = small_plan(tmp_path, body='experiment = "embedding_chain"\nladder = "wide"\n')
    assert main(["verify", "--plan", plan, "--out", str(tmp_path / "o")]) == EXIT_USAGE
    unknown = small_plan(tmp_path, "u.toml", 'experiment = "no_such"\n')
    assert main(["verify", "--plan", unknown, "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_sweep_rejects_other_experiments(tmp_path):
    assert main(["sweep", "--plan", small_plan(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_verify_pass_and_fail(tmp_path):
    plan = small_plan(tmp_path)
    assert main(["verify", "--plan", plan, "--out", str(tmp_path / "a")]) == EXIT_OK
    for ext in ("csv", "schema.json", "summary.json"):
        assert (tmp_path / "a" / f"embedding_chain.{ext}").exists()
    # an impossible stability band turns the report red
    assert main(["verify", "--plan", plan, "--out", str(tmp_path / "b"), "band=1e-9"]) == EXIT_FAIL


def test_verify_determinism_and_seed_env(tmp_path, monkeypatch):
    plan = small_plan(tmp_path)
    for d in ("a", "b"):
        assert main(["verify", "--plan", plan, "--out", str(tmp_path / d)]) == EXIT_OK
    a = (tmp_path / "a" / "embedding_chain.csv").read_bytes()
    assert a == (tmp_path / "b" / "embedding_chain.csv").read_bytes()
    monkeypatch.setenv("FRACHEAT_SEED", "99")
    assert main(["verify", "--plan", plan, "--out", str(tmp_path / "c")]) == EXIT_OK
    c = (tmp_path / "c" / "embedding_chain.csv").read_bytes()
    assert c != a and b'"seed": 99' in c


def test_kernel_command(tmp_path):
    code = main(["kernel", "--theta", "1.0", "--half-length", "1024", "--out", str(tmp_path)])
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "kernel_theta1_T1.json").read_text())
    assert summary["fit"]["slope"] < -1.5
    assert (tmp_path / "kernel_envelope_theta1_T1.csv").exists()


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "fracheat.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("fracheat ")
    r = subprocess.run([sys.executable, "-m", "fracheat.cli", "verify"], capture_output=True, text=True)
    assert r.returncode == EXIT_USAGE
