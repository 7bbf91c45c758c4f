import json
import subprocess
import sys

import pytest

from ridgelab.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_ma_solve_default_fixture(capsys, tmp_path):
    code, out, _ = run(capsys, "ma-solve", "--out-dir", str(tmp_path))
    assert code == 0
    rep = json.loads(out)
    assert rep["converged"] and rep["residual"] <= 1e-10
    assert (tmp_path / "v0.plconvex.json").exists()
    assert json.loads((tmp_path / "ma-solve.json").read_text()) == rep


@pytest.mark.parametrize("where", ["before", "after"])
def test_global_flags_before_or_after_verb(capsys, tmp_path, where):
    flags = ["--out-dir", str(tmp_path), "--seed", "3"]
    argv = flags + ["verify", "--suite", "lifting", "--trials", "3"] if where == "before" else ["verify", "--suite", "lifting", "--trials", "3"] + flags
    code, out, _ = run(capsys, *argv)
    assert code == 0
    rep = json.loads(out)
    assert rep["seed"] == 3 and rep["passed"]
    assert (tmp_path / "verify-lifting.json").exists()


def test_verify_corrupt_exits_4(capsys, tmp_path):
    code, out, _ = run(capsys, "verify", "--suite", "alexandrov", "--trials", "3", "--corrupt", "--out-dir", str(tmp_path))
    assert code == 4
    assert json.loads(out)["results"][0]["violations"] == 3
    assert list(tmp_path.glob("counterexample-alexandrov-*.json"))


def test_missing_measure_file_exits_2(capsys, tmp_path):
    code, _, err = run(capsys, "ma-solve", "--measure", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path))
    assert code == 2 and "ridgelab:" in err


def test_bad_measure_exits_2(capsys, tmp_path):
    p = tmp_path / "mu.json"
    p.write_text(json.dumps({"atoms": [{"a": [0.0, 0.0], "sigma": -1.0}]}))
    code, _, _ = run(capsys, "ma-solve", "--measure", str(p), "--out-dir", str(tmp_path))
    assert code == 2


def test_convergence_failure_exits_3(capsys, tmp_path):
    p = tmp_path / "mu.json"
    atoms = [{"a": [-0.4, 0.0], "sigma": 1.0}, {"a": [0.4, 0.1], "sigma": 2.0}, {"a": [0.0, 0.5], "sigma": 0.5}]
    p.write_text(json.dumps({"atoms": atoms}))
    code, _, _ = run(capsys, "ma-solve", "--measure", str(p), "--max-iter", "0", "--out-dir", str(tmp_path))
    assert code == 3


def test_ridges_on_polygon_domain(capsys, tmp_path):
    d = tmp_path / "dom.json"
    d.write_text(json.dumps([[-1, -1], [1, -1], [1, 1], [-1, 1]]))
    code, out, _ = run(capsys, "ridges", "--domain", str(d), "--out-dir", str(tmp_path))
    assert code == 0
    assert len(json.loads(out)["ridges"]) == 1


def test_construct_then_energy(capsys, tmp_path):
    code, out, _ = run(capsys, "construct", "--family", "convex", "--h", str(2**-6.5), "--nodes-per-layer", "3", "--out-dir", str(tmp_path))
    assert code == 0
    built = json.loads(out)
    args = ["energy", "--h", str(2**-6.5), "--out-dir", str(tmp_path / "e"), "--no-excision"]
    for name in ("u", "v", "v0"):
        args += [f"--{name}", str(tmp_path / f"{name}.grid")]
    code, out, _ = run(capsys, *args)
    assert code == 0
    E = json.loads(out)
    assert E["total"] == pytest.approx(built["energy"]["unexcised"]["total"], rel=1e-12)


def test_report_with_no_artifacts(capsys, tmp_path):
    code, out, _ = run(capsys, "report", "--out-dir", str(tmp_path))
    assert code == 0
    assert json.loads(out)["sweeps"] == {}
    assert (tmp_path / "sweep.csv").read_text().startswith("h,feasible")


def test_report_missing_artifact_exits_2(capsys, tmp_path):
    code, _, _ = run(capsys, "report", str(tmp_path / "none.json"), "--out-dir", str(tmp_path))
    assert code == 2


def test_console_script_entry_point(tmp_path):
    r = subprocess.run(
        [sys.executable, "-m", "ridgelab.cli", "verify", "--suite", "invariance", "--trials", "2", "--out-dir", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["passed"]
