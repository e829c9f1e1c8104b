import json
import math
import subprocess
import sys

import pytest

from quadflux.cli import main, run_benchmark
from quadflux.io import read_convergence_csv, read_summary


def test_run_lshape(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--benchmark", "lshape", "--theta", "0.3", "--tol", "0.01", "--out", str(out)])
    assert code == 0
    recs = read_convergence_csv(out / "convergence.csv")
    assert len(recs) >= 4
    summary = read_summary(out / "run_summary.json")
    assert summary["status"] == "converged"
    for key in ("rate_err", "rate_eta_hat", "rate_eta_res", "final_eff_hat", "final_eff_res"):
        assert math.isfinite(summary[key])
    assert summary["final_ndof"] == recs[-1].ndof
    snaps = sorted(p.name for p in out.glob("mesh_*.vtk"))
    assert snaps[0] == "mesh_0000.vtk"
    assert len(snaps) == len(range(0, len(recs), 5))
    assert "rate_err" in capsys.readouterr().out


def test_emitted_table_matches_the_records(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--benchmark", "kellogg", "--max-iterations", "6", "--snapshot-every", "0",
                 "--out", str(out)]) == 0
    mem = run_benchmark("kellogg", max_iterations=6).records
    disk = read_convergence_csv(out / "convergence.csv")
    assert not list(out.glob("*.vtk"))
    for a, b in zip(mem, disk):
        for k, v in a.as_dict().items():
            if k != "wall_ms":
                assert repr(float(v)) == repr(float(b.as_dict()[k])), k


def test_verify(capsys):
    assert main(["verify"]) == 0
    text = capsys.readouterr().out
    assert "FAIL" not in text and text.count("PASS") == 7


@pytest.mark.parametrize("argv", [
    ["run", "--benchmark", "nosuch"],
    ["run", "--benchmark", "lshape", "--bogus", "1"],
    ["frobnicate"],
    [],
    ["run", "--benchmark", "lshape", "--theta", "1.5"],
    ["run", "--benchmark", "lshape", "--cap", "one"],
    ["compare-irregularity", "--caps", "1,x"],
])
def test_usage_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "c.json"
    out = tmp_path / "o"
    conf.write_text(json.dumps({"benchmark": "lshape", "max_iterations": 3, "theta": 0.5,
                                "snapshot-every": 0, "out": str(out)}))
    assert main(["run", "--config", str(conf), "--theta", "0.4"]) == 0
    settings = json.loads((out / "run_summary.json").read_text())["settings"]
    assert settings["theta"] == 0.4          # flag beats config
    assert settings["max_iterations"] == 3   # config beats default
    assert settings["max_dofs"] == 30000     # default
    assert len(read_convergence_csv(out / "convergence.csv")) == 3


def test_bad_config(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"benchmark": "lshape", "nonsense": 1}))
    assert main(["run", "--config", str(conf)]) == 2
    conf.write_text("{not json")
    assert main(["run", "--config", str(conf)]) == 2


def test_bad_thread_count(monkeypatch, tmp_path):
    monkeypatch.setenv("QUADFLUX_THREADS", "many")
    assert main(["compare-irregularity", "--out", str(tmp_path)]) == 2


def test_compare_irregularity(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("QUADFLUX_THREADS", "2")
    code = main(["compare-irregularity", "--benchmark", "wavefront", "--caps", "1,0", "--dofs", "400",
                 "--max-dofs", "800", "--out", str(tmp_path)])
    assert code == 0
    text = capsys.readouterr().out
    assert "1-irregular" in text and "unbounded" in text
    summary = read_summary(tmp_path / "compare_summary.json")
    assert all(math.isfinite(summary[f"rel_error_at_dofs_cap{c}"]) for c in (0, 1))
    capped = read_convergence_csv(tmp_path / "convergence_cap1.csv")
    assert max(r.max_irregularity for r in capped) <= 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "quadflux", "run", "--benchmark", "nosuch"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "benchmark" in proc.stderr
