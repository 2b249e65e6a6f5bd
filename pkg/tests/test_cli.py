import csv
import json
import subprocess
import sys

import pytest

from cfimpute.cli import main
from cfimpute.panel import write_panel
from cfimpute.simlab import GeneratorSpec, generate

FAST_BART = "hyperparameters: {n_trees: 5, n_burn: 5, n_keep: 3}\n"


@pytest.fixture
def panel_csv(tmp_path):
    path = tmp_path / "panel.csv"
    write_panel(generate(GeneratorSpec("one", n=120), 0), path)
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _analyze(tmp_path, panel_csv, out, *extra):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(FAST_BART)
    argv = ["analyze", "--input", str(panel_csv), "--config", str(cfg), "--family", "bart", "--B", "3",
            "--seed", "4", "--threads", "1", "--out", str(out), *extra]
    assert main(argv) == 0
    return out / "ace.csv"


def test_analyze_schema(tmp_path, panel_csv):
    path = _analyze(tmp_path, panel_csv, tmp_path / "o")
    rows = _rows(path)
    assert len(rows) == 5
    assert list(rows[0]) == ["t", "estimate", "se", "df", "ci_lo", "ci_hi", "B", "scenario"]
    side = json.loads(path.with_suffix(".csv.json").read_text())
    assert side["master_seed"] == 4 and side["config"]["families"] == ["bart"]
    assert "threads" not in side["config"]


def test_analyze_is_byte_identical_and_leaves_input_alone(tmp_path, panel_csv):
    before = panel_csv.read_bytes()
    a = _analyze(tmp_path, panel_csv, tmp_path / "a")
    b = _analyze(tmp_path, panel_csv, tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    assert panel_csv.read_bytes() == before


def test_rerun_from_sidecar_with_other_thread_count(tmp_path, panel_csv):
    a = _analyze(tmp_path, panel_csv, tmp_path / "a")
    out = tmp_path / "rerun"
    side = a.with_suffix(".csv.json")
    assert main(["analyze", "--config", str(side), "--threads", "2", "--out", str(out)]) == 0
    assert (out / "ace.csv").read_bytes() == a.read_bytes()


def test_profile_flag(tmp_path, panel_csv):
    path = _analyze(tmp_path, panel_csv, tmp_path / "p", "--profiles", "101 vs 000", "--horizon", "3")
    assert [r["t"] for r in _rows(path)] == ["1", "2", "3"]
    side = json.loads(path.with_suffix(".csv.json").read_text())
    assert side["estimator"]["profiles"] == "101 vs 000"


def test_simulate_two_families(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(FAST_BART)
    out = tmp_path / "sim"
    argv = ["simulate", "--config", str(cfg), "--family", "mlr", "--family", "bart", "--n-sims", "2",
            "--n", "100", "--B", "3", "--n-mc", "2000", "--threads", "1", "--out", str(out)]
    assert main(argv) == 0
    files = sorted(p.name for p in out.glob("*.csv"))
    assert files == ["study_one_sequential_bart.csv", "study_one_sequential_mlr.csv"]
    side = json.loads((out / "study_one_sequential_mlr.csv.json").read_text())
    assert side["preset"] == "desk" and side["config"]["n_sims"] == 2


def test_truth_command(tmp_path):
    assert main(["truth", "--situation", "two", "--n-mc", "100000", "--out", str(tmp_path)]) == 0
    vals = [float(r["true_ace"]) for r in _rows(tmp_path / "truth_two.csv")]
    for got, want in zip(vals, (0.64, 1.01, 1.39, 1.84, 2.37)):
        assert got == pytest.approx(want, abs=0.03)


def test_errors_are_single_line_with_category(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("subject_id,time,V,A,C1,M,Y\na,1,0.5,2,0.1,0.2,0.3\n")
    assert main(["analyze", "--input", str(bad), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: invalid_input:")
    assert main(["analyze", "--out", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("error: config:")


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("colour: blue\n")
    assert main(["truth", "--config", str(cfg)]) == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cfimpute.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
