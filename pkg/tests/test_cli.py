import json
import subprocess
import sys

import numpy as np
import pytest

import freqsqueeze.pipeline as pipeline
from freqsqueeze.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main
from freqsqueeze.fitting import gain_model, saturation_model
from freqsqueeze.nlo import ConvergenceError, load_poling_csv
from freqsqueeze.simulability import SimulabilityInput, simulability_epsilon

CONFIG = {
    "seed": 3,
    "grid": {"n_modes": 8, "spacing": 1.0},
    "dopa": {"length": 1.0, "pump": {"peak": 0.3, "fwhm": 3.0}},
    "afc": {"length": 5.0, "pump": {"shape": "monochromatic", "peak": 0.2}},
    "spectrometer": {"n_bins": 2},
    "sampling": {"shots": 50},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(CONFIG))
    return path


def write_xy(path, x, y, header=True):
    lines = (["power,value"] if header else []) + [f"{float(a)!r},{float(b)!r}" for a, b in zip(x, y)]
    path.write_text("\n".join(lines) + "\n")
    return path


# --- run ----------------------------------------------------------------------------


def test_run_writes_manifest(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["--out-dir", str(out), "run", str(config_file)]) == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 3
    assert "spectrum.csv" in man["files"]
    assert json.loads(capsys.readouterr().out)["manifest"] == str(out / "manifest.json")


def test_global_flags_after_subcommand_and_determinism(config_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--seed", "11", "--out-dir", str(a), "run", str(config_file)]) == EXIT_OK
    assert main(["run", str(config_file), "--seed", "11", "--out-dir", str(b)]) == EXIT_OK
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    assert json.loads((a / "manifest.json").read_text())["seed"] == 11


def test_run_set_override(config_file, tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(config_file), "--out-dir", str(out), "--set", "sampling.shots=0"]) == EXIT_OK
    assert json.loads((out / "config.json").read_text())["sampling"]["shots"] == 0
    assert main(["run", str(config_file), "--out-dir", str(out), "--set", "nonsense"]) == EXIT_CONFIG


def test_run_exit_codes(config_file, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**CONFIG, "grid": {"n_modes": -1, "spacing": 1.0}}))
    assert main(["run", str(bad)]) == EXIT_CONFIG
    (tmp_path / "broken.json").write_text("{")
    assert main(["run", str(tmp_path / "broken.json")]) == EXIT_CONFIG
    assert main(["run", str(tmp_path / "missing.json")]) == EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", str(config_file), "--out-dir", str(blocker / "out")]) == EXIT_IO


def test_run_numeric_failure_keeps_partial_report(config_file, tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise ConvergenceError("did not settle", 1e-3, 4096)

    monkeypatch.setattr(pipeline, "solve_afc", broken)
    out = tmp_path / "out"
    assert main(["run", str(config_file), "--out-dir", str(out)]) == EXIT_NUMERIC
    man = json.loads((out / "manifest.json").read_text())
    assert man["failed_stage"] == "afc"
    assert "supermodes.csv" in man["files"]


def test_usage_errors(capsys):
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main([]) == EXIT_CONFIG
    assert main(["--help"]) == EXIT_OK
    capsys.readouterr()


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "freqsqueeze.cli", "simulability", "--r", "1", "--eta", "0.4", "--K", "10"],
        capture_output=True,
        text=True,
        cwd=tmp_path,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["epsilon"] > 0


# --- fits ---------------------------------------------------------------------------


def test_fit_gain(tmp_path, capsys):
    P = np.linspace(10, 300, 12)
    data = write_xy(tmp_path / "g.csv", P, gain_model(P, 431.0, 50.0))
    assert main(["fit-gain", str(data), "--out-dir", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "fit_gain.json").read_text())
    assert doc["params"]["etaM"] == pytest.approx(431.0, rel=1e-6)
    assert doc["model"] == "parametric_gain"
    capsys.readouterr()


def test_fit_saturation_with_sigma(tmp_path):
    P = np.linspace(0, 5, 10)
    c = saturation_model(P, 0.925, 1.3)
    path = tmp_path / "s.csv"
    path.write_text("\n".join(f"{float(a)!r},{float(b)!r},0.01" for a, b in zip(P, c)) + "\n")
    assert main(["fit-saturation", str(path), "--out-dir", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "fit_saturation.json").read_text())
    assert doc["params"]["c_max"] == pytest.approx(0.925, rel=1e-6)


def test_fit_input_errors(tmp_path):
    short = write_xy(tmp_path / "short.csv", [1.0, 2.0], [1.0, 2.0])
    assert main(["fit-gain", str(short), "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    (tmp_path / "cols.csv").write_text("1,2,3,4\n2,3,4,5\n3,4,5,6\n")
    assert main(["fit-gain", str(tmp_path / "cols.csv")]) == EXIT_CONFIG
    (tmp_path / "text.csv").write_text("p,c\n1,a\n2,b\n3,c\n")
    assert main(["fit-saturation", str(tmp_path / "text.csv")]) == EXIT_CONFIG
    assert main(["fit-saturation", str(tmp_path / "absent.csv")]) == EXIT_IO


# --- simulability, roc, poling ---------------------------------------------------------


def test_simulability_point(capsys):
    assert main(["simulability", "--r", "1", "--eta", "0.4", "--eta-d", "0.9", "--p-d", "0.01", "--K", "400"]) == EXIT_OK
    got = json.loads(capsys.readouterr().out)["epsilon"]
    assert got == simulability_epsilon(SimulabilityInput(1.0, 0.4, 0.9, 0.01, 400))
    assert main(["simulability", "--r", "1", "--eta", "1.4", "--K", "4"]) == EXIT_CONFIG


def test_simulability_surface(tmp_path, capsys):
    argv = ["simulability", "--r", "1", "--eta", "0.4", "--K", "400", "--out-dir", str(tmp_path)]
    assert main(argv + ["--eta-d-grid", "0.5:1:3", "--p-d-grid", "0,0.01"]) == EXIT_OK
    lines = (tmp_path / "simulability_surface.csv").read_text().splitlines()
    assert lines[0] == "eta_D,p_D,epsilon"
    assert len(lines) == 1 + 6
    assert main(argv + ["--eta-d-grid", "0.5:1:3"]) == EXIT_CONFIG
    assert main(argv + ["--eta-d-grid", "x:y", "--p-d-grid", "0"]) == EXIT_CONFIG
    capsys.readouterr()


def test_roc(tmp_path, capsys):
    assert main(["roc", "--out-dir", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0] == "threshold,false_rate,pde" and len(lines) == 102
    assert main(["roc", "--out-dir", str(tmp_path), "--thresholds", "500", "--qe", "0.5"]) == EXIT_OK
    t, f, p = (float(v) for v in (tmp_path / "roc.csv").read_text().splitlines()[1].split(","))
    assert t == 500 and p == pytest.approx(0.5 / 0.95 * 0.8046, abs=1e-3)
    assert main(["roc", "--profile", "nope"]) == EXIT_CONFIG
    assert main(["roc", "--readout-sigma", "0", "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    capsys.readouterr()


def test_poling(tmp_path, capsys):
    argv = ["poling", "--length", "0.01", "--beta-i", "1000", "--beta-f", "1100", "--quantum", "1e-5", "--out-dir", str(tmp_path)]
    assert main(argv) == EXIT_OK
    prof = load_poling_csv(tmp_path / "poling.csv")
    assert prof.total_length == pytest.approx(0.01, rel=1e-2)
    assert main(["poling", "--length", "0.01", "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"afc": {"length": 0.01, "poling": {"beta_i": 1000.0, "beta_f": 1100.0, "quantum": 1e-5}}}))
    assert main(["poling", "--config", str(cfg), "--out-dir", str(tmp_path / "p")]) == EXIT_OK
    assert (tmp_path / "p" / "poling.csv").read_bytes() == (tmp_path / "poling.csv").read_bytes()
    assert main(["poling", "--length", "-1", "--beta-i", "1", "--beta-f", "2"]) == EXIT_CONFIG
    capsys.readouterr()
