import json
from pathlib import Path

import numpy as np
import pytest

from bwopt.cli import EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_OK, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def small_grid(tmp_path):
    p = tmp_path / "grid.json"
    p.write_text(json.dumps({"grid": {"n_points": 600}}))
    return str(p)


def run_synth(out, small_grid, *extra):
    return main(["synthesize", "--config", str(CONFIGS / "pid_lp.json"), "--config", small_grid,
                 "--max-iter", "3", "--out", str(out), *extra])


def test_synthesize_writes_outputs(tmp_path, small_grid, capsys):
    rc = run_synth(tmp_path / "o", small_grid)
    assert rc == EXIT_NOT_CONVERGED
    out = tmp_path / "o"
    for name in ("report.json", "history.csv", "loopgain.csv", "sensitivity.csv", "controller.json"):
        assert (out / name).exists()
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "NOT_CONVERGED_BUDGET" and rep["iterations"] == 3
    assert rep["omega_bw"]["rad_s"] > rep["initial"]["omega_bw_rad_s"]
    assert rep["omega_bw"]["hz"] == pytest.approx(rep["omega_bw"]["rad_s"] / (2 * np.pi))
    assert "omega_bw" in capsys.readouterr().out


def test_synthesize_is_byte_identical(tmp_path, small_grid):
    run_synth(tmp_path / "a", small_grid)
    run_synth(tmp_path / "b", small_grid)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_analyze_round_trip(tmp_path, small_grid):
    # the synthesized controller, re-analyzed, reproduces the reported numbers
    run_synth(tmp_path / "s", small_grid)
    rep = json.loads((tmp_path / "s" / "report.json").read_text())
    rc = main(["analyze", "--plant", str(CONFIGS / "flexstage_plant.json"), "--config",
               str(tmp_path / "s" / "controller.json"), "--out", str(tmp_path / "a")])
    assert rc == EXIT_OK
    ana = json.loads((tmp_path / "a" / "analysis.json").read_text())
    assert ana["omega_bw"]["rad_s"] == pytest.approx(rep["omega_bw"]["rad_s"], rel=1e-12)
    assert ana["hinf"] == pytest.approx(rep["hinf"], rel=1e-12)
    assert (tmp_path / "a" / "sensitivity.csv").read_bytes() == (tmp_path / "s" / "sensitivity.csv").read_bytes()


def test_analyze_without_controller(tmp_path):
    rc = main(["analyze", "--plant", str(CONFIGS / "flexstage_plant.json"), "--out", str(tmp_path)])
    assert rc == EXIT_OK
    ana = json.loads((tmp_path / "analysis.json").read_text())
    assert ana["hinf"] == 1.0 and ana["omega_bw"] is None
    header = (tmp_path / "plant_response.csv").read_text().splitlines()[1]
    assert header.endswith("coupling_envelope")


def test_malformed_plant_exit_code(tmp_path, capsys):
    d = json.loads((CONFIGS / "flexstage_plant.json").read_text())
    d["modal"]["mass"][2] = 0.0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d, indent=2))
    rc = main(["validate", "--plant", str(bad)])
    err = capsys.readouterr().err
    assert rc == EXIT_INPUT
    assert "modal.mass[2]" in err and "bad.json:" in err


def test_unstable_initial_controller(tmp_path, capsys):
    cfg = json.loads((CONFIGS / "pid_lp.json").read_text())
    cfg["plant"] = str(CONFIGS / "flexstage_plant.json")
    cfg["controller"]["omega_c"] = [5000.0] * 7
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    rc = main(["synthesize", "--config", str(p), "--out", str(tmp_path / "o")])
    assert rc == EXIT_INPUT
    assert "spectral abscissa" in capsys.readouterr().err


def test_validate(capsys):
    assert main(["validate", "--config", str(CONFIGS / "pid_lp_notch.json")]) == EXIT_OK
    out = capsys.readouterr().out
    # 7 crossovers plus beta and zeta for each of the 4 notches
    assert "7 channels" in out and "15 parameters" in out


def test_missing_plant(tmp_path, capsys):
    assert main(["validate", "--out", str(tmp_path)]) == EXIT_INPUT
    assert "no plant" in capsys.readouterr().err


def test_flag_overrides(tmp_path, small_grid):
    run_synth(tmp_path / "o", small_grid, "--direction-mode", "raw", "--smax", "1.8")
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["solver"]["direction_mode"] == "RAW_SUBGRADIENT" and rep["S_max"] == 1.8
