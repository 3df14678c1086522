import json
import time
from pathlib import Path

import numpy as np
import pytest

from hydrovalue.bundle import InflowBundle
from hydrovalue.cli import EXIT_CHECK, EXIT_INPUT, EXIT_OK, cmd_solve, main
from hydrovalue.config import RunConfig
from hydrovalue.ingest import SyntheticParams, synthesize_inflow, write_inflow_csv
from hydrovalue.mdp import SystemConfig


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def inflow_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "inflow.csv"
    write_inflow_csv(synthesize_inflow(SyntheticParams(), 74, seed=5), p)
    return p


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory, inflow_csv):
    """A 2-regime, 2-level system fitted, built and solved through the CLI."""
    out = tmp_path_factory.mktemp("toy")
    cfg = RunConfig(inflow_csv=str(inflow_csv), output_dir=str(out), levels=[0.5],
                    system=SystemConfig(storage_blocks=1, turbine_blocks=2))
    cpath = out / "config.json"
    cfg.save(cpath)
    assert run("fit", "-c", cpath) == EXIT_OK
    assert run("build", "-c", cpath) == EXIT_OK
    return cfg, cpath


def test_fit_case_study_shapes(tmp_path, inflow_csv, capsys):
    assert run("fit", "--inflow", inflow_csv, "-o", tmp_path) == EXIT_OK
    text = capsys.readouterr().out
    assert "coverage" in text and "log-likelihood" in text
    b = InflowBundle.load(tmp_path / "bundle.json")
    assert len(b.family.levels) == 3
    assert b.transition.gamma.shape[:2] == (4, 4)
    assert len(b.inflow_dist.support) == 4 * 52
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["bundle.json"]["config_hash"] == man["quantiles.json"]["config_hash"]


def test_levels_flag(tmp_path, inflow_csv):
    assert run("fit", "--inflow", inflow_csv, "-o", tmp_path, "--levels", "0.5", "--harmonics", "1") == EXIT_OK
    b = InflowBundle.load(tmp_path / "bundle.json")
    assert b.n_regimes == 2
    assert b.family.basis.harmonics == 1


def test_missing_file(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert run("fit", "--inflow", missing, "-o", tmp_path) == EXIT_INPUT
    assert str(missing) in capsys.readouterr().err


def test_bad_inputs(tmp_path, capsys):
    assert run("fit", "--inflow", "x.csv", "--levels", "0.5,abc", "-o", tmp_path) == EXIT_INPUT
    assert run("solve", "-o", tmp_path) == EXIT_INPUT  # nothing built yet
    assert "build" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text('{"unknown_key": 1}')
    assert run("fit", "-c", bad) == EXIT_INPUT


def test_tiny_solve_under_a_second(toy_run):
    cfg, cpath = toy_run
    t0 = time.perf_counter()
    summary = cmd_solve(cfg)
    assert time.perf_counter() - t0 < 1.0
    assert summary["states"] == 2 * 2 * 52 and summary["lp_rows"] == summary["states"] + 1
    assert summary["duality_gap"] <= 1e-6
    assert summary["u_annual"] == pytest.approx(52 * summary["u_weekly"])
    for name in ("policy.csv", "values.csv", "offer_curves.csv", "solution.json"):
        assert (Path(cfg.output_dir) / name).stat().st_size > 0


def test_simulate_deterministic_files(toy_run, tmp_path):
    cfg, cpath = toy_run
    assert run("solve", "-c", cpath) == EXIT_OK
    sim = Path(cfg.output_dir) / "simulation.json"
    assert run("simulate", "-c", cpath, "--years", 100, "--seed", 7) in (EXIT_OK, EXIT_CHECK)
    first = sim.read_bytes()
    assert run("simulate", "-c", cpath, "--years", 100, "--seed", 7) in (EXIT_OK, EXIT_CHECK)
    assert sim.read_bytes() == first
    d = json.loads(first)
    assert d["years"] == 100 and d["seed"] == 7 and d["config_hash"] == cfg.digest()


def test_simulate_exit_code_and_figures(toy_run):
    cfg, cpath = toy_run
    assert run("solve", "-c", cpath) == EXIT_OK
    assert run("simulate", "-c", cpath, "--years", 3000, "--seed", 11, "--trajectory") == EXIT_OK
    d = json.loads((Path(cfg.output_dir) / "simulation.json").read_text())
    assert d["within_3se"] is True
    assert run("export-figures", "-c", cpath) == EXIT_OK
    for name in ("fig1_inflow.csv", "fig1_quantiles.csv", "fig2_policy.csv", "fig2_values.csv", "fig3_offer_curves.csv", "trajectory.csv"):
        assert (Path(cfg.output_dir) / name).is_file()


def test_config_mismatch_and_init(toy_run, tmp_path):
    cfg, cpath = toy_run
    assert run("solve", "-c", cpath, "--storage-blocks", 3) == EXIT_INPUT
    p = tmp_path / "default.json"
    assert run("init-config", p) == EXIT_OK
    back = RunConfig.load(p)
    assert back == RunConfig()
    assert back.levels == [0.1, 0.5, 0.9] and back.system == SystemConfig()


def test_synthesize(tmp_path):
    p = tmp_path / "syn.csv"
    assert run("synthesize", "--inflow", p, "--years", 3, "--seed", 2) == EXIT_OK
    lines = p.read_text().splitlines()
    assert lines[0] == "year,week,inflow" and len(lines) == 1 + 3 * 52
