import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hamsuspend import ExperimentConfig, run_suspension, run_sweep, run_verify
from hamsuspend.cli import main
from hamsuspend.errors import ConfigError, ContractionError, StageError
from hamsuspend.pipeline import (
    DEGENERATE,
    FAIL,
    PASS,
    SWEEP_COLUMNS,
    Check,
    VerificationReport,
    environment_stamp,
    section_grid,
    sweep_combinations,
)
from hamsuspend.suspension import bracket_factor

# small grids keep the end-to-end runs to a few seconds
FAST = dict(section_points=4, norm_section_ppa=11, norm_block_ppa=7, trajectories=2,
            trajectory_samples=5, verify_samples=12)


# -- config ------------------------------------------------------------------


def test_config_defaults():
    cfg = ExperimentConfig()
    assert (cfg.d, cfg.rho, cfg.nu, cfg.xi, cfg.eps, cfg.family) == (2, 1.0, 0.5, 0.5, 0.05, "cubic")
    assert cfg.half_dim == 1


def test_config_ini_round_trip():
    cfg = ExperimentConfig(family="random-poly", eps=0.02, cutoff_radius=0.8, seed=9, d=3,
                           sweep_eps=(0.1, 0.01), sweep_rho=(0.5, 2.0), workers=2, sweep_sections=False)
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg
    assert ExperimentConfig.from_ini(ExperimentConfig().to_ini()) == ExperimentConfig()


def test_config_partial_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[generator]\neps = 0.01\n[sweep]\nsweep_eps = 0.1, 0.01 0.001\n")
    cfg = ExperimentConfig.from_file(path)
    assert cfg.eps == 0.01 and cfg.sweep_eps == (0.1, 0.01, 0.001)
    assert cfg.rho == 1.0


def test_config_inline_comments():
    cfg = ExperimentConfig.from_ini("[generator]\neps = 0.02   ; perturbation size\nfamily = cubic # default\n")
    assert cfg.eps == 0.02 and cfg.family == "cubic"


@pytest.mark.parametrize("text", [
    "[nonsense]\na = 1\n",
    "[generator]\nrho = 1\n",
    "[generator]\neps = abc\n",
    "[geometry]\nd = 7\n",
    "[generator]\neps = 2.0\n",
    "[generator]\ncutoff_radius = 1.5\n",
    "[integrator]\ntol = 1e-3\n",
    "[geometry]\nnu = 1.0\n",
    "[generator]\nfamily = quartic\n",
    "[sweep]\nsweep_sections = maybe\n",
    "not an ini file",
])
def test_config_rejects_bad_input(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini(text)


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "absent.ini")


def test_config_overrides():
    cfg = ExperimentConfig().with_overrides(seed=4, tol=None)
    assert cfg.seed == 4 and cfg.tol == 1e-10
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(tol=1.0)


def test_section_grid_shape():
    grid = section_grid(ExperimentConfig(section_points=10))
    assert grid.shape == (100, 2)
    assert np.max(np.linalg.norm(grid, axis=1)) == pytest.approx(0.5)
    grid3 = section_grid(ExperimentConfig(section_points=5, d=3))
    assert grid3.shape == (25, 4) and np.max(np.linalg.norm(grid3, axis=1)) <= 0.5


# -- reports -----------------------------------------------------------------


def test_report_status_rules():
    rep = VerificationReport("verify", ExperimentConfig())
    rep.add(Check.upper("a", 1.0, 2.0))
    rep.add(Check("b", DEGENERATE, None, None, True))
    rep.add(Check.upper("c", 3.0, 2.0, required=False))
    assert rep.passed and rep.first_failure() is None
    rep.add(Check.upper("d", 3.0, 2.0))
    assert not rep.passed and rep.first_failure().name == "d"
    assert Check.upper("nan", float("nan"), 1.0).status == FAIL


def test_environment_stamp_is_stable():
    stamp = environment_stamp()
    assert set(stamp) == {"package", "python", "numpy", "scipy"}
    assert stamp == environment_stamp()


def test_stage_error_names_stage():
    err = StageError("generating_isotopy", "build_generator", ContractionError("too big"))
    assert str(err).startswith("[generating_isotopy/build_generator] ContractionError")


# -- suspend -----------------------------------------------------------------


def test_suspend_zero_eps_is_degenerate_pass(tmp_path):
    rep = run_suspension(ExperimentConfig(eps=0.0, **FAST), tmp_path)
    assert rep.passed, rep.summary()
    checks = {c.name: c for c in rep.checks}
    assert checks["norm_constant"].status == DEGENERATE
    assert rep.norms.degenerate and rep.norms.constant is None
    assert checks["section_residual"].value == 0.0


def test_suspend_contraction_violation(tmp_path):
    rep = run_suspension(ExperimentConfig(eps=0.6, **FAST), tmp_path)
    assert not rep.passed
    assert rep.error.startswith("[generating_isotopy/build_generator] ContractionError")
    assert json.loads(rep.to_json())["status"] == FAIL


def test_suspend_writes_artifacts(tmp_path):
    cfg = ExperimentConfig(**FAST)
    rep = run_suspension(cfg, tmp_path)
    assert rep.passed, rep.summary()
    for name in ("norms.txt", "norms.json", "sections.csv", "trajectory_000.csv", "trajectory_001.csv",
                 "report.json", "config.ini"):
        assert (tmp_path / name).exists(), name
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["config"] == cfg.to_dict()
    assert ExperimentConfig.from_file(tmp_path / "config.ini") == cfg
    rows = list(csv.reader(open(tmp_path / "sections.csv")))
    assert len(rows) == 17


def test_suspend_csv_outputs_are_deterministic(tmp_path):
    cfg = ExperimentConfig(family="random-poly", seed=5, **FAST)
    run_suspension(cfg, tmp_path / "a")
    run_suspension(ExperimentConfig.from_file(tmp_path / "a" / "config.ini"), tmp_path / "b")
    for name in ("sections.csv", "trajectory_000.csv", "norms.txt", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


@pytest.mark.slow
def test_suspend_default_config(tmp_path):
    rep = run_suspension(ExperimentConfig(), tmp_path)
    assert rep.passed, rep.summary()
    res = next(c for c in rep.checks if c.name == "section_residual")
    assert res.value <= 1e-6


# -- sweep -------------------------------------------------------------------


def test_sweep_needs_a_list():
    with pytest.raises(ConfigError):
        sweep_combinations(ExperimentConfig())
    assert len(sweep_combinations(ExperimentConfig(sweep_eps=(0.1, 0.01), sweep_nu=(0.3, 0.5, 0.7)))) == 6


def test_rho_sweep_bracket_recomputation(tmp_path):
    cfg = ExperimentConfig(sweep_rho=(0.5, 1.0, 2.0), sweep_sections=False, **FAST)
    rows = run_sweep(cfg, tmp_path)
    assert [r["rho"] for r in rows] == [0.5, 1.0, 2.0]
    for r in rows:
        assert r["status"] == PASS
        assert r["bracket"] == bracket_factor(r["rho"], r["g_minus_id_c3"])
        assert r["bracket"] == pytest.approx(1 + r["rho"] + 1 / r["rho"] + r["rho"] * r["g_minus_id_c3"] ** 2)
    table = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert list(table[0]) == list(SWEEP_COLUMNS)
    assert float(table[2]["bracket"]) == rows[2]["bracket"]


def test_sweep_records_failures(tmp_path):
    rows = run_sweep(ExperimentConfig(sweep_eps=(0.1, 0.6), sweep_sections=False, **FAST), tmp_path)
    assert [r["status"] for r in rows] == [PASS, FAIL]
    assert "ContractionError" in rows[1]["error"]


def test_sweep_pool_matches_serial(tmp_path):
    base = dict(sweep_eps=(0.1, 0.01), sweep_sections=True, **FAST)
    run_sweep(ExperimentConfig(workers=1, **base), tmp_path / "serial")
    run_sweep(ExperimentConfig(workers=2, **base), tmp_path / "pool")
    assert (tmp_path / "serial" / "sweep.csv").read_bytes() == (tmp_path / "pool" / "sweep.csv").read_bytes()


# -- verify ------------------------------------------------------------------


def test_verify_zero_generator_flags_degenerate_checks():
    rep = run_verify(ExperimentConfig(eps=0.0, **FAST), write=False)
    assert rep.passed, rep.summary()
    statuses = {c.name: c.status for c in rep.checks}
    assert statuses["generator_contraction"] == PASS
    assert all(v in (PASS, DEGENERATE) for k, v in statuses.items() if k != "bump_second_derivative_stated_bound")


def test_verify_tampered_bump_is_flagged():
    rep = run_verify(ExperimentConfig(nu=0.999, **FAST), write=False)
    checks = {c.name: c for c in rep.checks}
    stated = checks["bump_second_derivative_stated_bound"]
    assert stated.status == FAIL and not stated.required
    assert stated.value > 1000 * stated.threshold
    assert checks["bump_first_derivative"].status == PASS


def test_verify_fast_config_passes(tmp_path):
    rep = run_verify(ExperimentConfig(family="random-poly", **FAST), tmp_path)
    assert rep.passed, rep.summary()
    names = [c.name for c in rep.checks]
    for expected in ("isotopy_symplectic", "k_exactness", "k_boundary", "hamiltonian_gradient", "section_residual",
                     "section_symplectic", "fixed_point_endpoint", "energy_drift", "closed_form_agreement",
                     "faa_di_bruno_oracle"):
        assert expected in names
    assert json.loads((tmp_path / "verify_report.json").read_text())["status"] == PASS


# -- command line ------------------------------------------------------------


def _write_cfg(tmp_path, **kw):
    path = tmp_path / "cfg.ini"
    path.write_text(ExperimentConfig(**{**FAST, **kw}).to_ini())
    return str(path)


def test_cli_demo(capsys):
    assert main(["demo"]) == 0
    assert "demo: PASS" in capsys.readouterr().out


def test_cli_quiet(capsys, tmp_path):
    assert main(["suspend", "--config", _write_cfg(tmp_path), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    assert capsys.readouterr().out == ""


def test_cli_config_errors(tmp_path, capsys):
    assert main(["verify", "--config", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[geometry]\nd = 9\n")
    assert main(["suspend", "--config", str(bad)]) == 2
    assert main(["suspend", "--tol", "1e-2"]) == 2
    assert main(["sweep", "--config", _write_cfg(tmp_path)]) == 2
    assert "[config/load]" in capsys.readouterr().err


def test_cli_failure_exit_code(tmp_path, capsys):
    code = main(["suspend", "--config", _write_cfg(tmp_path, eps=0.6), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "generating_isotopy" in capsys.readouterr().err


def test_cli_norms(tmp_path, capsys):
    assert main(["norms", "--config", _write_cfg(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("rho 1.0") and "constant" in out


def test_cli_sweep(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, sweep_eps=(0.1, 0.01), sweep_sections=False)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "sweep.csv").exists()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hamsuspend", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("suspend", "sweep", "verify", "norms", "demo"):
        assert cmd in proc.stdout
