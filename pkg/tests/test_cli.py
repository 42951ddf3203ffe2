import subprocess
import sys

import numpy as np
import pytest

from crossimpact import _io, calibration, cli, costratio, estimation, schedule

from .conftest import FIXTURES


def run(*argv):
    return cli.main([str(a) for a in argv])


def canonical(path):
    """CSV text with every number rounded to 12 significant digits."""
    lines = []
    for line in path.read_text().splitlines():
        cells = []
        for cell in line.split(","):
            try:
                cells.append(f"{float(cell):.12g}")
            except ValueError:
                cells.append(cell)
        lines.append(",".join(cells))
    return "\n".join(lines)


def test_schedule_daily_with_profile(tmp_path):
    code = run("schedule", "--input", FIXTURES / "liquidity_daily.csv", "--profile", FIXTURES / "profile.csv",
               "--target", FIXTURES / "target.csv", "--output", tmp_path, "--check")
    assert code == 0
    for name in ("optimal.csv", "separable.csv", "tilting.csv", "summary.txt"):
        assert (tmp_path / name).exists()
    assert (tmp_path / "optimal.csv").read_text().splitlines()[0] == "period,AAA,BBB,CCC,DDD"
    summary = _io.read_key_values(tmp_path / "summary.txt")
    assert float(summary["cost_ratio"]) >= 1.0
    assert float(summary["cost_tilting"]) == pytest.approx(float(summary["cost_optimal"]), rel=1e-12)
    opt = schedule.read_schedule(tmp_path / "optimal.csv")
    np.testing.assert_allclose(opt.v.sum(axis=0), [1.0e6, -4.0e5, 2.5e5, 8.0e5], rtol=1e-13)


def test_schedule_intraday_matches_daily(tmp_path):
    assert run("schedule", "--input", FIXTURES / "liquidity_intraday.csv", "--target", FIXTURES / "target.csv",
               "--output", tmp_path / "a", "--check") == 0
    assert run("schedule", "--input", FIXTURES / "liquidity_daily.csv", "--profile", FIXTURES / "profile.csv",
               "--target", FIXTURES / "target.csv", "--output", tmp_path / "b") == 0
    a = schedule.read_schedule(tmp_path / "a" / "optimal.csv").v
    b = schedule.read_schedule(tmp_path / "b" / "optimal.csv").v
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-6)


def test_schedule_without_funds_is_vwap(tmp_path):
    assert run("schedule", "--input", FIXTURES / "liquidity_no_funds.csv", "--profile", FIXTURES / "profile.csv",
               "--target", FIXTURES / "target.csv", "--output", tmp_path, "--check") == 0
    assert canonical(tmp_path / "optimal.csv") == canonical(tmp_path / "separable.csv")
    summary = _io.read_key_values(tmp_path / "summary.txt")
    assert float(summary["cost_ratio"]) == pytest.approx(1.0, abs=1e-12)


def test_schedule_daily_needs_profile(tmp_path, capsys):
    code = run("schedule", "--input", FIXTURES / "liquidity_daily.csv", "--target", FIXTURES / "target.csv",
               "--output", tmp_path)
    assert code == cli.EXIT_USAGE
    assert "--profile" in capsys.readouterr().err


def test_malformed_target_names_row(tmp_path, capsys):
    bad = tmp_path / "target.csv"
    bad.write_text("asset,x0\nAAA,1\nBBB,oops\nCCC,1\nDDD,1\n")
    code = run("schedule", "--input", FIXTURES / "liquidity_intraday.csv", "--target", bad, "--output", tmp_path / "o")
    assert code == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert "line 3" in err and "target.csv" in err


def test_malformed_liquidity_names_row(tmp_path, capsys):
    bad = tmp_path / "liq.csv"
    lines = (FIXTURES / "liquidity_daily.csv").read_text().splitlines()
    lines[2] = "BBB,8000000"
    bad.write_text("\n".join(lines) + "\n")
    code = run("analyze", "--input", bad, "--profile", FIXTURES / "profile.csv", "--output", tmp_path / "o")
    assert code == cli.EXIT_USAGE
    assert "line 3" in capsys.readouterr().err


def test_analyze(tmp_path):
    assert run("analyze", "--input", FIXTURES / "liquidity_daily.csv", "--profile", FIXTURES / "profile.csv",
               "--target", FIXTURES / "target.csv", "--output", tmp_path, "--check") == 0
    report = costratio.read_report(tmp_path / "report.txt")
    assert report.upsilon >= 1.0
    extra = _io.read_key_values(tmp_path / "report.txt")
    curve = costratio.read_curve(tmp_path / "sweep.csv")
    assert (tmp_path / "sweep.csv").read_text().splitlines()[0] == "eta1,upsilon_market,upsilon_orth"
    tp = float(extra["turning_point_eta1"])
    assert tp == pytest.approx(0.3 / 0.7, rel=1e-15)
    assert dict(curve)[tp] == pytest.approx(1.0, abs=1e-10)


def test_analyze_grid_from_flag(tmp_path):
    assert run("analyze", "--input", FIXTURES / "liquidity_daily.csv", "--profile", FIXTURES / "profile.csv",
               "--output", tmp_path, "--eta-grid", "0.5,2") == 0
    etas = [e for e, _ in costratio.read_curve(tmp_path / "sweep.csv")]
    assert etas == sorted([0.5, 2.0, 0.3 / 0.7])


@pytest.mark.parametrize("grid", ["", "1,abc"])
def test_bad_eta_grid_is_usage_error(tmp_path, grid, capsys):
    code = run("analyze", "--input", FIXTURES / "liquidity_daily.csv", "--profile", FIXTURES / "profile.csv",
               "--output", tmp_path, "--eta-grid", grid)
    assert code == cli.EXIT_USAGE
    assert "grid" in capsys.readouterr().err


def test_negative_eta_grid_rejected(tmp_path):
    code = run("analyze", "--input", FIXTURES / "liquidity_daily.csv", "--profile", FIXTURES / "profile.csv",
               "--output", tmp_path, "--eta-grid=-1,2")
    assert code == cli.EXIT_USAGE


def test_check_failure_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(costratio, "direct_cost_ratio", lambda *a, **k: 2.0)
    code = run("analyze", "--input", FIXTURES / "liquidity_daily.csv", "--profile", FIXTURES / "profile.csv",
               "--output", tmp_path, "--check")
    assert code == cli.EXIT_CHECK
    assert "check failed" in capsys.readouterr().err


def test_model_error_exit_code(tmp_path):
    prof = tmp_path / "m.csv"
    calibration.write_profiles(prof, calibration.MarketProfiles([0.5, 0.5], [0.0, 0.0]))
    assert run("calibrate", "--input", prof, "--output", tmp_path / "o") == cli.EXIT_MODEL


def test_calibrate_from_profiles(tmp_path):
    prof = tmp_path / "m.csv"
    calibration.write_profiles(prof, calibration.forward_profiles(schedule.read_profile(FIXTURES / "profile.csv")))
    assert run("calibrate", "--input", prof, "--output", tmp_path / "o", "--check") == 0
    out = schedule.read_profile(tmp_path / "o" / "profile.csv")
    assert out.theta == pytest.approx(0.3, abs=1e-8)
    assert not (tmp_path / "o" / "profiles.csv").exists()


def test_simulate_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("simulate", "--params", FIXTURES / "orderflow.txt", "--days", 40, "--seed", 7,
                   "--output", tmp_path / name, "--check") == 0
    assert (tmp_path / "a" / "panel.csv").read_bytes() == (tmp_path / "b" / "panel.csv").read_bytes()
    assert run("simulate", "--params", FIXTURES / "orderflow.txt", "--days", 40, "--seed", 8,
               "--output", tmp_path / "c") == 0
    assert (tmp_path / "a" / "panel.csv").read_bytes() != (tmp_path / "c" / "panel.csv").read_bytes()


def test_simulate_then_calibrate(tmp_path):
    assert run("simulate", "--params", FIXTURES / "orderflow.txt", "--days", 20000, "--seed", 3,
               "--output", tmp_path / "sim") == 0
    assert run("calibrate", "--input", tmp_path / "sim" / "panel.csv", "--output", tmp_path / "cal", "--check") == 0
    assert (tmp_path / "cal" / "profiles.csv").read_text().startswith("period,avg_vol_alloc,avg_correl\n")
    theta = float(_io.read_key_values(tmp_path / "cal" / "calibration.txt")["theta"])
    assert theta == pytest.approx(0.3, abs=0.03)


def test_simulate_then_estimate(tmp_path):
    assert run("simulate", "--kind", "records", "--params", FIXTURES / "coefficients.txt", "--n-records", 400,
               "--noise-scale", 0.05, "--seed", 2, "--output", tmp_path / "recs", "--check") == 0
    assert run("estimate", "--input", tmp_path / "recs", "--output", tmp_path / "fit", "--check") == 0
    coef = estimation.read_coefficients(tmp_path / "fit" / "coefficients.txt")
    assert coef.gamma_id == pytest.approx(0.8, rel=0.02)
    assert coef.gamma_f[0] == pytest.approx(1.5, rel=0.02)
    assert _io.read_key_values(tmp_path / "fit" / "coefficients.txt")["converged"] == "1"


def test_estimate_without_funds(tmp_path):
    assert run("simulate", "--kind", "records", "--params", FIXTURES / "coefficients_no_funds.txt",
               "--n-records", 200, "--seed", 4, "--output", tmp_path / "recs") == 0
    assert run("estimate", "--input", tmp_path / "recs", "--output", tmp_path / "fit", "--check") == 0


def test_config_precedence(tmp_path):
    cfg = tmp_path / "opts.txt"
    cfg.write_text("days = 6\nseed = 11\n")
    assert run("simulate", "--params", FIXTURES / "orderflow.txt", "--config", cfg, "--output", tmp_path / "a") == 0
    assert calibration.read_panel(tmp_path / "a" / "panel.csv").dvol.shape[0] == 6
    assert run("simulate", "--params", FIXTURES / "orderflow.txt", "--config", cfg, "--days", 3,
               "--output", tmp_path / "b") == 0
    b = calibration.read_panel(tmp_path / "b" / "panel.csv").dvol
    assert b.shape[0] == 3
    assert run("simulate", "--params", FIXTURES / "orderflow.txt", "--days", 3, "--seed", 11,
               "--output", tmp_path / "c") == 0
    np.testing.assert_array_equal(calibration.read_panel(tmp_path / "c" / "panel.csv").dvol, b)
    assert run("simulate", "--params", FIXTURES / "orderflow.txt", "--days", 3, "--output", tmp_path / "d") == 0
    assert not np.array_equal(calibration.read_panel(tmp_path / "d" / "panel.csv").dvol, b)


def test_bad_config_value(tmp_path):
    cfg = tmp_path / "opts.txt"
    cfg.write_text("days = many\n")
    assert run("simulate", "--params", FIXTURES / "orderflow.txt", "--config", cfg,
               "--output", tmp_path / "a") == cli.EXIT_USAGE


def test_missing_input_file(tmp_path):
    assert run("calibrate", "--input", tmp_path / "nope.csv", "--output", tmp_path) == cli.EXIT_USAGE


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "crossimpact.cli", "calibrate", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "--input" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "crossimpact.cli", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2
