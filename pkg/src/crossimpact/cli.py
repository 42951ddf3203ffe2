"""Command-line front end: ``crossimpact {schedule,analyze,calibrate,simulate,estimate}``.

Numeric options resolve as command-line flag, then ``--config`` file
(``key = value`` lines, keys spelled like the long flag with ``_`` for ``-``),
then built-in default.  Every command writes into ``--output`` (a directory).

Exit codes: 0 success, 2 usage or input error, 3 model error, 4 ``--check`` failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import _io, calibration, costratio, estimation, impact, orderflow, schedule
from .errors import Infeasible, ModelError

log = logging.getLogger("crossimpact")

EXIT_USAGE = 2
EXIT_MODEL = 3
EXIT_CHECK = 4

DEFAULTS = {
    "seed": 0,
    "days": 1000,
    "n_records": 2000,
    "noise_scale": 0.1,
    "n_assets": 5,
    "eta_grid": "0,0.05,0.1,0.25,0.5,1,2,5,10,100,1000",
    "gtol": 1e-10,
    "max_iter": 500,
    "check_tol": 1e-6,
}


class UsageError(Exception):
    pass


class CheckFailure(Exception):
    pass


def _resolve(args, config: dict, key: str, cast):
    value = getattr(args, key, None)
    if value is None and key in config:
        try:
            value = cast(config[key])
        except ValueError:
            raise UsageError(f"config key {key!r}: cannot parse {config[key]!r}") from None
    if value is None:
        value = DEFAULTS.get(key)
    return cast(value) if value is not None else None


def _config(args) -> dict:
    if args.config is None:
        return {}
    if not Path(args.config).exists():
        raise UsageError(f"config file {args.config} not found")
    return _io.read_key_values(args.config)


def _require(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} {path} not found")
    return path


def _outdir(args) -> Path:
    if args.output is None:
        raise UsageError("--output is required")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_grid(text: str) -> list[float]:
    try:
        grid = _io.parse_float_list(text)
    except ValueError:
        raise UsageError(f"cannot parse eta grid {text!r}") from None
    if not grid:
        raise UsageError("eta grid is empty")
    if any(not math.isfinite(e) or e < 0 for e in grid):
        raise UsageError(f"eta grid entries must be finite and non-negative: {text!r}")
    return grid


def _expect(ok: bool, message: str) -> None:
    if not ok:
        raise CheckFailure(message)
    log.info("check passed: %s", message)


def _cost_value(c) -> float:
    return math.nan if isinstance(c, Infeasible) else float(c)


# ------------------------------------------------------------------ schedule


def cmd_schedule(args) -> int:
    cfg = _config(args)
    tol = _resolve(args, cfg, "check_tol", float)
    model = impact.read_liquidity(_require(args.input, "--input"))
    profile = schedule.read_profile(_require(args.profile, "--profile")) if args.profile else None
    if isinstance(model, impact.LiquidityModel):
        if profile is None:
            raise UsageError("a daily liquidity file needs --profile to define the intraday split")
        daily = model
        liq = impact.IntradayLiquidity.from_profile(daily, profile.alpha, profile.beta)
    else:
        liq = model
        daily = liq.daily()
    x0 = schedule.read_target(_require(args.target, "--target"), liq.assets)
    out = _outdir(args)

    opt = schedule.optimal_schedule(liq, x0)
    # without funds the only volume is single-stock volume, so VWAP follows psi_id
    if profile is not None and liq.n_funds > 0:
        sep = schedule.separable_vwap_schedule(profile.vol_alloc(), x0, liq.assets)
    else:
        sep = schedule.separable_vwap_schedule(schedule.total_liquidity_vol_alloc(liq), x0, liq.assets)
    schedule.write_schedule(out / "optimal.csv", opt)
    schedule.write_schedule(out / "separable.csv", sep)
    summary = {"cost_optimal": _cost_value(impact.total_cost(liq, opt)),
               "cost_separable": _cost_value(impact.total_cost(liq, sep))}
    if profile is not None:
        tilt = schedule.tilting_schedule(daily, profile, x0)
        schedule.write_schedule(out / "tilting.csv", tilt)
        summary["cost_tilting"] = _cost_value(impact.total_cost(liq, tilt))
    c_opt, c_sep = summary["cost_optimal"], summary["cost_separable"]
    summary["cost_ratio"] = c_sep / c_opt if c_opt > 0 else math.nan
    _io.write_key_values(out / "summary.txt", summary)

    if args.check:
        back = schedule.read_schedule(out / "optimal.csv")
        _expect(np.array_equal(back.v, opt.v), "optimal schedule CSV re-parses losslessly")
        for t in range(liq.periods):
            m = liq.period(t)
            G = impact.build_impact_matrix(m).dense()
            if np.all(m.psi_id > 0):
                dense = np.linalg.inv(m.total_liquidity())
                gap = np.linalg.norm(G - dense) / np.linalg.norm(dense)
                _expect(gap <= 1e-9, f"period {t + 1}: Woodbury impact matrix matches dense inverse ({gap:.2e})")
        if np.all(liq.psi_id > 0):
            lam = schedule.kkt_multipliers(liq, opt)
            spread = float(np.max(np.abs(lam - lam.mean(axis=0))))
            scale = max(float(np.max(np.abs(lam))), 1e-300)
            _expect(spread <= 1e-8 * scale, f"KKT multipliers constant across periods ({spread:.2e})")
            qp = schedule.qp_oracle(liq, x0)
            scale = max(float(np.max(np.abs(x0))), 1.0)
            gap = float(np.max(np.abs(qp.schedule.v - opt.v)))
            _expect(gap <= tol * scale, f"closed form matches QP oracle ({gap:.2e})")
        if profile is not None:
            gap = float(np.max(np.abs(tilt.v - opt.v)))
            _expect(gap <= 1e-9 * max(float(np.max(np.abs(x0))), 1.0), f"tilting form matches optimal ({gap:.2e})")
    return 0


# ------------------------------------------------------------------ analyze


def cmd_analyze(args) -> int:
    cfg = _config(args)
    grid = _parse_grid(_resolve(args, cfg, "eta_grid", str))
    daily = impact.read_liquidity_model(_require(args.input, "--input"))
    profile = schedule.read_profile(_require(args.profile, "--profile"))
    x0 = schedule.read_target(args.target, daily.assets) if args.target else daily.W[:, 0].copy()
    out = _outdir(args)

    report = costratio.cost_ratio(costratio.CostRatioInputs(daily, profile, x0))
    ext = costratio.cost_ratio_extremes(daily, profile)
    extra = {"upsilon_market": ext.upsilon_market, "upsilon_orth": ext.upsilon_orth,
             "which_is_max": ext.which_is_max, "delta_sign": int(np.sign(ext.delta))}
    bound = costratio.theta_bound_summary(profile)
    extra["bound_infinite_eta1"] = bound if isinstance(bound, float) else "unbounded"
    if profile.theta < 1:
        tp = costratio.turning_point(profile.theta)
        extra["turning_point_eta1"] = tp
        grid = sorted(set(grid) | {tp})
        extra["delta_threshold_eta1"] = costratio.delta_threshold_eta(profile)
    extra["delta_threshold_theta"] = costratio.delta_threshold_theta(profile, report.eta1)
    costratio.write_report(out / "report.txt", report, extra)
    curve = costratio.market_ratio_curve(daily, profile, grid)
    costratio.write_curve(out / "sweep.csv", curve, ext.upsilon_orth)

    if args.check:
        direct = costratio.direct_cost_ratio(daily, profile, x0)
        gap = abs(direct - report.upsilon) / direct
        _expect(gap <= 1e-8, f"closed-form ratio matches schedule-cost ratio ({gap:.2e})")
        for e, u in curve:
            m = costratio.rescale_to_eta1(daily, e) if e > 0 else None
            if m is None:
                continue
            d = costratio.direct_cost_ratio(m, profile, m.W[:, 0])
            _expect(abs(d - u) <= 1e-8 * d, f"sweep point eta1={e:g} matches direct ratio")
        if profile.theta < 1:
            u_tp = costratio.market_ratio(profile, costratio.turning_point(profile.theta))
            _expect(abs(u_tp - 1) <= 1e-9, f"ratio at turning point equals 1 ({u_tp - 1:.2e})")
        expected = "market" if ext.upsilon_market > ext.upsilon_orth else "orth" if ext.upsilon_market < ext.upsilon_orth else "equal"
        _expect(ext.which_is_max == expected or abs(ext.upsilon_market - ext.upsilon_orth) < 1e-12,
                "sign of delta matches the ordering of the extremes")
        back = costratio.read_curve(out / "sweep.csv")
        _expect(back == curve, "sweep CSV re-parses losslessly")
    return 0


# ------------------------------------------------------------------ calibrate


def cmd_calibrate(args) -> int:
    src = _require(args.input, "--input")
    out = _outdir(args)
    header, _ = _io.read_csv(src)
    if "dvol" in header:
        panel = calibration.read_panel(src)
        stats = calibration.compute_profiles(panel)
        observed = stats.profiles
        calibration.write_profiles(out / "profiles.csv", observed)
        excluded = int(stats.excluded_pairs.sum())
    else:
        observed = calibration.read_profiles(src)
        excluded = 0
    result = calibration.calibrate(observed)
    schedule.write_profile(out / "profile.csv", result.profile)
    _io.write_key_values(out / "calibration.txt", {
        "theta": result.profile.theta,
        "residual": result.residual,
        "inconsistent": int(result.inconsistent),
        "clipped_correlations": result.clipped,
        "excluded_pairs": excluded,
    })
    if args.check:
        fwd = calibration.forward_profiles(result.profile)
        target = np.clip(observed.avg_correl, 0, None)
        gv = float(np.max(np.abs(fwd.avg_vol_alloc - observed.avg_vol_alloc)))
        gc = float(np.max(np.abs(fwd.avg_correl - target)))
        bound = 1e-8 + 10 * math.sqrt(result.residual)
        _expect(max(gv, gc) <= bound, f"forward map of the calibrated profile reproduces the inputs ({max(gv, gc):.2e})")
        back = schedule.read_profile(out / "profile.csv")
        _expect(back.theta == result.profile.theta and np.array_equal(back.alpha, result.profile.alpha)
                and np.array_equal(back.beta, result.profile.beta), "profile CSV re-parses losslessly")
    return 0


# ------------------------------------------------------------------ simulate


def cmd_simulate(args) -> int:
    cfg = _config(args)
    seed = _resolve(args, cfg, "seed", int)
    out = _outdir(args)
    params_path = _require(args.params, "--params")
    if args.kind == "panel":
        days = _resolve(args, cfg, "days", int)
        params = orderflow.read_params(params_path)
        panel = orderflow.simulate_panel(params, days, seed)
        calibration.write_panel(out / "panel.csv", panel)
        if args.check:
            back = calibration.read_panel(out / "panel.csv")
            _expect(np.array_equal(back.dvol, panel.dvol), "panel CSV re-parses losslessly")
            again = orderflow.simulate_day(params, orderflow.day_generator(seed, days - 1))
            _expect(np.array_equal(again, panel.dvol[-1]), "simulation is reproducible from the seed")
    else:
        n_records = _resolve(args, cfg, "n_records", int)
        noise = _resolve(args, cfg, "noise_scale", float)
        n_assets = _resolve(args, cfg, "n_assets", int)
        coef = estimation.read_coefficients(params_path)
        records = estimation.simulate_records(coef, n_records, noise, seed, n_assets=n_assets)
        estimation.write_records(out, records)
        if args.check:
            for rec in records:
                a = estimation.predict_shortfall(rec, coef)
                b = estimation.predict_shortfall_dense(rec, coef)
                if np.max(np.abs(a - b)) > 1e-10 * max(float(np.max(np.abs(b))), 1e-300):
                    raise CheckFailure("Woodbury prediction disagrees with dense solve")
            log.info("check passed: Woodbury predictions match dense solves")
            back = estimation.read_records(out)
            _expect(all(np.array_equal(x.r_bar, y.r_bar) and np.array_equal(x.sigma_noise, y.sigma_noise)
                        for x, y in zip(records, back)), "records re-parse losslessly")
    return 0


# ------------------------------------------------------------------ estimate


def cmd_estimate(args) -> int:
    cfg = _config(args)
    records = estimation.read_records(_require(args.input, "--input"))
    k = records[0].n_funds
    if args.init:
        init = estimation.read_coefficients(_require(args.init, "--init"))
    else:
        init = estimation.ImpactCoefficients(1.0, np.ones(k))
    opts = estimation.FitOptions(gtol=_resolve(args, cfg, "gtol", float), max_iter=_resolve(args, cfg, "max_iter", int))
    coef, diag = estimation.fit_mle(records, init, opts)
    out = _outdir(args)
    estimation.write_coefficients(out / "coefficients.txt", coef, {
        "converged": int(diag.converged),
        "iterations": diag.iterations,
        "gradient_norm": diag.gradient_norm,
        "log_likelihood": diag.log_likelihood,
        "gradient_check": diag.gradient_check,
    })
    if args.check:
        _expect(diag.gradient_check <= 1e-5, f"complex-step gradient matches central differences ({diag.gradient_check:.2e})")
        rec = records[0]
        a = estimation.predict_shortfall(rec, coef)
        b = estimation.predict_shortfall_dense(rec, coef)
        _expect(np.max(np.abs(a - b)) <= 1e-10 * max(float(np.max(np.abs(b))), 1e-300), "Woodbury prediction matches dense solve")
        if k == 0:
            g = estimation.closed_form_gamma_id(records)
            _expect(abs(coef.gamma_id - g) <= 1e-6 * g, "fit matches the closed-form estimate")
        back = estimation.read_coefficients(out / "coefficients.txt")
        _expect(back.gamma_id == coef.gamma_id and np.array_equal(back.gamma_f, coef.gamma_f),
                "coefficients re-parse losslessly")
    if not diag.converged:
        log.error("optimizer did not converge: %s", diag.message)
        return EXIT_MODEL
    return 0


# ------------------------------------------------------------------ entry point


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="primary input file or directory")
    p.add_argument("--output", help="output directory (created if missing)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="key = value file with option defaults")
    p.add_argument("--check", action="store_true", help="cross-check against reference computations")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossimpact", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="optimal, tilting and separable schedules with costs")
    _common(p)
    p.add_argument("--target", help="CSV with columns asset,x0")
    p.add_argument("--profile", help="CSV with columns period,alpha,beta,theta")
    p.add_argument("--check-tol", type=float, default=None)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("analyze", help="cost ratio of separable vs optimal execution, with an eta1 sweep")
    _common(p)
    p.add_argument("--target", help="CSV with columns asset,x0 (default: the fund weights)")
    p.add_argument("--profile", help="CSV with columns period,alpha,beta,theta")
    p.add_argument("--eta-grid", default=None, help="comma-separated eta1 values")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("calibrate", help="fit theta, alpha, beta to a volume panel or to average profiles")
    _common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="synthetic volume panels or transaction records")
    _common(p)
    p.add_argument("--kind", choices=["panel", "records"], default="panel")
    p.add_argument("--params", help="order-flow parameters (panel) or true coefficients (records)")
    p.add_argument("--days", type=int, default=None)
    p.add_argument("--n-records", type=int, default=None)
    p.add_argument("--noise-scale", type=float, default=None)
    p.add_argument("--n-assets", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="maximum-likelihood impact coefficients from a record directory")
    _common(p)
    p.add_argument("--init", help="starting coefficients (default: all ones)")
    p.add_argument("--gtol", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.set_defaults(func=cmd_estimate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, _io.ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
