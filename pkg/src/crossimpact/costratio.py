"""Closed-form cost of separable (VWAP) execution relative to the coupled optimum.

Single-fund setting: daily liquidity ``Psi_id``, fund liquidity ``psi_f`` along
``w``, intraday intensities ``alpha_t`` (single-stock) and ``beta_t`` (fund), and
index-fund volume share ``theta``.  The separable schedule trades
``(alpha_t (1 - theta) + beta_t theta) x0`` per period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.optimize import brentq

from . import _io
from .errors import DimensionError, Infeasible, ModelError
from .impact import IntradayLiquidity, LiquidityModel, total_cost
from .schedule import MixtureProfile, optimal_schedule, separable_vwap_schedule

ORTHOGONAL_TOLERANCE = 1e-10


@dataclass(frozen=True)
class CostRatioInputs:
    daily: LiquidityModel
    profile: MixtureProfile
    x0: np.ndarray

    def __post_init__(self):
        if self.daily.n_funds != 1:
            raise ModelError(f"cost ratio needs exactly one fund, model has {self.daily.n_funds}")
        if self.daily.psi_f[0] <= 0:
            raise ModelError("fund liquidity must be strictly positive")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.daily.n_assets,):
            raise DimensionError(f"x0 has shape {x0.shape}, expected ({self.daily.n_assets},)")
        object.__setattr__(self, "x0", x0)


@dataclass(frozen=True)
class CostRatioReport:
    upsilon: float
    eta1: float
    gamma: np.ndarray
    delta: float
    base_term: float
    alignment: float  # the x0-dependent factor multiplying delta

    def as_dict(self) -> dict:
        return {
            "upsilon": self.upsilon,
            "eta1": self.eta1,
            "delta": self.delta,
            "base_term": self.base_term,
            "alignment": self.alignment,
            "gamma": [float(g) for g in self.gamma],
        }


def _require_alpha(profile: MixtureProfile) -> None:
    if np.any(profile.alpha <= 0):
        raise ModelError("the cost ratio divides by alpha_t; every alpha_t must be positive")


def eta1(daily: LiquidityModel) -> float:
    """Fund-to-single-stock liquidity ratio along the fund, ``psi_f w^T Psi_id^{-1} w``."""
    w = daily.W[:, 0]
    return float(daily.psi_f[0] * np.sum(w * w / daily.psi_id))


def base_term(profile: MixtureProfile) -> float:
    """``1 + theta^2 (sum beta_t^2 / alpha_t - 1)``: the ratio for portfolios orthogonal to the fund."""
    _require_alpha(profile)
    return 1.0 + profile.theta**2 * (float(np.sum(profile.beta**2 / profile.alpha)) - 1.0)


def delta_term(profile: MixtureProfile, eta: float, theta: float | None = None) -> float:
    """Signed intraday-variation term; its sign decides which extreme portfolio is worst."""
    _require_alpha(profile)
    theta = profile.theta if theta is None else theta
    a = profile.alpha
    g = profile.beta / a
    return float(np.sum(a * (1 - theta * (1 - g)) ** 2 * (1 - g) / (1 + eta * g)))


def cost_ratio(inputs: CostRatioInputs) -> CostRatioReport:
    """Exact ``cost(separable) / cost(optimal)`` for a single-fund model."""
    daily, profile, x0 = inputs.daily, inputs.profile, inputs.x0
    _require_alpha(profile)
    if not np.any(x0):
        raise ModelError("cost ratio is undefined for x0 = 0")
    w = daily.W[:, 0]
    psi_f = float(daily.psi_f[0])
    e1 = eta1(daily)
    d = delta_term(profile, e1)
    base = base_term(profile)
    quad = float(np.sum(x0 * x0 / daily.psi_id))
    proj = float(np.sum(w * x0 / daily.psi_id))
    scale = math.sqrt(quad * float(np.sum(w * w / daily.psi_id)))
    if abs(proj) <= ORTHOGONAL_TOLERANCE * scale:
        alignment = 0.0
    else:
        alignment = 1.0 / (quad / proj**2 * (1 + e1) / psi_f - 1.0)
    return CostRatioReport(
        upsilon=base + d * alignment,
        eta1=e1,
        gamma=profile.beta / profile.alpha,
        delta=d,
        base_term=base,
        alignment=alignment,
    )


def direct_cost_ratio(daily: LiquidityModel, profile: MixtureProfile, x0) -> float:
    """The same ratio computed by building both schedules and pricing them."""
    liq = IntradayLiquidity.from_profile(daily, profile.alpha, profile.beta)
    x0 = np.asarray(x0, dtype=float)
    sep = separable_vwap_schedule(profile.vol_alloc(), x0)
    opt = optimal_schedule(liq, x0)
    c_sep = total_cost(liq, sep)
    c_opt = total_cost(liq, opt)
    if isinstance(c_sep, Infeasible) or isinstance(c_opt, Infeasible):
        raise ModelError("a schedule has unbounded cost; ratio undefined")
    return c_sep / c_opt


@dataclass(frozen=True)
class Extremes:
    upsilon_market: float
    upsilon_orth: float
    which_is_max: Literal["market", "orth", "equal"]
    delta: float


def cost_ratio_extremes(daily: LiquidityModel, profile: MixtureProfile) -> Extremes:
    """Ratios at ``x0 = w`` and at any ``x0`` with ``w^T Psi_id^{-1} x0 = 0``; these bound all others."""
    CostRatioInputs(daily, profile, np.zeros(daily.n_assets))
    e1 = eta1(daily)
    d = delta_term(profile, e1)
    base = base_term(profile)
    which = "market" if d > 0 else "orth" if d < 0 else "equal"
    return Extremes(base + e1 * d, base, which, d)


def market_ratio(profile: MixtureProfile, eta: float) -> float:
    """Ratio when trading the fund portfolio itself, as a function of ``eta1``."""
    return base_term(profile) + eta * delta_term(profile, eta)


def market_ratio_curve(daily: LiquidityModel, profile: MixtureProfile, eta1_grid) -> list[tuple[float, float]]:
    """``(eta1, upsilon_market)`` along a grid, varying fund liquidity with everything else fixed.

    ``eta1`` is moved by rescaling the fund's liquidity; the curve falls until
    ``theta / (1 - theta)``, where it equals 1, and rises afterwards.
    """
    CostRatioInputs(daily, profile, np.zeros(daily.n_assets))
    if profile.theta >= 1.0:
        raise ModelError("theta = 1 leaves the turning point theta/(1-theta) undefined")
    grid = [float(e) for e in eta1_grid]
    if not grid:
        raise ValueError("eta1 grid is empty")
    if any(e < 0 or not math.isfinite(e) for e in grid):
        raise ValueError("eta1 grid entries must be finite and non-negative")
    return [(e, market_ratio(profile, e)) for e in grid]


def rescale_to_eta1(daily: LiquidityModel, eta: float) -> LiquidityModel:
    """Model with fund liquidity set so that ``eta1(model) == eta``."""
    w = daily.W[:, 0]
    return LiquidityModel(daily.psi_id, [eta / float(np.sum(w * w / daily.psi_id))], daily.W, daily.assets)


def turning_point(theta: float) -> float:
    if theta >= 1.0:
        raise ModelError("theta = 1 leaves the turning point undefined")
    return theta / (1.0 - theta)


@dataclass(frozen=True)
class SingleStockRatio:
    upsilon: float
    eta1_i: float
    argmax_asset: int


def single_stock_ratio(daily: LiquidityModel, profile: MixtureProfile, i: int) -> SingleStockRatio:
    """Ratio for an order in asset ``i`` alone, plus the asset with the largest such ratio."""
    CostRatioInputs(daily, profile, np.zeros(daily.n_assets))
    n = daily.n_assets
    if not 0 <= i < n:
        raise IndexError(f"asset index {i} out of range for {n} assets")
    w = daily.W[:, 0]
    e1 = eta1(daily)
    d = delta_term(profile, e1)
    base = base_term(profile)
    eta_i = w**2 * daily.psi_f[0] / daily.psi_id
    ups = base + d * eta_i[i] / (1 + e1 - eta_i[i])
    key = w**2 / daily.psi_id
    argmax = int(np.argmax(key)) if d >= 0 else int(np.argmin(key))
    return SingleStockRatio(float(ups), float(eta_i[i]), argmax)


def theta_bound_summary(profile: MixtureProfile) -> float | Infeasible:
    """Worst-case ratio as ``eta1 -> inf``: ``1 + (1 - theta)^2 (sum alpha_t^2 / beta_t - 1)``."""
    if np.any(profile.beta <= 0):
        return Infeasible("beta_t = 0 in some period makes the large-eta1 limit unbounded")
    return 1.0 + (1 - profile.theta) ** 2 * (float(np.sum(profile.alpha**2 / profile.beta)) - 1.0)


def delta_threshold_theta(profile: MixtureProfile, eta: float) -> float:
    """Smallest ``theta*`` with ``Delta >= 0`` below it and ``<= 0`` above it, by root finding."""
    lo, hi = delta_term(profile, eta, 0.0), delta_term(profile, eta, 1.0)
    if lo == 0.0:
        return 0.0
    if hi == 0.0 or lo * hi > 0:
        return 1.0
    return float(brentq(lambda th: delta_term(profile, eta, th), 0.0, 1.0, xtol=1e-14))


def delta_threshold_eta(profile: MixtureProfile, eta_max: float = 1e12) -> float:
    """``eta1*`` where Delta changes sign from negative to non-negative; ``inf`` if it never does."""
    if profile.theta >= 1.0:
        return math.inf
    lo = turning_point(profile.theta)
    if delta_term(profile, lo) >= 0:
        return lo
    if delta_term(profile, eta_max) < 0:
        return math.inf
    return float(brentq(lambda e: delta_term(profile, e), lo, eta_max, xtol=1e-12, rtol=1e-14))


def write_report(path, report: CostRatioReport, extra: dict | None = None) -> None:
    items = report.as_dict()
    if extra:
        items.update(extra)
    _io.write_key_values(path, items)


def read_report(path) -> CostRatioReport:
    kv = _io.read_key_values(path)
    return CostRatioReport(
        upsilon=float(kv["upsilon"]),
        eta1=float(kv["eta1"]),
        gamma=np.array(_io.parse_float_list(kv["gamma"])),
        delta=float(kv["delta"]),
        base_term=float(kv["base_term"]),
        alignment=float(kv["alignment"]),
    )


def write_curve(path, curve, upsilon_orth: float | None = None) -> None:
    header = ["eta1", "upsilon_market"] + (["upsilon_orth"] if upsilon_orth is not None else [])
    rows = [[e, u] + ([upsilon_orth] if upsilon_orth is not None else []) for e, u in curve]
    _io.write_csv(path, header, rows)


def read_curve(path) -> list[tuple[float, float]]:
    _, rows = _io.read_csv(path, required=["eta1", "upsilon_market"])
    return [
        (_io.parse_float(r["eta1"], path, ln, "eta1"), _io.parse_float(r["upsilon_market"], path, ln, "upsilon_market"))
        for ln, r in rows
    ]
