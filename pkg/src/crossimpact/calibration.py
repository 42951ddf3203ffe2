"""Intraday volume statistics and their inversion to a two-investor mixture profile.

``compute_profiles`` turns a day x period x asset panel of notional volume into
the average volume allocation and average pairwise volume correlation per
period.  ``forward_profiles`` maps a ``MixtureProfile`` to the same two
statistics, and ``calibrate`` inverts that map.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _io
from .errors import DimensionError, ModelError
from .schedule import MixtureProfile

log = logging.getLogger(__name__)

THETA_BRACKET = (1e-4, 1.0 - 1e-4)
THETA_TOL = 1e-10
RESIDUAL_THRESHOLD = 1e-6
VOL_ALLOC_TOLERANCE = 1e-9
MISSING = "NA"
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class VolumePanel:
    dvol: np.ndarray  # (days, periods, assets)
    days: tuple = ()
    periods: tuple = ()
    assets: tuple = ()

    def __post_init__(self):
        dvol = np.array(self.dvol, dtype=float)
        if dvol.ndim != 3:
            raise DimensionError(f"dvol must be days x periods x assets, got shape {dvol.shape}")
        if not np.all(np.isfinite(dvol)) or np.any(dvol < 0):
            raise ModelError("volumes must be finite and non-negative")
        D, T, N = dvol.shape
        labels = {}
        for name, size, default in (("days", D, range(1, D + 1)), ("periods", T, range(1, T + 1)),
                                    ("assets", N, (f"a{i}" for i in range(N)))):
            given = tuple(getattr(self, name)) or tuple(default)
            if len(given) != size:
                raise DimensionError(f"{len(given)} {name} labels for an axis of length {size}")
            labels[name] = given
        dvol.setflags(write=False)
        object.__setattr__(self, "dvol", dvol)
        for name, value in labels.items():
            object.__setattr__(self, name, value)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dvol.shape


@dataclass(frozen=True)
class MarketProfiles:
    """Average volume allocation and average pairwise correlation per period.

    ``avg_correl`` holds NaN where no asset pair had a defined correlation; use
    ``missing`` rather than testing for NaN directly.
    """

    avg_vol_alloc: np.ndarray
    avg_correl: np.ndarray

    def __post_init__(self):
        v = np.array(self.avg_vol_alloc, dtype=float).reshape(-1)
        c = np.array(self.avg_correl, dtype=float).reshape(-1)
        if v.shape != c.shape or v.size == 0:
            raise DimensionError("avg_vol_alloc and avg_correl must be non-empty and of equal length")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ModelError("avg_vol_alloc entries must be non-negative")
        if abs(v.sum() - 1.0) > VOL_ALLOC_TOLERANCE:
            raise ModelError(f"avg_vol_alloc sums to {v.sum()!r}, not 1")
        ok = ~np.isnan(c)
        if np.any(np.abs(c[ok]) > 1.0):
            raise ModelError("avg_correl entries must lie in [-1, 1]")
        v.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "avg_vol_alloc", v)
        object.__setattr__(self, "avg_correl", c)

    @property
    def periods(self) -> int:
        return self.avg_vol_alloc.size

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.avg_correl)


@dataclass(frozen=True)
class PanelStatistics:
    profiles: MarketProfiles
    vol_alloc: np.ndarray  # (assets, periods)
    correl: np.ndarray  # (periods, assets, assets), NaN where undefined
    defined: np.ndarray  # (periods, assets, assets) bool, off-diagonal pairs with a correlation
    excluded_pairs: np.ndarray  # (periods,) ordered pairs skipped for zero variance


def compute_profiles(panel: VolumePanel) -> PanelStatistics:
    """Per-asset volume allocation and per-pair Pearson correlation across days."""
    X = panel.dvol
    D, T, N = X.shape
    if D < 2:
        raise ModelError("need at least two days to estimate correlations")
    if N < 2:
        raise ModelError("need at least two assets for pairwise correlation")
    mean = X.mean(axis=0)  # (T, N)
    totals = mean.sum(axis=0)
    dead = np.flatnonzero(totals == 0)
    if dead.size:
        names = [panel.assets[i] for i in dead]
        raise ModelError(f"assets with zero volume in every period: {names}")
    vol_alloc = (mean / totals).T

    centered = X - mean
    cov = np.einsum("dti,dtj->tij", centered, centered)
    ss = np.einsum("tii->ti", cov).copy()
    scale = np.maximum(np.abs(mean), np.finfo(float).tiny)
    has_var = ss > (1e-12 * scale) ** 2 * D
    defined = has_var[:, :, None] & has_var[:, None, :]
    off = ~np.eye(N, dtype=bool)
    defined &= off[None, :, :]
    denom = np.sqrt(np.where(has_var, ss, 1.0))
    correl = np.where(defined, cov / (denom[:, :, None] * denom[:, None, :]), np.nan)
    correl = np.where(defined, np.clip(correl, -1.0, 1.0), np.nan)

    counts = defined.sum(axis=(1, 2))
    excluded = N * (N - 1) - counts
    avg = np.full(T, np.nan)
    for t in range(T):
        if counts[t]:
            avg[t] = math.fsum(correl[t][defined[t]]) / counts[t]
    if excluded.any():
        log.warning("excluded %d zero-variance ordered pairs from the average correlation", int(excluded.sum()))
    avg_alloc = vol_alloc.mean(axis=0)
    avg_alloc = avg_alloc / math.fsum(avg_alloc)
    return PanelStatistics(MarketProfiles(avg_alloc, avg), vol_alloc, correl, defined, excluded)


def forward_profiles(profile: MixtureProfile) -> MarketProfiles:
    """Volume and correlation profiles implied by a mixture profile."""
    th, a, b = profile.theta, profile.alpha, profile.beta
    vol = a * (1 - th) + b * th
    num = b * th**2
    den = a * (1 - th) ** 2 + num
    correl = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return MarketProfiles(vol, correl)


@dataclass(frozen=True)
class Calibration:
    profile: MixtureProfile
    residual: float
    inconsistent: bool
    clipped: int
    raw_alpha_sum: float = field(default=float("nan"))
    raw_beta_sum: float = field(default=float("nan"))


def invert_at(theta: float, vol: np.ndarray, correl: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-period ``(alpha_t, beta_t)`` that reproduce ``(vol, correl)`` exactly for a given theta."""
    k = correl * (1 - theta) ** 2 / ((1 - correl) * theta**2)
    alpha = vol / ((1 - theta) + k * theta)
    return alpha, k * alpha


def normalization_residual(theta: float, vol: np.ndarray, correl: np.ndarray) -> float:
    alpha, beta = invert_at(theta, vol, correl)
    return (math.fsum(alpha) - 1.0) ** 2 + (math.fsum(beta) - 1.0) ** 2


def golden_section(f, lo: float, hi: float, tol: float = THETA_TOL, max_iter: int = 500) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def calibrate(observed: MarketProfiles, grid_points: int = 400) -> Calibration:
    """Recover ``(theta, alpha, beta)`` from observed volume and correlation profiles.

    Theta minimizes the squared normalization errors of the inverted intensities
    (a coarse scan locates the basin, golden-section search refines it).
    Because the inversion reproduces the volume profile exactly, the two
    normalizations are equivalent and the residual vanishes whenever the root
    lies inside the search bracket.
    Negative correlations are clipped to zero and counted.
    """
    if observed.periods < 2:
        raise ModelError("calibration needs at least two periods")
    if observed.missing.any():
        raise ModelError(f"average correlation missing in periods {list(np.flatnonzero(observed.missing) + 1)}")
    vol = np.array(observed.avg_vol_alloc)
    correl = np.array(observed.avg_correl)
    if np.any(correl >= 1.0):
        raise ModelError("average correlation of 1 implies no single-stock flow; cannot invert")
    neg = correl < 0
    clipped = int(neg.sum())
    if clipped:
        log.warning("clipped %d negative average correlations to 0", clipped)
        correl = np.where(neg, 0.0, correl)
    if not np.any(correl > 0):
        raise ModelError("all average correlations are zero: no fund flow to identify beta from")

    f = lambda th: normalization_residual(th, vol, correl)  # noqa: E731
    lo, hi = THETA_BRACKET
    grid = np.linspace(lo, hi, grid_points)
    values = [f(th) for th in grid]
    j = int(np.argmin(values))
    a = grid[max(j - 1, 0)]
    b = grid[min(j + 1, grid_points - 1)]
    theta = golden_section(f, a, b)
    residual = f(theta)
    alpha, beta = invert_at(theta, vol, correl)
    sa, sb = math.fsum(alpha), math.fsum(beta)
    inconsistent = residual > RESIDUAL_THRESHOLD
    if inconsistent:
        log.warning("calibration residual %.3g exceeds %.1g; profiles are not model-consistent", residual, RESIDUAL_THRESHOLD)
    profile = MixtureProfile(theta, alpha / sa, beta / sb)
    return Calibration(profile, residual, inconsistent, clipped, sa, sb)


def write_panel(path, panel: VolumePanel) -> None:
    D, T, N = panel.shape
    rows = [
        [panel.days[d], panel.periods[t], panel.assets[i], float(panel.dvol[d, t, i])]
        for d in range(D)
        for t in range(T)
        for i in range(N)
    ]
    _io.write_csv(path, ["day", "period", "asset", "dvol"], rows)


def read_panel(path) -> VolumePanel:
    """Read ``day,period,asset,dvol``; every (day, period, asset) cell must appear exactly once."""
    _, rows = _io.read_csv(path, required=["day", "period", "asset", "dvol"])
    if not rows:
        raise _io.ParseError(path, None, "no data rows")
    days, periods, assets = {}, {}, {}
    cells = {}
    for line, r in rows:
        for key, seen in (("day", days), ("period", periods), ("asset", assets)):
            if r[key] == "":
                raise _io.ParseError(path, line, f"missing value in column {key!r}")
            seen.setdefault(r[key], len(seen))
        key = (r["day"], r["period"], r["asset"])
        if key in cells:
            raise _io.ParseError(path, line, f"duplicate cell {key}")
        value = _io.parse_float(r["dvol"], path, line, "dvol")
        if value < 0 or not math.isfinite(value):
            raise _io.ParseError(path, line, f"dvol must be finite and non-negative, got {value}")
        cells[key] = value
    shape = (len(days), len(periods), len(assets))
    if len(cells) != shape[0] * shape[1] * shape[2]:
        raise _io.ParseError(path, None, f"incomplete panel: {len(cells)} cells for a {shape} grid")
    dvol = np.empty(shape)
    for (d, t, i), value in cells.items():
        dvol[days[d], periods[t], assets[i]] = value
    return VolumePanel(dvol, tuple(days), tuple(periods), tuple(assets))


def write_profiles(path, profiles: MarketProfiles) -> None:
    rows = [
        [t + 1, float(v), MISSING if math.isnan(c) else float(c)]
        for t, (v, c) in enumerate(zip(profiles.avg_vol_alloc, profiles.avg_correl))
    ]
    _io.write_csv(path, ["period", "avg_vol_alloc", "avg_correl"], rows)


def read_profiles(path) -> MarketProfiles:
    _, rows = _io.read_csv(path, required=["period", "avg_vol_alloc", "avg_correl"])
    if not rows:
        raise _io.ParseError(path, None, "no periods")
    vol = [_io.parse_float(r["avg_vol_alloc"], path, ln, "avg_vol_alloc") for ln, r in rows]
    correl = [
        math.nan if r["avg_correl"] == MISSING else _io.parse_float(r["avg_correl"], path, ln, "avg_correl")
        for ln, r in rows
    ]
    try:
        return MarketProfiles(np.array(vol), np.array(correl))
    except ModelError as exc:
        raise _io.ParseError(path, None, str(exc)) from None
