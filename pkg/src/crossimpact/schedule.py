"""Intraday execution schedules under cross-impact.

The risk-neutral problem

    minimize  sum_t v_t^T G_t v_t / 2   subject to  sum_t v_t = x0

has the closed-form solution ``v_t = L_t (sum_s L_s)^{-1} x0`` where ``L_t`` is
the total liquidity of period ``t``.  This module evaluates it, its tilting
form under parametric intensity profiles, the separable VWAP baseline, and an
iterative QP solver used to cross-check all of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _io
from .errors import ConvergenceError, DimensionError, ModelError
from .impact import (
    DENSE_LIMIT,
    IntradayLiquidity,
    LiquidityModel,
    build_impact_matrix,
    low_rank_inverse_factors,
    total_cost,
)

PROFILE_TOLERANCE = 1e-12
VOL_ALLOC_TOLERANCE = 1e-9


def inventory_tolerance(x0: np.ndarray) -> float:
    return 1e-9 * max(1.0, float(np.max(np.abs(x0), initial=0.0)))


@dataclass(frozen=True)
class Schedule:
    """Shares traded per period; row ``t`` is ``v_t``.  Rows sum to ``x0``."""

    v: np.ndarray
    x0: np.ndarray
    assets: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        if v.ndim != 2 or v.shape[1] != x0.size:
            raise DimensionError(f"schedule shape {v.shape} does not match x0 of length {x0.size}")
        gap = np.max(np.abs(v.sum(axis=0) - x0), initial=0.0)
        if gap > inventory_tolerance(x0):
            raise ModelError(f"schedule rows sum to x0 only within {gap:.3e}")
        v.setflags(write=False)
        x0.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "x0", x0)
        if self.assets is not None:
            object.__setattr__(self, "assets", tuple(self.assets))

    @property
    def periods(self) -> int:
        return self.v.shape[0]


@dataclass(frozen=True)
class MixtureProfile:
    """Index-fund volume share ``theta`` and the two intraday intensity profiles.

    Entries of ``alpha`` and ``beta`` may be zero (an investor type absent in a
    period); operations that divide by them check for that themselves.
    """

    theta: float
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float).reshape(-1)
        beta = np.array(self.beta, dtype=float).reshape(-1)
        theta = float(self.theta)
        if alpha.shape != beta.shape or alpha.size == 0:
            raise DimensionError("alpha and beta must be non-empty and of equal length")
        if not 0.0 <= theta <= 1.0:
            raise ModelError(f"theta must lie in [0, 1], got {theta}")
        for name, prof in (("alpha", alpha), ("beta", beta)):
            if not np.all(np.isfinite(prof)) or np.any(prof < 0):
                raise ModelError(f"{name} must be non-negative")
            if abs(prof.sum() - 1.0) > PROFILE_TOLERANCE:
                raise ModelError(f"{name} sums to {prof.sum()!r}, not 1")
        alpha.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def periods(self) -> int:
        return self.alpha.size

    def vol_alloc(self) -> np.ndarray:
        """Market volume fraction per period, ``alpha_t (1 - theta) + beta_t theta``."""
        return self.alpha * (1 - self.theta) + self.beta * self.theta


def _check_x0(n: int, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise DimensionError(f"x0 has shape {x0.shape}, expected ({n},)")
    return x0


def _liquidity_apply(psi_id: np.ndarray, psi_f: np.ndarray, W: np.ndarray, lam: np.ndarray) -> np.ndarray:
    return psi_id * lam + W @ (psi_f * (W.T @ lam))


def _daily_solve(daily: LiquidityModel, x0: np.ndarray) -> np.ndarray:
    inv_diag, U, C = low_rank_inverse_factors(daily.psi_id, daily.W, daily.psi_f)
    return inv_diag * x0 - U @ (C @ (U.T @ x0))


def optimal_schedule(liq: IntradayLiquidity, x0) -> Schedule:
    """Unique cost-minimizing coupled schedule ``v_t = L_t (sum_s L_s)^{-1} x0``."""
    x0 = _check_x0(liq.n_assets, x0)
    if not np.any(x0):
        return Schedule(np.zeros((liq.periods, liq.n_assets)), x0, liq.assets)
    lam = _daily_solve(liq.daily(), x0)
    v = np.stack([_liquidity_apply(liq.psi_id[t], liq.psi_f[t], liq.W, lam) for t in range(liq.periods)])
    return Schedule(v, x0, liq.assets)


def kkt_multipliers(liq: IntradayLiquidity, schedule: Schedule) -> np.ndarray:
    """``G_t v_t`` per period; constant across t exactly when the schedule is optimal."""
    return np.stack([build_impact_matrix(liq.period(t)).matvec(schedule.v[t]) for t in range(liq.periods)])


def tilt_direction(daily: LiquidityModel, x0) -> np.ndarray:
    """``W W_hat^T x0`` with ``W_hat = Psi_id^{-1} W (Psi_f^{-1} + W^T Psi_id^{-1} W)^{-1}``."""
    x0 = _check_x0(daily.n_assets, x0)
    _, U, C = low_rank_inverse_factors(daily.psi_id, daily.W, daily.psi_f)
    W_active = daily.W[:, daily.psi_f != 0]
    W_hat = U @ C
    return W_active @ (W_hat.T @ x0)


def tilting_schedule(daily: LiquidityModel, profile: MixtureProfile, x0) -> Schedule:
    """Optimal schedule for ``Psi_id,t = alpha_t Psi_id``, ``Psi_f,t = beta_t Psi_f``.

    ``v_t = alpha_t x0 + (beta_t - alpha_t) W W_hat^T x0``: VWAP on the
    single-stock profile, tilted toward the fund directions when fund
    intensity exceeds single-stock intensity.
    """
    x0 = _check_x0(daily.n_assets, x0)
    tilt = tilt_direction(daily, x0)
    a, b = profile.alpha[:, None], profile.beta[:, None]
    v = a * x0 + (b - a) * tilt
    return Schedule(v, x0, daily.assets)


def separable_vwap_schedule(vol_alloc, x0, assets=None) -> Schedule:
    """Split each order independently: ``v_it = vol_alloc[t, i] * x0_i``."""
    vol_alloc = np.asarray(vol_alloc, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if vol_alloc.ndim == 1:
        vol_alloc = np.repeat(vol_alloc[:, None], x0.size, axis=1)
    if vol_alloc.ndim != 2 or vol_alloc.shape[1] != x0.size:
        raise DimensionError(f"vol_alloc shape {vol_alloc.shape} does not match x0 of length {x0.size}")
    if np.any(vol_alloc < 0):
        raise ModelError("volume fractions must be non-negative")
    sums = vol_alloc.sum(axis=0)
    if np.any(np.abs(sums - 1) > VOL_ALLOC_TOLERANCE):
        raise ModelError(f"volume fractions must sum to 1 per asset; column sums are {sums}")
    return Schedule(vol_alloc * x0, x0, assets)


def liquidity_vol_alloc(liq: IntradayLiquidity) -> np.ndarray:
    """Per-asset single-stock liquidity fractions ``psi_id,it / sum_s psi_id,is``."""
    return liq.psi_id / liq.psi_id.sum(axis=0)


def total_liquidity_vol_alloc(liq: IntradayLiquidity) -> np.ndarray:
    """Per-asset fractions of the diagonal of total period liquidity (a volume proxy)."""
    diag = liq.psi_id + (liq.W**2 @ liq.psi_f.T).T
    return diag / diag.sum(axis=0)


# ------------------------------------------------------------------ QP oracle


@dataclass(frozen=True)
class QPSolution:
    schedule: Schedule
    cost: float
    iterations: int
    residual: float


class _BlockHessian:
    def __init__(self, liq: IntradayLiquidity):
        if np.any(liq.psi_id <= 0):
            raise ModelError("qp_oracle needs strictly positive single-stock liquidity in every period")
        self.blocks = [build_impact_matrix(liq.period(t)) for t in range(liq.periods)]
        if liq.n_assets <= DENSE_LIMIT:
            for t, G in enumerate(self.blocks):
                try:
                    np.linalg.cholesky(G.dense())
                except np.linalg.LinAlgError:
                    raise ModelError(f"impact matrix of period {t} is not positive definite") from None

    def apply(self, V: np.ndarray) -> np.ndarray:
        return np.stack([G.matvec(V[t]) for t, G in enumerate(self.blocks)])

    def lipschitz(self) -> float:
        return max(float(np.linalg.eigvalsh(G.dense())[-1]) for G in self.blocks)

    def dense(self) -> np.ndarray:
        T, n = len(self.blocks), self.blocks[0].n
        H = np.zeros((T * n, T * n))
        for t, G in enumerate(self.blocks):
            H[t * n:(t + 1) * n, t * n:(t + 1) * n] = G.dense()
        return H


def _kkt_residual(grad: np.ndarray) -> float:
    lam = grad.mean(axis=0)
    scale = max(float(np.max(np.abs(lam))), np.finfo(float).tiny)
    return float(np.max(np.abs(grad - lam))) / scale


def _project_columns(Y: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Euclidean projection of each column onto ``{sign-constrained, sums to x0_i}``."""
    out = np.zeros_like(Y)
    for i, target in enumerate(x0):
        if target == 0:
            continue
        s = np.sign(target)
        y = s * Y[:, i]
        # projection onto the scaled simplex {z >= 0, sum z = |target|}
        u = np.sort(y)[::-1]
        css = np.cumsum(u) - abs(target)
        k = np.arange(1, y.size + 1)
        rho = np.nonzero(u - css / k > 0)[0][-1]
        out[:, i] = s * np.maximum(y - css[rho] / (rho + 1), 0.0)
    return out


def _solve_unconstrained(H: _BlockHessian, x0, tol, max_iter):
    T = len(H.blocks)
    V = np.tile(x0 / T, (T, 1))
    n_vars = V.size
    d = None
    rr_old = None
    for it in range(1, max_iter + 1):
        grad = H.apply(V)
        residual = _kkt_residual(grad)
        if residual <= tol:
            return V, it - 1, residual
        r = -(grad - grad.mean(axis=0))
        rr = float(np.sum(r * r))
        if d is None or (it - 1) % n_vars == 0:
            d = r
        else:
            d = r + (rr / rr_old) * d
        Hd = H.apply(d)
        curvature = float(np.sum(d * Hd))
        if curvature <= 0:
            break
        V = V + (float(np.sum(r * d)) / curvature) * d
        rr_old = rr
    grad = H.apply(V)
    raise ConvergenceError("projected conjugate gradient did not converge", _kkt_residual(grad), max_iter)


def _polish_on_support(H: _BlockHessian, V: np.ndarray, x0: np.ndarray) -> np.ndarray | None:
    """Exact equality-constrained solve with the current zero pattern held fixed."""
    T, n = V.shape
    support = (V.T.reshape(-1) != 0)  # asset-major flattening matches A below
    if not np.any(support):
        return None
    Hd = H.dense()
    # reorder Hessian from period-major to asset-major indexing
    perm = np.arange(T * n).reshape(T, n).T.reshape(-1)
    Ha = Hd[np.ix_(perm, perm)][np.ix_(support, support)]
    assets = np.repeat(np.arange(n), T)[support]
    used = np.unique(assets)
    A = (assets[None, :] == used[:, None]).astype(float)
    m = used.size
    kkt = np.block([[Ha, A.T], [A, np.zeros((m, m))]])
    rhs = np.concatenate([np.zeros(Ha.shape[0]), x0[used]])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    z = np.zeros(T * n)
    z[support] = sol[: Ha.shape[0]]
    W = z.reshape(n, T).T
    signs = np.sign(x0)
    if np.any(W * signs < -1e-15 * max(1.0, float(np.max(np.abs(x0))))):
        return None
    return np.where(W * signs < 0, 0.0, W)


def _constrained_residual(H: _BlockHessian, V, x0, L) -> float:
    grad = H.apply(V)
    step = _project_columns(V - grad / L, x0) - V
    return float(np.max(np.abs(step))) / max(float(np.max(np.abs(x0))), np.finfo(float).tiny)


def _solve_sign_constrained(H: _BlockHessian, x0, tol, max_iter):
    T = len(H.blocks)
    L = H.lipschitz()
    V = _project_columns(np.tile(x0 / T, (T, 1)), x0)
    for it in range(1, max_iter + 1):
        grad = H.apply(V)
        D = _project_columns(V - grad / L, x0) - V
        residual = float(np.max(np.abs(D))) / max(float(np.max(np.abs(x0))), np.finfo(float).tiny)
        if residual <= tol:
            return V, it - 1, residual
        if it % 25 == 0:
            P = _polish_on_support(H, V, x0)
            if P is not None:
                res_p = _constrained_residual(H, P, x0, L)
                if res_p <= tol:
                    return P, it, res_p
        HD = H.apply(D)
        curvature = float(np.sum(D * HD))
        tau = 1.0 if curvature <= 0 else min(1.0, -float(np.sum(grad * D)) / curvature)
        V = V + tau * D
    raise ConvergenceError("projected gradient did not converge", residual, max_iter)


def qp_oracle(
    liq: IntradayLiquidity,
    x0,
    sign_constrained: bool = False,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> QPSolution:
    """Numerically minimize total expected cost subject to the inventory constraint.

    With ``sign_constrained`` every asset trades only in the direction of its
    parent order (``v_it >= 0`` if ``x0_i > 0``, ``<= 0`` if ``x0_i < 0``, and
    ``0`` if ``x0_i == 0``).  The unconstrained variant runs conjugate gradients
    projected onto the constraint plane with exact line search; the constrained
    variant runs projected gradient with exact line search along the feasible
    direction, finished by an exact solve on the identified support.
    """
    x0 = _check_x0(liq.n_assets, x0)
    if not np.any(x0):
        sched = Schedule(np.zeros((liq.periods, liq.n_assets)), x0, liq.assets)
        return QPSolution(sched, 0.0, 0, 0.0)
    H = _BlockHessian(liq)
    if sign_constrained:
        V, iterations, residual = _solve_sign_constrained(H, x0, tol, max_iter)
    else:
        V, iterations, residual = _solve_unconstrained(H, x0, tol, max_iter)
    # remove accumulated drift from the inventory constraint
    V = V + (x0 - V.sum(axis=0)) * (np.abs(V) / np.maximum(np.abs(V).sum(axis=0), np.finfo(float).tiny))
    sched = Schedule(V, x0, liq.assets)
    return QPSolution(sched, float(total_cost(liq, sched)), iterations, residual)


# ---------------------------------------------------------------- CSV formats

CHECKSUM_LABEL = "sum"


def write_schedule(path, schedule: Schedule) -> None:
    """One row per period (1-based), columns = assets, then a ``sum`` checksum row."""
    names = schedule.assets or tuple(f"a{i}" for i in range(schedule.v.shape[1]))
    rows = [[t + 1] + [float(x) for x in schedule.v[t]] for t in range(schedule.periods)]
    rows.append([CHECKSUM_LABEL] + [float(x) for x in schedule.x0])
    _io.write_csv(path, ["period", *names], rows)


def read_schedule(path) -> Schedule:
    header, rows = _io.read_csv(path, required=["period"])
    names = header[1:]
    if not rows or rows[-1][1]["period"] != CHECKSUM_LABEL:
        raise _io.ParseError(path, None, f"last row must be the '{CHECKSUM_LABEL}' checksum row")
    values = [[_io.parse_float(row[c], path, line, c) for c in names] for line, row in rows]
    v = np.array(values[:-1]).reshape(-1, len(names))
    x0 = np.array(values[-1])
    try:
        return Schedule(v, x0, tuple(names))
    except ModelError as exc:
        raise _io.ParseError(path, rows[-1][0], f"checksum row disagrees with column sums: {exc}") from None


def write_profile(path, profile: MixtureProfile) -> None:
    """Columns ``period,alpha,beta,theta`` (theta repeated on every row)."""
    rows = [[t + 1, float(a), float(b), profile.theta] for t, (a, b) in enumerate(zip(profile.alpha, profile.beta))]
    _io.write_csv(path, ["period", "alpha", "beta", "theta"], rows)


def read_profile(path) -> MixtureProfile:
    _, rows = _io.read_csv(path, required=["period", "alpha", "beta", "theta"])
    if not rows:
        raise _io.ParseError(path, None, "no periods")
    alpha = [_io.parse_float(r["alpha"], path, ln, "alpha") for ln, r in rows]
    beta = [_io.parse_float(r["beta"], path, ln, "beta") for ln, r in rows]
    thetas = {_io.parse_float(r["theta"], path, ln, "theta") for ln, r in rows}
    if len(thetas) != 1:
        raise _io.ParseError(path, None, "theta must be identical on every row")
    try:
        return MixtureProfile(thetas.pop(), np.array(alpha), np.array(beta))
    except ModelError as exc:
        raise _io.ParseError(path, None, str(exc)) from None


def write_target(path, x0, assets) -> None:
    _io.write_csv(path, ["asset", "x0"], [[name, float(x)] for name, x in zip(assets, x0)])


def read_target(path, assets=None) -> np.ndarray:
    """Read ``asset,x0``; when ``assets`` is given, reorder to match it."""
    _, rows = _io.read_csv(path, required=["asset", "x0"])
    values = {r["asset"]: _io.parse_float(r["x0"], path, ln, "x0") for ln, r in rows}
    if assets is None:
        return np.array(list(values.values()))
    missing = [a for a in assets if a not in values]
    extra = [a for a in values if a not in set(assets)]
    if missing or extra:
        raise _io.ParseError(path, None, f"target assets do not match the model (missing {missing}, extra {extra})")
    return np.array([values[a] for a in assets])
