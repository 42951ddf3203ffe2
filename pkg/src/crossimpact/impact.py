"""Linear cross-asset impact from single-stock and index-fund liquidity.

Single-stock investors supply ``psi_id[i]`` shares of asset ``i`` per dollar of
price move; index-fund investors supply ``psi_f[k]`` units of fund ``k`` (the
basket ``W[:, k]``) per dollar move of the fund price.  Market clearing gives

    dp = G v,    G = (diag(psi_id) + W diag(psi_f) W^T)^{-1}

which is diagonal plus rank K.  ``G`` is built through the Woodbury identity,
so only a K x K system is ever factorized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from . import _io
from .errors import DimensionError, IllConditionedError, Infeasible, ModelError

#: largest N for which ``G`` is materialized densely
DENSE_LIMIT = 2048
#: reject models whose K x K inner matrix is worse conditioned than this
MAX_INNER_CONDITION = 1e12
#: relative least-squares residual above which ``v`` is outside span(W)
SPAN_TOLERANCE = 1e-8

PSI_F_LABEL = "__psi_f__"


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _as_W(W, n: int) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.size == 0:
        return np.zeros((n, 0))
    if W.ndim == 1:
        W = W[:, None]
    return W


def _default_assets(n: int) -> tuple[str, ...]:
    return tuple(f"a{i}" for i in range(n))


@dataclass(frozen=True)
class LiquidityModel:
    """Liquidity primitives for one period (or a daily total).

    ``psi_f`` entries may be zero: a fund with no liquidity in a period simply
    drops out of the low-rank term.
    """

    psi_id: np.ndarray
    psi_f: np.ndarray
    W: np.ndarray
    assets: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        psi_id = np.atleast_1d(np.asarray(self.psi_id, dtype=float))
        if psi_id.ndim != 1 or psi_id.size == 0:
            raise DimensionError("psi_id must be a non-empty vector")
        n = psi_id.size
        W = _as_W(self.W, n)
        psi_f = np.atleast_1d(np.asarray(self.psi_f, dtype=float)).reshape(-1)
        if W.shape != (n, psi_f.size):
            raise DimensionError(f"W has shape {W.shape}, expected ({n}, {psi_f.size})")
        if not np.all(np.isfinite(psi_id)) or np.any(psi_id <= 0):
            raise ModelError("all psi_id must be strictly positive")
        if not np.all(np.isfinite(psi_f)) or np.any(psi_f < 0):
            raise ModelError("psi_f must be non-negative")
        if not np.all(np.isfinite(W)):
            raise ModelError("W must be finite")
        if W.shape[1] > n or (W.shape[1] and np.linalg.matrix_rank(W) < W.shape[1]):
            raise ModelError("fund weight vectors must be linearly independent")
        assets = tuple(self.assets) if self.assets is not None else _default_assets(n)
        if len(assets) != n:
            raise DimensionError(f"{len(assets)} asset names for {n} assets")
        object.__setattr__(self, "psi_id", _frozen(psi_id))
        object.__setattr__(self, "psi_f", _frozen(psi_f))
        object.__setattr__(self, "W", _frozen(W))
        object.__setattr__(self, "assets", assets)

    @property
    def n_assets(self) -> int:
        return self.psi_id.size

    @property
    def n_funds(self) -> int:
        return self.psi_f.size

    def total_liquidity(self) -> np.ndarray:
        """Dense ``Psi_id + W Psi_f W^T``."""
        return np.diag(self.psi_id) + (self.W * self.psi_f) @ self.W.T

    def scaled(self, id_scale: float = 1.0, fund_scale: float = 1.0) -> "LiquidityModel":
        return LiquidityModel(self.psi_id * id_scale, self.psi_f * fund_scale, self.W, self.assets)


class ImpactMatrix:
    """``G = diag(inv_diag) - U C U^T``, kept in factored form.

    The dense matrix is materialized on construction when N <= DENSE_LIMIT;
    otherwise only ``matvec`` and ``quad`` are cheap and ``dense()`` costs N^2.
    """

    def __init__(self, inv_diag: np.ndarray, U: np.ndarray, C: np.ndarray):
        self.inv_diag = _frozen(inv_diag)
        self.U = _frozen(U)
        self.C = _frozen((C + C.T) / 2)
        self._dense = self._materialize() if self.n <= DENSE_LIMIT else None

    @property
    def n(self) -> int:
        return self.inv_diag.size

    def _materialize(self) -> np.ndarray:
        G = np.diag(self.inv_diag) - self.U @ self.C @ self.U.T
        G = (G + G.T) / 2
        G.setflags(write=False)
        return G

    def dense(self) -> np.ndarray:
        return self._dense if self._dense is not None else self._materialize()

    @property
    def G(self) -> np.ndarray:
        return self.dense()

    def matvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.inv_diag * v - self.U @ (self.C @ (self.U.T @ v))

    def quad(self, v) -> float:
        v = np.asarray(v, dtype=float)
        Uv = self.U.T @ v
        return float(v @ (self.inv_diag * v) - Uv @ self.C @ Uv)


def low_rank_inverse_factors(diag: np.ndarray, W: np.ndarray, weights: np.ndarray):
    """Woodbury factors of ``(diag(diag) + W diag(weights) W^T)^{-1}``.

    Returns ``(inv_diag, U, C)`` with the inverse equal to
    ``diag(inv_diag) - U C U^T``.  Columns with zero weight are dropped.
    Works for real or complex inputs (the latter for complex-step derivatives).
    """
    inv_diag = 1.0 / diag
    active = weights != 0
    W = W[:, active]
    weights = weights[active]
    U = inv_diag[:, None] * W
    if W.shape[1] == 0:
        return inv_diag, U, np.zeros((0, 0), dtype=U.dtype)
    inner = np.diag(1.0 / weights) + W.T @ U
    if not np.iscomplexobj(inner):
        cond = np.linalg.cond(inner)
        if not np.isfinite(cond) or cond > MAX_INNER_CONDITION:
            raise IllConditionedError(
                f"fund inner matrix has condition number {cond:.3e} > {MAX_INNER_CONDITION:.0e}; "
                "fund weight vectors are nearly dependent"
            )
    C = np.linalg.inv(inner)
    return inv_diag, U, C


def build_impact_matrix(model: LiquidityModel) -> ImpactMatrix:
    inv_diag, U, C = low_rank_inverse_factors(model.psi_id, model.W, model.psi_f)
    return ImpactMatrix(inv_diag, U, C)


def _check_vector(model: LiquidityModel, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (model.n_assets,):
        raise DimensionError(f"trade vector has shape {v.shape}, expected ({model.n_assets},)")
    return v


def price_impact(model: LiquidityModel, v) -> np.ndarray:
    """Equilibrium price change ``G v`` (dollars) for a trade of ``v`` shares."""
    v = _check_vector(model, v)
    return build_impact_matrix(model).matvec(v)


@dataclass(frozen=True)
class Clearing:
    price_change: np.ndarray
    from_single_stock: np.ndarray
    from_funds: np.ndarray


def clearing_decomposition(model: LiquidityModel, v) -> Clearing:
    """Split ``v`` into the shares sourced from each investor type at the clearing price."""
    dp = price_impact(model, v)
    single = model.psi_id * dp
    funds = model.W @ (model.psi_f * (model.W.T @ dp))
    return Clearing(dp, single, funds)


def one_period_cost(model: LiquidityModel, v) -> float:
    """Expected implementation shortfall ``v^T G v / 2`` of trading ``v`` in one period."""
    v = _check_vector(model, v)
    return 0.5 * build_impact_matrix(model).quad(v)


def extreme_case_cost(
    model: LiquidityModel, v, which: Literal["no-funds", "funds-only"]
) -> float | Infeasible:
    """Limiting cost when only one investor type supplies liquidity.

    ``no-funds`` is the separable diagonal model.  ``funds-only`` is finite only
    for ``v`` in span(W); otherwise an :class:`Infeasible` is returned.
    """
    v = _check_vector(model, v)
    if which == "no-funds":
        return 0.5 * float(np.sum(v * v / model.psi_id))
    if which != "funds-only":
        raise ValueError(f"unknown case {which!r}")
    norm = np.linalg.norm(v)
    if norm == 0:
        return 0.0
    if model.n_funds == 0:
        return Infeasible("no fund liquidity and v is non-zero", residual=1.0)
    u, *_ = np.linalg.lstsq(model.W, v, rcond=None)
    residual = np.linalg.norm(model.W @ u - v) / norm
    if residual > SPAN_TOLERANCE:
        return Infeasible("trade vector is not in the span of the fund weights", residual=float(residual))
    if np.any((model.psi_f == 0) & (u != 0)):
        return Infeasible("trade loads on a fund with zero liquidity", residual=float(residual))
    active = model.psi_f > 0
    return 0.5 * float(np.sum(u[active] ** 2 / model.psi_f[active]))


def to_notional_units(model: LiquidityModel, prices) -> LiquidityModel:
    """Re-express the model for notional trades and returns instead of shares and dollars.

    With ``P = diag(p)``: ``psi_id -> p^2 psi_id``, ``psi_f_k -> (w_k^T p)^2 psi_f_k``
    and ``w_k -> P w_k / (p^T w_k)``.  A trade ``v`` in shares costs the same as
    ``P v`` in the converted model.
    """
    p = np.asarray(prices, dtype=float)
    if p.shape != (model.n_assets,):
        raise DimensionError(f"price vector has shape {p.shape}, expected ({model.n_assets},)")
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        raise ModelError("prices must be strictly positive")
    fund_prices = model.W.T @ p
    scale = np.abs(model.W).T @ p
    if np.any(np.abs(fund_prices) <= 1e-14 * np.maximum(scale, np.finfo(float).tiny)):
        raise ModelError("a fund has zero price p^T w_k; dollar weights are undefined")
    W_tilde = (p[:, None] * model.W) / fund_prices
    return LiquidityModel(p**2 * model.psi_id, fund_prices**2 * model.psi_f, W_tilde, model.assets)


@dataclass(frozen=True)
class IntradayLiquidity:
    """Per-period liquidity with fund weights fixed through the day.

    Per-period single-stock liquidity may be zero in some periods (no
    single-stock activity); the daily totals must be strictly positive.
    """

    psi_id: np.ndarray  # (T, N)
    psi_f: np.ndarray  # (T, K)
    W: np.ndarray  # (N, K)
    assets: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        psi_id = np.asarray(self.psi_id, dtype=float)
        if psi_id.ndim != 2 or psi_id.shape[0] < 1 or psi_id.shape[1] < 1:
            raise DimensionError("psi_id must be a non-empty T x N array")
        T, n = psi_id.shape
        psi_f = np.asarray(self.psi_f, dtype=float)
        if psi_f.size == 0:
            psi_f = np.zeros((T, 0))
        psi_f = psi_f.reshape(T, -1)
        W = _as_W(self.W, n)
        if W.shape != (n, psi_f.shape[1]):
            raise DimensionError(f"W has shape {W.shape}, expected ({n}, {psi_f.shape[1]})")
        if not np.all(np.isfinite(psi_id)) or np.any(psi_id < 0):
            raise ModelError("per-period psi_id must be non-negative")
        if not np.all(np.isfinite(psi_f)) or np.any(psi_f < 0):
            raise ModelError("per-period psi_f must be non-negative")
        if np.any(psi_id.sum(axis=0) <= 0):
            raise ModelError("every asset needs positive total single-stock liquidity")
        assets = tuple(self.assets) if self.assets is not None else _default_assets(n)
        if len(assets) != n:
            raise DimensionError(f"{len(assets)} asset names for {n} assets")
        # the daily model validates W (rank, finiteness)
        LiquidityModel(psi_id.sum(axis=0), psi_f.sum(axis=0), W)
        object.__setattr__(self, "psi_id", _frozen(psi_id))
        object.__setattr__(self, "psi_f", _frozen(psi_f))
        object.__setattr__(self, "W", _frozen(W))
        object.__setattr__(self, "assets", assets)

    @property
    def periods(self) -> int:
        return self.psi_id.shape[0]

    @property
    def n_assets(self) -> int:
        return self.psi_id.shape[1]

    @property
    def n_funds(self) -> int:
        return self.psi_f.shape[1]

    def period(self, t: int) -> LiquidityModel:
        return LiquidityModel(self.psi_id[t], self.psi_f[t], self.W, self.assets)

    def period_liquidity(self, t: int) -> np.ndarray:
        """Dense ``Psi_id,t + W Psi_f,t W^T`` (valid even when singular)."""
        return np.diag(self.psi_id[t]) + (self.W * self.psi_f[t]) @ self.W.T

    def daily(self) -> LiquidityModel:
        """Total daily liquidity (sums over periods)."""
        return LiquidityModel(self.psi_id.sum(axis=0), self.psi_f.sum(axis=0), self.W, self.assets)

    @classmethod
    def from_models(cls, models: Sequence[LiquidityModel]) -> "IntradayLiquidity":
        if not models:
            raise DimensionError("need at least one period")
        W = models[0].W
        for m in models[1:]:
            if m.W.shape != W.shape or not np.array_equal(m.W, W):
                raise ModelError("all periods must share the same fund weights W")
        return cls(
            np.stack([m.psi_id for m in models]),
            np.stack([m.psi_f for m in models]),
            W,
            models[0].assets,
        )

    @classmethod
    def from_profile(cls, daily: LiquidityModel, alpha, beta) -> "IntradayLiquidity":
        """Scale daily liquidity by intraday intensities: ``alpha_t * psi_id``, ``beta_t * psi_f``."""
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float)
        if alpha.shape != beta.shape or alpha.ndim != 1:
            raise DimensionError("alpha and beta must be vectors of equal length")
        return cls(np.outer(alpha, daily.psi_id), np.outer(beta, daily.psi_f), daily.W, daily.assets)


def _period_cost(liq: IntradayLiquidity, t: int, v: np.ndarray) -> float | Infeasible:
    if np.all(liq.psi_id[t] > 0):
        return 0.5 * build_impact_matrix(liq.period(t)).quad(v)
    # singular period liquidity: finite only on its range, where G acts as the pseudo-inverse
    if not np.any(v):
        return 0.0
    L = liq.period_liquidity(t)
    y, *_ = np.linalg.lstsq(L, v, rcond=None)
    residual = np.linalg.norm(L @ y - v) / np.linalg.norm(v)
    if residual > SPAN_TOLERANCE:
        return Infeasible(f"period {t} trade lies outside the available liquidity", residual=float(residual))
    return 0.5 * float(v @ y)


def period_costs(liq: IntradayLiquidity, schedule) -> list[float | Infeasible]:
    v = np.asarray(getattr(schedule, "v", schedule), dtype=float)
    if v.shape != (liq.periods, liq.n_assets):
        raise DimensionError(f"schedule has shape {v.shape}, expected ({liq.periods}, {liq.n_assets})")
    return [_period_cost(liq, t, v[t]) for t in range(liq.periods)]


def total_cost(liq: IntradayLiquidity, schedule) -> float | Infeasible:
    """Expected shortfall ``sum_t v_t^T G_t v_t / 2`` of a T x N schedule."""
    costs = period_costs(liq, schedule)
    for c in costs:
        if isinstance(c, Infeasible):
            return c
    return float(np.sum(costs))


# ---------------------------------------------------------------- CSV formats


def _liquidity_header(n_funds: int, intraday: bool) -> list[str]:
    head = ["period"] if intraday else []
    return head + ["asset", "psi_id"] + [f"w_{k + 1}" for k in range(n_funds)]


def write_liquidity_model(path, model: LiquidityModel) -> None:
    """Columns ``asset,psi_id,w_1..w_K``; one row per asset and a final ``__psi_f__`` row."""
    K = model.n_funds
    rows = [[name, float(model.psi_id[i])] + [float(x) for x in model.W[i]] for i, name in enumerate(model.assets)]
    rows.append([PSI_F_LABEL, ""] + [float(x) for x in model.psi_f])
    _io.write_csv(path, _liquidity_header(K, False), rows)


def write_intraday_liquidity(path, liq: IntradayLiquidity) -> None:
    """Same layout as the daily format with a leading ``period`` column (1-based)."""
    rows = []
    for t in range(liq.periods):
        for i, name in enumerate(liq.assets):
            rows.append([t + 1, name, float(liq.psi_id[t, i])] + [float(x) for x in liq.W[i]])
        rows.append([t + 1, PSI_F_LABEL, ""] + [float(x) for x in liq.psi_f[t]])
    _io.write_csv(path, _liquidity_header(liq.n_funds, True), rows)


def _parse_block(path, rows, w_cols):
    names, psi_id, W, psi_f = [], [], [], None
    for line, row in rows:
        if row["asset"] == PSI_F_LABEL:
            if psi_f is not None:
                raise _io.ParseError(path, line, "duplicate psi_f row")
            if row["psi_id"] != "":
                raise _io.ParseError(path, line, "psi_f row must leave psi_id empty")
            psi_f = [_io.parse_float(row[c], path, line, c) for c in w_cols]
        else:
            names.append(row["asset"])
            psi_id.append(_io.parse_float(row["psi_id"], path, line, "psi_id"))
            W.append([_io.parse_float(row[c], path, line, c) for c in w_cols])
    if not names:
        raise _io.ParseError(path, None, "no asset rows")
    if psi_f is None:
        if w_cols:
            raise _io.ParseError(path, None, f"missing {PSI_F_LABEL} row")
        psi_f = []
    return names, np.array(psi_id), np.array(W).reshape(len(names), len(w_cols)), np.array(psi_f)


def _w_columns(path, header):
    w_cols = [h for h in header if h.startswith("w_")]
    expected = [f"w_{k + 1}" for k in range(len(w_cols))]
    if w_cols != expected:
        raise _io.ParseError(path, 1, f"fund columns must be {expected}, got {w_cols}")
    return w_cols


def read_liquidity_model(path) -> LiquidityModel:
    header, rows = _io.read_csv(path, required=["asset", "psi_id"])
    if "period" in header:
        raise _io.ParseError(path, 1, "file is an intraday liquidity table; use read_intraday_liquidity")
    names, psi_id, W, psi_f = _parse_block(path, rows, _w_columns(path, header))
    try:
        return LiquidityModel(psi_id, psi_f, W, tuple(names))
    except ModelError as exc:
        raise _io.ParseError(path, None, str(exc)) from None


def read_intraday_liquidity(path) -> IntradayLiquidity:
    header, rows = _io.read_csv(path, required=["period", "asset", "psi_id"])
    w_cols = _w_columns(path, header)
    blocks: dict[str, list] = {}
    for line, row in rows:
        blocks.setdefault(row["period"], []).append((line, row))
    psi_id, psi_f, W0, names0 = [], [], None, None
    for label, block in blocks.items():
        names, pid, W, pf = _parse_block(path, block, w_cols)
        if W0 is None:
            W0, names0 = W, names
        elif names != names0 or not np.array_equal(W, W0):
            raise _io.ParseError(path, block[0][0], f"period {label}: assets or fund weights differ from the first period")
        psi_id.append(pid)
        psi_f.append(pf)
    try:
        return IntradayLiquidity(np.array(psi_id), np.array(psi_f).reshape(len(psi_id), -1), W0, tuple(names0))
    except ModelError as exc:
        raise _io.ParseError(path, None, str(exc)) from None


def read_liquidity(path) -> LiquidityModel | IntradayLiquidity:
    """Read either format, dispatching on the presence of a ``period`` column."""
    header, _ = _io.read_csv(path)
    return read_intraday_liquidity(path) if "period" in header else read_liquidity_model(path)
