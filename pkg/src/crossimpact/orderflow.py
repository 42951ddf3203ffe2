"""Compound-Poisson model of single-stock and index-fund order flow.

Per day and period, each asset receives ``Poisson(alpha_t * lam)`` single-stock
orders, and the fund receives ``Poisson(beta_t * lam)`` orders shared by every
asset.  Asset ``i`` trades ``Q_id + |w_i| Q_f`` in notional, where the Q's are
sums of i.i.d. gamma order sizes with coefficient of variation ``cv``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _io
from .calibration import VolumePanel
from .errors import DimensionError, ModelError
from .schedule import MixtureProfile


@dataclass(frozen=True)
class OrderFlowParams:
    lam: float
    cv: float
    qbar_id: np.ndarray
    qbar_f: float
    w_tilde: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        qid = np.array(self.qbar_id, dtype=float).reshape(-1)
        w = np.abs(np.array(self.w_tilde, dtype=float).reshape(-1))
        if qid.shape != w.shape or qid.size == 0:
            raise DimensionError("qbar_id and w_tilde must be non-empty and of equal length")
        if not self.lam > 0:
            raise ModelError("lam must be positive")
        if not self.cv >= 0:
            raise ModelError("cv must be non-negative")
        if not self.qbar_f > 0 or np.any(qid <= 0):
            raise ModelError("mean order sizes must be positive")
        # reuse the profile checks on alpha and beta
        prof = MixtureProfile(0.0, self.alpha, self.beta)
        for name, arr in (("qbar_id", qid), ("w_tilde", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "alpha", prof.alpha)
        object.__setattr__(self, "beta", prof.beta)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "cv", float(self.cv))
        object.__setattr__(self, "qbar_f", float(self.qbar_f))

    @property
    def n_assets(self) -> int:
        return self.qbar_id.size

    @property
    def periods(self) -> int:
        return self.alpha.size

    @property
    def theta_i(self) -> np.ndarray:
        """Per-asset share of expected volume that comes from the fund."""
        fund = self.w_tilde * self.qbar_f
        return fund / (self.qbar_id + fund)

    @classmethod
    def homogeneous(cls, profile: MixtureProfile, lam: float, cv: float, qbar_f: float, w_tilde) -> "OrderFlowParams":
        """Choose single-stock order sizes so that every asset has fund share ``profile.theta``."""
        th = profile.theta
        if not 0 < th < 1:
            raise ModelError("a homogeneous fund share needs 0 < theta < 1")
        w = np.abs(np.asarray(w_tilde, dtype=float))
        if np.any(w <= 0):
            raise ModelError("every asset must be held by the fund for a homogeneous share")
        qid = w * qbar_f * (1 - th) / th
        return cls(lam, cv, qid, qbar_f, w, profile.alpha, profile.beta)


@dataclass(frozen=True)
class Moments:
    mean: np.ndarray  # (T, N)
    var: np.ndarray  # (T, N)
    cov: np.ndarray  # (T, N, N), diagonal equals var
    correl: np.ndarray  # (T, N, N)
    vol_alloc: np.ndarray  # (N, T)


def theoretical_moments(params: OrderFlowParams) -> Moments:
    lam, m2 = params.lam, 1.0 + params.cv**2
    a = params.alpha[:, None]
    b = params.beta[:, None]
    w, qid, qf = params.w_tilde[None, :], params.qbar_id[None, :], params.qbar_f
    mean = a * lam * qid + b * lam * w * qf
    var = lam * m2 * (a * qid**2 + b * w**2 * qf**2)
    cov = params.beta[:, None, None] * lam * m2 * qf**2 * np.outer(params.w_tilde, params.w_tilde)[None]
    idx = np.arange(params.n_assets)
    cov[:, idx, idx] = var
    sd = np.sqrt(var)
    denom = sd[:, :, None] * sd[:, None, :]
    correl = np.divide(cov, denom, out=np.zeros_like(cov), where=denom > 0)
    th = params.theta_i
    vol_alloc = params.alpha[None, :] * (1 - th[:, None]) + params.beta[None, :] * th[:, None]
    return Moments(mean, var, cov, correl, vol_alloc)


def pair_correlation(theta_i: float, theta_j: float, alpha_t: float, beta_t: float) -> float:
    """Volume correlation between two assets written through their fund shares."""
    num = beta_t * theta_i * theta_j
    di = alpha_t * (1 - theta_i) ** 2 + beta_t * theta_i**2
    dj = alpha_t * (1 - theta_j) ** 2 + beta_t * theta_j**2
    return num / np.sqrt(di * dj) if di > 0 and dj > 0 else 0.0


def day_generator(seed: int, day: int) -> np.random.Generator:
    """Independent stream per (seed, day); the result does not depend on how days are scheduled."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(day)])))


def _gamma_sums(rng: np.random.Generator, counts: np.ndarray, qbar, cv: float) -> np.ndarray:
    # the sum of n i.i.d. Gamma(1/cv^2, qbar cv^2) sizes is Gamma(n/cv^2, qbar cv^2)
    qbar = np.broadcast_to(np.asarray(qbar, dtype=float), counts.shape)
    if cv == 0:
        return counts * qbar
    out = np.zeros(counts.shape)
    pos = counts > 0
    out[pos] = rng.gamma(counts[pos] / cv**2, qbar[pos] * cv**2)
    return out


def simulate_day(params: OrderFlowParams, rng: np.random.Generator) -> np.ndarray:
    T, N = params.periods, params.n_assets
    n_id = rng.poisson(params.alpha[:, None] * params.lam, size=(T, N))
    n_f = rng.poisson(params.beta * params.lam, size=T)
    q_id = _gamma_sums(rng, n_id, params.qbar_id[None, :], params.cv)
    q_f = _gamma_sums(rng, n_f, params.qbar_f, params.cv)
    return q_id + params.w_tilde[None, :] * q_f[:, None]


def simulate_panel(params: OrderFlowParams, days: int, seed: int) -> VolumePanel:
    if days < 1:
        raise ValueError("days must be at least 1")
    dvol = np.stack([simulate_day(params, day_generator(seed, d)) for d in range(days)])
    return VolumePanel(dvol)


_SCALAR_KEYS = ("lam", "cv", "qbar_f")
_VECTOR_KEYS = ("qbar_id", "w_tilde", "alpha", "beta")


def write_params(path, params: OrderFlowParams) -> None:
    items = {k: getattr(params, k) for k in _SCALAR_KEYS}
    items.update({k: [float(x) for x in getattr(params, k)] for k in _VECTOR_KEYS})
    _io.write_key_values(path, items)


def params_from_mapping(kv: dict, path="<config>") -> OrderFlowParams:
    missing = [k for k in (*_SCALAR_KEYS, *_VECTOR_KEYS) if k not in kv]
    if missing:
        raise _io.ParseError(path, None, f"missing keys {missing}")
    try:
        values = {k: float(kv[k]) for k in _SCALAR_KEYS}
        values.update({k: np.array(_io.parse_float_list(kv[k])) for k in _VECTOR_KEYS})
    except ValueError as exc:
        raise _io.ParseError(path, None, str(exc)) from None
    return OrderFlowParams(**values)


def read_params(path) -> OrderFlowParams:
    return params_from_mapping(_io.read_key_values(path), path)
