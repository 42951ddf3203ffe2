"""Reduced-form impact regression: records, likelihood, and its maximization.

Each record predicts the shortfall return vector as ``0.5 * Gt^{-1} v`` with

    Gt = gamma_id * diag(dvol / sigma) + W diag(gamma_f * dvol_f / sigma_f) W^T

and the log-likelihood is ``-sum (r - pred)^T Sigma^{-1} (r - pred)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import _io
from .errors import ConvergenceError, DimensionError, IllConditionedError, ModelError
from .impact import MAX_INNER_CONDITION, low_rank_inverse_factors

COMPLEX_STEP = 1e-20


@dataclass(frozen=True)
class TransactionRecord:
    v_tilde: np.ndarray
    r_bar: np.ndarray
    W_tilde: np.ndarray
    dvol_hat: np.ndarray
    sigma_hat: np.ndarray
    dvol_f_hat: np.ndarray
    sigma_f_hat: np.ndarray
    sigma_noise: np.ndarray

    def __post_init__(self):
        v = np.array(self.v_tilde, dtype=float).reshape(-1)
        n = v.size
        W = np.array(self.W_tilde, dtype=float)
        if W.size == 0:
            W = W.reshape(n, 0)
        if W.ndim == 1:
            W = W.reshape(n, -1)
        k = W.shape[1]
        arrays = {
            "v_tilde": v,
            "r_bar": np.array(self.r_bar, dtype=float).reshape(-1),
            "W_tilde": W,
            "dvol_hat": np.array(self.dvol_hat, dtype=float).reshape(-1),
            "sigma_hat": np.array(self.sigma_hat, dtype=float).reshape(-1),
            "dvol_f_hat": np.array(self.dvol_f_hat, dtype=float).reshape(-1),
            "sigma_f_hat": np.array(self.sigma_f_hat, dtype=float).reshape(-1),
            "sigma_noise": np.array(self.sigma_noise, dtype=float),
        }
        expected = {"r_bar": (n,), "W_tilde": (n, k), "dvol_hat": (n,), "sigma_hat": (n,),
                    "dvol_f_hat": (k,), "sigma_f_hat": (k,), "sigma_noise": (n, n)}
        for name, shape in expected.items():
            if arrays[name].shape != shape:
                raise DimensionError(f"{name} has shape {arrays[name].shape}, expected {shape}")
        for name, a in arrays.items():
            if not np.all(np.isfinite(a)):
                raise ModelError(f"{name} contains non-finite values")
        for name in ("dvol_hat", "sigma_hat", "dvol_f_hat", "sigma_f_hat"):
            if np.any(arrays[name] <= 0):
                raise ModelError(f"{name} must be strictly positive")
        S = arrays["sigma_noise"]
        if not np.allclose(S, S.T, rtol=1e-12, atol=0):
            raise ModelError("sigma_noise must be symmetric")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise ModelError("sigma_noise must be positive definite") from None
        for name, a in arrays.items():
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_assets(self) -> int:
        return self.v_tilde.size

    @property
    def n_funds(self) -> int:
        return self.W_tilde.shape[1]


@dataclass(frozen=True)
class ImpactCoefficients:
    gamma_id: float
    gamma_f: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        gf = np.array(self.gamma_f, dtype=float).reshape(-1)
        if not (self.gamma_id > 0 and math.isfinite(self.gamma_id)):
            raise ModelError(f"gamma_id must be positive, got {self.gamma_id}")
        if np.any(gf <= 0) or not np.all(np.isfinite(gf)):
            raise ModelError("gamma_f entries must be positive")
        gf.setflags(write=False)
        object.__setattr__(self, "gamma_id", float(self.gamma_id))
        object.__setattr__(self, "gamma_f", gf)

    @property
    def n_funds(self) -> int:
        return self.gamma_f.size

    def log_params(self) -> np.ndarray:
        return np.log(np.concatenate([[self.gamma_id], self.gamma_f]))

    @classmethod
    def from_log(cls, z) -> "ImpactCoefficients":
        z = np.asarray(z, dtype=float)
        return cls(float(np.exp(z[0])), np.exp(z[1:]))


def _check_match(rec: TransactionRecord, coef: ImpactCoefficients) -> None:
    if rec.n_funds != coef.n_funds:
        raise DimensionError(f"record has {rec.n_funds} funds, coefficients have {coef.n_funds}")


def predict_shortfall(rec: TransactionRecord, coef: ImpactCoefficients) -> np.ndarray:
    """``0.5 * Gt^{-1} v`` through the K x K Woodbury inner system."""
    _check_match(rec, coef)
    diag = coef.gamma_id * rec.dvol_hat / rec.sigma_hat
    weights = coef.gamma_f * rec.dvol_f_hat / rec.sigma_f_hat
    inv_diag, U, C = low_rank_inverse_factors(diag, rec.W_tilde, weights)
    v = rec.v_tilde
    return 0.5 * (inv_diag * v - U @ (C @ (U.T @ v)))


def predict_shortfall_dense(rec: TransactionRecord, coef: ImpactCoefficients) -> np.ndarray:
    """Reference route: build ``Gt`` densely and solve."""
    _check_match(rec, coef)
    Gt = np.diag(coef.gamma_id * rec.dvol_hat / rec.sigma_hat)
    Gt = Gt + (rec.W_tilde * (coef.gamma_f * rec.dvol_f_hat / rec.sigma_f_hat)) @ rec.W_tilde.T
    return 0.5 * np.linalg.solve(Gt, rec.v_tilde)


class _Batch:
    """Records of one (N, K) shape stacked for vectorized evaluation."""

    def __init__(self, records: list[TransactionRecord]):
        self.v = np.stack([r.v_tilde for r in records])
        self.r = np.stack([r.r_bar for r in records])
        self.W = np.stack([r.W_tilde for r in records])
        self.liq_id = np.stack([r.dvol_hat / r.sigma_hat for r in records])
        self.liq_f = np.stack([r.dvol_f_hat / r.sigma_f_hat for r in records])
        self.prec = np.stack([np.linalg.inv(r.sigma_noise) for r in records])
        self.prec = (self.prec + np.swapaxes(self.prec, 1, 2)) / 2

    def predict(self, z) -> np.ndarray:
        """Predictions for log-parameters ``z`` (real or complex)."""
        inv_diag = 1.0 / (np.exp(z[0]) * self.liq_id)
        out = inv_diag * self.v
        if self.W.shape[2] == 0:
            return 0.5 * out
        weights = np.exp(z[1:])[None, :] * self.liq_f
        U = inv_diag[:, :, None] * self.W
        inner = np.einsum("rnk,rnl->rkl", self.W, U)
        idx = np.arange(inner.shape[1])
        inner[:, idx, idx] += 1.0 / weights
        if not np.iscomplexobj(inner):
            cond = np.linalg.cond(inner)
            if not np.all(np.isfinite(cond)) or np.any(cond > MAX_INNER_CONDITION):
                raise IllConditionedError("fund inner matrix is ill-conditioned for some record")
        Uv = np.einsum("rnk,rn->rk", U, self.v)
        sol = np.linalg.solve(inner, Uv[:, :, None])[:, :, 0]
        return 0.5 * (out - np.einsum("rnk,rk->rn", U, sol))

    def terms(self, z) -> np.ndarray:
        res = self.r - self.predict(z)
        return np.einsum("rn,rnm,rm->r", res, self.prec, res)


class Likelihood:
    """Log-likelihood as a function of log-parameters, prepared once for a record set."""

    def __init__(self, records):
        records = list(records)
        if not records:
            raise ModelError("no records")
        ks = {r.n_funds for r in records}
        if len(ks) != 1:
            raise DimensionError(f"records disagree on the number of funds: {sorted(ks)}")
        self.n_funds = ks.pop()
        groups: dict[int, list] = {}
        for r in records:
            groups.setdefault(r.n_assets, []).append(r)
        self.batches = [_Batch(g) for _, g in sorted(groups.items())]
        self.n_records = len(records)

    def __call__(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return -math.fsum(np.concatenate([b.terms(z) for b in self.batches]))

    def complex_step_gradient(self, z, h: float = COMPLEX_STEP) -> np.ndarray:
        """Gradient in log-space by complex-step differentiation (no subtractive cancellation)."""
        z = np.asarray(z, dtype=float)
        grad = np.empty(z.size)
        for k in range(z.size):
            zc = z.astype(complex)
            zc[k] += 1j * h
            t = np.concatenate([b.terms(zc) for b in self.batches])
            grad[k] = -math.fsum(t.imag) / h
        return grad

    def central_difference_gradient(self, z, h: float = 1e-5) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        grad = np.empty(z.size)
        for k in range(z.size):
            e = np.zeros(z.size)
            e[k] = h
            grad[k] = (self(z + e) - self(z - e)) / (2 * h)
        return grad

    def null_scale(self) -> float:
        """``sum r^T Sigma^{-1} r``: the likelihood deficit of predicting zero."""
        return math.fsum(np.concatenate([np.einsum("rn,rnm,rm->r", b.r, b.prec, b.r) for b in self.batches]))


def log_likelihood(records, coef: ImpactCoefficients) -> float:
    """``-sum (r - pred)^T Sigma^{-1} (r - pred)`` over records."""
    lik = Likelihood(records)
    if lik.n_funds != coef.n_funds:
        raise DimensionError(f"records have {lik.n_funds} funds, coefficients have {coef.n_funds}")
    return lik(coef.log_params())


def loglik_gradient(records, coef: ImpactCoefficients) -> np.ndarray:
    """Gradient of the log-likelihood with respect to ``log(gamma)``."""
    return Likelihood(records).complex_step_gradient(coef.log_params())


@dataclass(frozen=True)
class FitDiagnostics:
    converged: bool
    message: str
    iterations: int
    function_evals: int
    gradient_norm: float  # of the normalized objective, in log-space
    log_likelihood: float
    gradient_check: float  # relative gap between complex-step and central-difference gradients at the start


@dataclass(frozen=True)
class FitOptions:
    gtol: float = 1e-10
    max_iter: int = 500
    raise_on_failure: bool = False


def _relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale


def fit_mle(records, init: ImpactCoefficients, options: FitOptions | None = None):
    """Maximize the log-likelihood over ``log(gamma)`` with BFGS.

    The objective is divided by the zero-prediction deficit so that stopping
    tolerances do not depend on the units of the returns.
    """
    options = options or FitOptions()
    lik = Likelihood(records)
    if lik.n_funds != init.n_funds:
        raise DimensionError(f"records have {lik.n_funds} funds, init has {init.n_funds}")
    scale = lik.null_scale()
    if scale == 0:
        raise ModelError("all shortfall returns are zero; the coefficients are not identified")
    z0 = init.log_params()
    check = _relative_gap(lik.complex_step_gradient(z0), lik.central_difference_gradient(z0))

    def obj(z):
        return -lik(z) / scale

    def jac(z):
        return -lik.complex_step_gradient(z) / scale

    res = minimize(obj, z0, jac=jac, method="BFGS", options={"gtol": options.gtol, "maxiter": options.max_iter})
    grad_norm = float(np.max(np.abs(jac(res.x))))
    # BFGS reports precision loss when it is already at the optimum to machine accuracy
    converged = bool(res.success) or grad_norm <= 1e3 * options.gtol
    diag = FitDiagnostics(
        converged=converged,
        message=str(res.message),
        iterations=int(res.nit),
        function_evals=int(res.nfev),
        gradient_norm=grad_norm,
        log_likelihood=lik(res.x),
        gradient_check=check,
    )
    if not converged and options.raise_on_failure:
        raise ConvergenceError(f"likelihood maximization did not converge: {res.message}", grad_norm, int(res.nit))
    return ImpactCoefficients.from_log(res.x), diag


def closed_form_gamma_id(records) -> float:
    """Exact maximizer for records without funds: predictions are ``c * a`` with ``c = 1/gamma_id``."""
    num = []
    den = []
    for rec in records:
        if rec.n_funds:
            raise ModelError("closed form applies only to records without funds")
        a = 0.5 * rec.v_tilde * rec.sigma_hat / rec.dvol_hat
        Pa = np.linalg.solve(rec.sigma_noise, a)
        num.append(float(Pa @ rec.r_bar))
        den.append(float(Pa @ a))
    c = math.fsum(num) / math.fsum(den)
    if c <= 0:
        raise ModelError("least-squares slope is non-positive; no positive gamma_id fits these records")
    return 1.0 / c


def simulate_records(
    true_coef: ImpactCoefficients,
    n_records: int,
    noise_scale: float,
    seed: int,
    n_assets: int = 5,
) -> list[TransactionRecord]:
    """Synthetic records whose returns follow the model plus Gaussian noise ``noise_scale^2 * Sigma``.

    Forecast volumes are log-normal around $10M (assets) and $50M (funds),
    volatilities around 2% and 1.2%, fund weights are dollar fractions summing
    to one, and trade sizes are a few percent of forecast volume.
    """
    if n_records < 1:
        raise ValueError("n_records must be at least 1")
    if noise_scale < 0:
        raise ValueError("noise_scale must be non-negative")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed)])))
    K, N = true_coef.n_funds, n_assets
    out = []
    for _ in range(n_records):
        dvol = 1e7 * np.exp(rng.normal(0.0, 0.5, N))
        sigma = 0.02 * np.exp(rng.normal(0.0, 0.25, N))
        dvol_f = 5e7 * np.exp(rng.normal(0.0, 0.3, K))
        sigma_f = 0.012 * np.exp(rng.normal(0.0, 0.2, K))
        W = rng.uniform(0.2, 1.0, (N, K))
        W = W / W.sum(axis=0, keepdims=True) if K else W
        v = dvol * rng.normal(0.0, 0.03, N)
        # one-factor noise covariance at 1% of daily volatility
        load = rng.uniform(0.2, 0.6, N)
        corr = np.outer(load, load)
        np.fill_diagonal(corr, 1.0)
        sd = 0.01 * sigma
        S = corr * np.outer(sd, sd)
        base = TransactionRecord(v, np.zeros(N), W, dvol, sigma, dvol_f, sigma_f, S)
        pred = predict_shortfall(base, true_coef)
        noise = noise_scale * (np.linalg.cholesky(S) @ rng.standard_normal(N)) if noise_scale else 0.0
        out.append(TransactionRecord(v, pred + noise, W, dvol, sigma, dvol_f, sigma_f, S))
    return out


def write_coefficients(path, coef: ImpactCoefficients, extra: dict | None = None) -> None:
    items = {"gamma_id": coef.gamma_id, "gamma_f": [float(g) for g in coef.gamma_f]}
    if extra:
        items.update(extra)
    _io.write_key_values(path, items)


def coefficients_from_mapping(kv: dict, path="<config>") -> ImpactCoefficients:
    if "gamma_id" not in kv:
        raise _io.ParseError(path, None, "missing key 'gamma_id'")
    try:
        return ImpactCoefficients(float(kv["gamma_id"]), np.array(_io.parse_float_list(kv.get("gamma_f", ""))))
    except ValueError as exc:
        raise _io.ParseError(path, None, str(exc)) from None


def read_coefficients(path) -> ImpactCoefficients:
    return coefficients_from_mapping(_io.read_key_values(path), path)


MANIFEST = "manifest.csv"


def _record_header(n: int, k: int) -> list[str]:
    return (["asset", "v_tilde", "r_bar", "dvol_hat", "sigma_hat"]
            + [f"w_{j + 1}" for j in range(k)] + [f"cov_{j + 1}" for j in range(n)])


def write_records(directory, records) -> None:
    """``manifest.csv`` lists one file per record with the record's fund forecasts.

    Manifest header: ``file,dvol_f_1..dvol_f_K,sigma_f_1..sigma_f_K``.
    Record header: ``asset,v_tilde,r_bar,dvol_hat,sigma_hat,w_1..w_K,cov_1..cov_N``
    where row ``i`` of the ``cov_*`` block is row ``i`` of the noise covariance.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = list(records)
    ks = {r.n_funds for r in records}
    if len(ks) > 1:
        raise DimensionError("all records in a directory must share the number of funds")
    k = ks.pop() if ks else 0
    width = len(str(max(len(records), 1)))
    manifest = []
    for idx, rec in enumerate(records):
        name = f"record_{idx + 1:0{width}d}.csv"
        n = rec.n_assets
        rows = [
            [f"a{i}", float(rec.v_tilde[i]), float(rec.r_bar[i]), float(rec.dvol_hat[i]), float(rec.sigma_hat[i])]
            + [float(x) for x in rec.W_tilde[i]]
            + [float(x) for x in rec.sigma_noise[i]]
            for i in range(n)
        ]
        _io.write_csv(directory / name, _record_header(n, k), rows)
        manifest.append([name] + [float(x) for x in rec.dvol_f_hat] + [float(x) for x in rec.sigma_f_hat])
    header = ["file"] + [f"dvol_f_{j + 1}" for j in range(k)] + [f"sigma_f_{j + 1}" for j in range(k)]
    _io.write_csv(directory / MANIFEST, header, manifest)


def read_records(directory) -> list[TransactionRecord]:
    directory = Path(directory)
    mpath = directory / MANIFEST
    if not mpath.exists():
        raise _io.ParseError(mpath, None, "manifest not found")
    header, rows = _io.read_csv(mpath, required=["file"])
    k = sum(1 for h in header if h.startswith("dvol_f_"))
    fcols = [f"dvol_f_{j + 1}" for j in range(k)]
    scols = [f"sigma_f_{j + 1}" for j in range(k)]
    if header != ["file", *fcols, *scols]:
        raise _io.ParseError(mpath, 1, f"unexpected manifest header {header}")
    out = []
    for line, row in rows:
        dvol_f = [_io.parse_float(row[c], mpath, line, c) for c in fcols]
        sigma_f = [_io.parse_float(row[c], mpath, line, c) for c in scols]
        rpath = directory / row["file"]
        if not rpath.exists():
            raise _io.ParseError(mpath, line, f"record file {row['file']!r} not found")
        rheader, rrows = _io.read_csv(rpath)
        n = len(rrows)
        if rheader != _record_header(n, k):
            raise _io.ParseError(rpath, 1, f"header does not match {n} assets and {k} funds")
        cols = {c: [_io.parse_float(r[c], rpath, ln, c) for ln, r in rrows] for c in rheader[1:]}
        W = np.array([cols[f"w_{j + 1}"] for j in range(k)]).T.reshape(n, k)
        S = np.array([cols[f"cov_{j + 1}"] for j in range(n)]).T
        try:
            out.append(TransactionRecord(cols["v_tilde"], cols["r_bar"], W, cols["dvol_hat"], cols["sigma_hat"],
                                         dvol_f, sigma_f, S))
        except ModelError as exc:
            raise _io.ParseError(rpath, None, str(exc)) from None
    if not out:
        raise _io.ParseError(mpath, None, "manifest lists no records")
    return out
