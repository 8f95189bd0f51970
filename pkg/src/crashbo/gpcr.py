"""GP for classified regression: a constraint GP conditioned on hybrid data.

Successful evaluations contribute a noisy Gaussian observation of ``g`` plus the
knowledge ``g <= c``; failures contribute only ``g >= c``.  The Gaussian factors
are multiplied into the prior in closed form, and the remaining half-line
factors are absorbed with expectation propagation (EP).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import log_ndtr, ndtr

from . import _compiled
from .core_math import (
    KernelHyper,
    NumericalError,
    UnivariateGaussian,
    gram,
    kernel_matrix,
    robust_cholesky,
)

_LOG_2PI = math.log(2.0 * math.pi)
# Sweeps between exact posterior recomputations; rank-1 updates run in between.
_REFRESH_EVERY = 5


@dataclass(frozen=True)
class HybridDataset:
    """Safe points with constraint observations, and failure points with labels only."""

    safe_inputs: np.ndarray
    safe_values: np.ndarray
    fail_inputs: np.ndarray

    def __post_init__(self):
        dim = _infer_dim(self.safe_inputs, self.fail_inputs)
        Xs = np.asarray(self.safe_inputs, dtype=float).reshape(-1, dim)
        ys = np.asarray(self.safe_values, dtype=float).ravel()
        Xu = np.asarray(self.fail_inputs, dtype=float).reshape(-1, dim)
        if Xs.shape[0] != ys.shape[0]:
            raise ValueError(f"{Xs.shape[0]} safe inputs but {ys.shape[0]} safe values")
        for X in (Xs, Xu):
            if X.size and (X.min() < 0.0 or X.max() > 1.0):
                raise ValueError("inputs must lie inside the unit hypercube")
        object.__setattr__(self, "safe_inputs", Xs)
        object.__setattr__(self, "safe_values", ys)
        object.__setattr__(self, "fail_inputs", Xu)

    @classmethod
    def empty(cls, dim: int) -> "HybridDataset":
        return cls(np.zeros((0, dim)), np.zeros(0), np.zeros((0, dim)))

    @property
    def dim(self) -> int:
        return self.safe_inputs.shape[1]

    @property
    def n_safe(self) -> int:
        return self.safe_values.shape[0]

    @property
    def n_fail(self) -> int:
        return self.fail_inputs.shape[0]

    def __len__(self):
        return self.n_safe + self.n_fail

    @property
    def inputs(self) -> np.ndarray:
        """All inputs, safe points first."""
        return np.vstack([self.safe_inputs, self.fail_inputs])

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([np.ones(self.n_safe, dtype=int), np.zeros(self.n_fail, dtype=int)])

    @property
    def y_max(self) -> float | None:
        return float(self.safe_values.max()) if self.n_safe else None

    def with_safe(self, x, y) -> "HybridDataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return HybridDataset(np.vstack([self.safe_inputs, x]),
                             np.append(self.safe_values, float(y)), self.fail_inputs)

    def with_failure(self, x) -> "HybridDataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return HybridDataset(self.safe_inputs, self.safe_values, np.vstack([self.fail_inputs, x]))


def _infer_dim(*arrays) -> int:
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if a.ndim == 2:
            return a.shape[1]
        if a.ndim == 1 and a.size:
            return 1
    raise ValueError("cannot infer input dimension from empty 1D arrays; pass (0, D) arrays")


@dataclass(frozen=True)
class GPCRHyper:
    kernel: KernelHyper
    noise_variance: float
    threshold: float

    def __post_init__(self):
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be positive")


@dataclass(frozen=True)
class EPOptions:
    max_sweeps: int = 50
    damping: float = 0.8
    tolerance: float = 1e-6
    min_site_variance: float = 1e-10
    seed: int = 0
    jitter: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")


@dataclass(frozen=True)
class EPState:
    """Site natural parameters and the resulting Gaussian posterior.

    Site ``i`` is ``exp(-0.5 * site_precision[i] * g**2 + site_shift[i] * g)``.
    ``log_evidence`` is ``log`` of the integral of the truncated product,
    relative to the normalized Gaussian product (add ``log_scale`` from the
    model for the full evidence).
    """

    site_precision: np.ndarray
    site_shift: np.ndarray
    posterior_mean: np.ndarray
    posterior_cov: np.ndarray
    log_evidence: float
    converged: bool
    iterations_used: int

    @property
    def site_variances(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.site_precision > 0, 1.0 / self.site_precision, np.inf)

    @property
    def site_means(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.site_precision > 0, self.site_shift / self.site_precision, 0.0)


@dataclass(frozen=True)
class GPCRModel:
    dataset: HybridDataset
    hyper: GPCRHyper
    tilted_mean: np.ndarray
    tilted_cov: np.ndarray
    log_scale: float
    ep: EPState
    _pred_chol: np.ndarray = field(repr=False)
    _pred_sqrt_w: np.ndarray = field(repr=False)
    _pred_alpha: np.ndarray = field(repr=False)

    @property
    def threshold(self) -> float:
        return self.hyper.threshold

    @property
    def log_evidence(self) -> float:
        return self.log_scale + self.ep.log_evidence

    @property
    def warning(self) -> bool:
        """True when EP stopped before converging."""
        return not self.ep.converged

    def predict(self, x) -> UnivariateGaussian:
        return predict(self, x)

    def predict_many(self, X):
        return predict_many(self, X)

    def prob_success(self, x) -> float:
        return prob_success(self, x)

    def prob_success_many(self, X) -> np.ndarray:
        return prob_success_many(self, X)


def gaussian_product(dataset: HybridDataset, hyper: GPCRHyper, jitter: float = 0.0):
    """Fold the safe observations into the prior.

    Returns ``(m, S, log_scale)`` with
    ``N(ys | g_s, noise I) N(g | 0, K) = exp(log_scale) N(g | m, S)``.
    """
    if len(dataset) == 0:
        raise ValueError("GPCR needs at least one observation")
    K = gram(dataset.inputs, hyper.kernel)
    ns = dataset.n_safe
    if ns == 0:
        return np.zeros(len(dataset)), K, 0.0
    y = dataset.safe_values
    A = K[:ns, :ns] + hyper.noise_variance * np.eye(ns)
    L, _ = robust_cholesky(A, jitter=jitter)
    Ks = K[:, :ns]
    V = solve_triangular(L, Ks.T, lower=True, check_finite=False)
    w = solve_triangular(L, y, lower=True, check_finite=False)
    m = V.T @ w
    S = K - V.T @ V
    S = 0.5 * (S + S.T)
    log_scale = -0.5 * float(w @ w) - float(np.sum(np.log(np.diag(L)))) - 0.5 * ns * _LOG_2PI
    return m, S, log_scale


def _posterior(m_t, S_t, tau, nu, jitter=0.0):
    """Posterior of N(m_t, S_t) times the Gaussian sites; also returns log|B|."""
    n = m_t.shape[0]
    if not np.any(tau) and not np.any(nu):
        return S_t.copy(), m_t.copy(), 0.0
    sq = np.sqrt(tau)
    B = np.eye(n) + sq[:, None] * S_t * sq[None, :]
    L, _ = robust_cholesky(B, jitter=jitter)
    V = solve_triangular(L, sq[:, None] * S_t, lower=True, check_finite=False)
    Sigma = S_t - V.T @ V
    Sigma = 0.5 * (Sigma + Sigma.T)
    w = m_t + S_t @ nu
    mu = w - V.T @ solve_triangular(L, sq * w, lower=True, check_finite=False)
    logdet_B = 2.0 * float(np.sum(np.log(np.diag(L))))
    return Sigma, mu, logdet_B


def _upper_sites(dataset: HybridDataset) -> np.ndarray:
    """True where the site keeps ``g <= c`` (safe points), False for ``g >= c``."""
    upper = np.zeros(len(dataset), dtype=bool)
    upper[: dataset.n_safe] = True
    return upper


def ep_fit(dataset: HybridDataset, hyper: GPCRHyper, opts: EPOptions | None = None,
           init: EPState | None = None) -> EPState:
    """Run EP on the truncated Gaussian-product posterior."""
    opts = opts or EPOptions()
    m_t, S_t, _ = gaussian_product(dataset, hyper, opts.jitter)
    return _run_ep(dataset, hyper, m_t, S_t, opts, init)


def _sweep_orders(n: int, opts: EPOptions) -> np.ndarray:
    """Site visiting order for every sweep, one random permutation per row."""
    rng = np.random.default_rng(opts.seed)
    return rng.permuted(np.tile(np.arange(n), (opts.max_sweeps, 1)), axis=1)


def _run_ep(dataset, hyper, m_t, S_t, opts: EPOptions, init: EPState | None) -> EPState:
    n = len(dataset)
    c = float(hyper.threshold)
    if dataset.n_safe and not c > dataset.y_max:
        raise ValueError(
            f"threshold {c:g} must exceed the largest safe observation {dataset.y_max:g}"
        )
    upper = _upper_sites(dataset)
    tau = np.zeros(n)
    nu = np.zeros(n)
    if init is not None:
        k = min(n, init.site_precision.shape[0])
        tau[:k] = init.site_precision[:k]
        nu[:k] = init.site_shift[:k]
    sweeps, converged, ok = _compiled.ep_loop(
        m_t, S_t, tau, nu, upper, c, _sweep_orders(n, opts), opts.damping,
        opts.min_site_variance, 1.0 / opts.min_site_variance, opts.tolerance,
        _REFRESH_EVERY, opts.jitter)
    if not ok:
        raise NumericalError("EP posterior lost positive definiteness")
    Sigma, mu, logdet_B = _posterior(m_t, S_t, tau, nu, opts.jitter)
    log_z = _ep_log_evidence(dataset, hyper, m_t, tau, nu, Sigma, mu, logdet_B, upper)
    if not np.isfinite(log_z):
        converged = False
    return EPState(tau, nu, mu, Sigma, log_z, converged, sweeps)


def _ep_log_evidence(dataset, hyper, m_t, tau, nu, Sigma, mu, logdet_B, upper) -> float:
    s = np.diag(Sigma)
    if np.any(s <= 0):
        return -np.inf
    prec_cav = 1.0 / s - tau
    if np.any(prec_cav <= 0):
        return -np.inf
    v = 1.0 / prec_cav
    m = v * (mu / s - nu)
    c = hyper.threshold
    log_zhat = np.empty_like(m)
    sd = np.sqrt(v)
    log_zhat[upper] = log_ndtr((c - m[upper]) / sd[upper])
    log_zhat[~upper] = log_ndtr((m[~upper] - c) / sd[~upper])
    # log of the integral of cavity times unnormalized site
    tv = tau * v
    log_cav_site = -0.5 * np.log1p(tv) + 0.5 * (2.0 * m * nu + nu * nu * v - m * m * tau) / (1.0 + tv)
    b = np.zeros_like(m_t)
    b[: dataset.n_safe] = dataset.safe_values / hyper.noise_variance
    quad = 0.5 * (float((mu - m_t) @ b) + float(mu @ nu))
    return float(np.sum(log_zhat - log_cav_site) + quad - 0.5 * logdet_B)


def fast_log_evidence(dataset: HybridDataset, hyper: GPCRHyper, opts: EPOptions,
                      sites=None, orders=None):
    """Log evidence through the compiled path, for use inside optimizers.

    Agrees with ``log_evidence`` up to rounding.  ``sites`` optionally holds
    ``(tau, nu)`` to start EP from; ``orders`` may pass precomputed sweep orders
    (as produced from ``opts.seed``) when the same dataset is evaluated many times.  Returns ``(value, (tau, nu), status)``
    where ``value`` is ``-inf`` unless EP converged.
    """
    n = len(dataset)
    c = float(hyper.threshold)
    if dataset.n_safe and not c > dataset.y_max:
        return -math.inf, None, _compiled.NON_FINITE
    tau = np.zeros(n)
    nu = np.zeros(n)
    if sites is not None:
        k = min(n, sites[0].shape[0])
        tau[:k] = sites[0][:k]
        nu[:k] = sites[1][:k]
    ls = hyper.kernel.lengthscales_for(dataset.dim).astype(float)
    value, _, status = _compiled.gpcr_log_evidence(
        dataset.inputs, dataset.n_safe, dataset.safe_values, ls, float(hyper.kernel.scale),
        float(hyper.noise_variance), c, tau, nu,
        _sweep_orders(n, opts) if orders is None else orders, opts.damping,
        opts.min_site_variance, 1.0 / opts.min_site_variance, opts.tolerance,
        _REFRESH_EVERY, opts.jitter)
    return value, (tau, nu), status


def fit(dataset: HybridDataset, hyper: GPCRHyper, opts: EPOptions | None = None,
        init: EPState | None = None) -> GPCRModel:
    """Gaussian product, EP, and the factors needed for prediction."""
    opts = opts or EPOptions()
    m_t, S_t, log_scale = gaussian_product(dataset, hyper, opts.jitter)
    ep = _run_ep(dataset, hyper, m_t, S_t, opts, init)
    if not ep.converged:
        warnings.warn(
            f"EP did not converge in {ep.iterations_used} sweeps; using the last state",
            RuntimeWarning,
            stacklevel=2,
        )
    L, sq_w, alpha = _prediction_factors(dataset, hyper, ep, opts.jitter)
    return GPCRModel(dataset, hyper, m_t, S_t, log_scale, ep, L, sq_w, alpha)


def _prediction_factors(dataset, hyper, ep, jitter=0.0):
    # q(g) = N(0, K) times diagonal Gaussian sites with precision w and shift h.
    n = len(dataset)
    w = ep.site_precision.copy()
    h = ep.site_shift.copy()
    ns = dataset.n_safe
    w[:ns] += 1.0 / hyper.noise_variance
    h[:ns] += dataset.safe_values / hyper.noise_variance
    K = gram(dataset.inputs, hyper.kernel)
    sq = np.sqrt(w)
    B = np.eye(n) + sq[:, None] * K * sq[None, :]
    L, _ = robust_cholesky(B, jitter=jitter)
    Kh = K @ h
    z = solve_triangular(L, sq * Kh, lower=True, check_finite=False)
    z = solve_triangular(L.T, z, lower=False, check_finite=False)
    alpha = h - sq * z
    return L, sq, alpha


def predict_many(model: GPCRModel, X) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Ks = kernel_matrix(model.dataset.inputs, X, model.hyper.kernel)
    mean = Ks.T @ model._pred_alpha
    V = solve_triangular(model._pred_chol, model._pred_sqrt_w[:, None] * Ks, lower=True,
                         check_finite=False)
    var = model.hyper.kernel.scale - np.einsum("ij,ij->j", V, V)
    return mean, np.maximum(var, 0.0)


def predict(model: GPCRModel, x) -> UnivariateGaussian:
    mean, var = predict_many(model, np.asarray(x, dtype=float).reshape(1, -1))
    return UnivariateGaussian(float(mean[0]), float(var[0]))


def success_probability(mean, variance, threshold):
    """``Phi((c - mean) / sd)``, with the indicator limit at zero variance."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.asarray(variance, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (threshold - mean) / sd
    p = ndtr(z)
    return np.where(sd > 0, p, (mean <= threshold).astype(float))


def prob_success_many(model: GPCRModel, X) -> np.ndarray:
    mean, var = predict_many(model, X)
    return success_probability(mean, var, model.threshold)


def prob_success(model: GPCRModel, x) -> float:
    return float(prob_success_many(model, np.asarray(x, dtype=float).reshape(1, -1))[0])


def log_evidence(dataset: HybridDataset, hyper: GPCRHyper, opts: EPOptions | None = None) -> float:
    """Approximate ``log p(D | c, theta)``; ``-inf`` when EP fails or does not converge."""
    opts = opts or EPOptions()
    try:
        m_t, S_t, log_scale = gaussian_product(dataset, hyper, opts.jitter)
        ep = _run_ep(dataset, hyper, m_t, S_t, opts, None)
    except NumericalError:
        return -np.inf
    if not ep.converged:
        return -np.inf
    return log_scale + ep.log_evidence
