"""Matérn-5/2 kernel and tail-safe Gaussian special functions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import erfcx, log_ndtr, ndtr

SQRT5 = math.sqrt(5.0)
SQRT2 = math.sqrt(2.0)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

DEFAULT_JITTER = 1e-8
MAX_JITTER = 1e-4

# Beyond this |z| the variance formula 1 - r(z + r) cancels catastrophically.
_TAIL_SWITCH = 30.0
# Asymptotic expansion of var/v in powers of 1/z^2 for truncation deep in the tail.
_TAIL_VAR_COEFFS = (1.0, -6.0, 50.0, -518.0, 6354.0, -89782.0, 1435330.0)


class NumericalError(np.linalg.LinAlgError):
    """Raised when a covariance matrix cannot be factorized even with jitter."""


@dataclass(frozen=True)
class KernelHyper:
    """Matérn-5/2 hyperparameters in unit-hypercube coordinates.

    ``lengthscale`` of length one is shared by all input dimensions.
    ``scale`` is the output variance, so ``k(x, x) == scale``.
    """

    lengthscale: np.ndarray
    scale: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=float)).copy()
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("lengthscale must be a scalar or a 1D vector")
        if not np.all(ls > 0):
            raise ValueError(f"lengthscales must be positive, got {ls}")
        if not self.scale > 0:
            raise ValueError(f"kernel scale must be positive, got {self.scale}")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscale", ls)
        object.__setattr__(self, "scale", float(self.scale))

    def lengthscales_for(self, dim: int) -> np.ndarray:
        if self.lengthscale.size == 1:
            return np.full(dim, self.lengthscale[0])
        if self.lengthscale.size != dim:
            raise ValueError(
                f"lengthscale has {self.lengthscale.size} entries but inputs have dimension {dim}"
            )
        return self.lengthscale


@dataclass(frozen=True)
class UnivariateGaussian:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance >= 0:
            raise ValueError(f"variance must be non-negative, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected points with shape (n, D), got {X.shape}")
    return X


def kernel_matrix(X1, X2, hyper: KernelHyper) -> np.ndarray:
    """Cross-covariance matrix ``k(X1[i], X2[j])`` for point sets of shape (n, D)."""
    X1 = _as_points(X1)
    X2 = _as_points(X2)
    if X1.shape[1] != X2.shape[1]:
        raise ValueError(f"dimension mismatch: {X1.shape[1]} vs {X2.shape[1]}")
    ls = hyper.lengthscales_for(X1.shape[1])
    A = X1 / ls
    B = X2 / ls
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    r = np.sqrt(np.maximum(sq, 0.0))
    sr = SQRT5 * r
    return hyper.scale * (1.0 + sr + sr * sr / 3.0) * np.exp(-sr)


def matern52(x, x_prime, hyper: KernelHyper) -> float:
    """Matérn-5/2 covariance between two single points."""
    x = np.asarray(x, dtype=float).ravel()
    x_prime = np.asarray(x_prime, dtype=float).ravel()
    if x.shape != x_prime.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_prime.shape}")
    ls = hyper.lengthscales_for(x.size)
    r = math.sqrt(float(np.sum(((x - x_prime) / ls) ** 2)))
    sr = SQRT5 * r
    return hyper.scale * (1.0 + sr + sr * sr / 3.0) * math.exp(-sr)


def gram(X, hyper: KernelHyper, jitter: float = 0.0) -> np.ndarray:
    X = _as_points(X)
    if X.shape[0] == 0:
        raise ValueError("gram matrix needs at least one point")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    K = kernel_matrix(X, X, hyper)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] = hyper.scale + jitter
    return K


def robust_cholesky(A: np.ndarray, jitter: float = 0.0,
                    max_jitter: float = MAX_JITTER) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``A + j * mean(diag A) * I``.

    The first attempt uses ``jitter``; on failure ``j`` restarts at
    ``DEFAULT_JITTER`` (or ``10 * jitter``) and grows tenfold up to
    ``max_jitter``.  Returns the factor and the relative jitter used.
    """
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    scale = max(float(np.mean(np.diag(A))), 1e-300)
    j = jitter
    eye = np.eye(n)
    while True:
        try:
            M = A if j == 0.0 else A + (j * scale) * eye
            L = np.linalg.cholesky(M)
            if not np.isfinite(L[-1, -1]):
                raise np.linalg.LinAlgError("non-finite Cholesky factor")
            return L, j
        except np.linalg.LinAlgError:
            if j >= max_jitter:
                raise NumericalError(
                    f"Cholesky failed for a {n}x{n} matrix even with relative jitter {j:g}"
                ) from None
            j = min(max(10.0 * j, DEFAULT_JITTER), max_jitter)


def log_normal_cdf(z):
    """``log Phi(z)``, accurate in both tails."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore"):
        # log1p keeps relative accuracy where Phi(z) rounds to 1
        out = np.where(z > 5.0, np.log1p(-ndtr(-z)), log_ndtr(z))
    return out if out.ndim else float(out)


def _mills_inverse(z):
    """``phi(z) / Phi(z)`` evaluated through the scaled complementary error function."""
    return SQRT_2_OVER_PI / erfcx(-np.asarray(z, dtype=float) / SQRT2)


def _variance_factor(z: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Truncated-variance ratio ``1 - r (z + r)`` for an upper bound at ``z``."""
    shape = np.shape(z)
    z = np.atleast_1d(z)
    out = np.atleast_1d(1.0 - r * (z + r))
    deep = z < -_TAIL_SWITCH
    if np.any(deep):
        e2 = 1.0 / (z[deep] ** 2)
        acc = np.zeros_like(e2)
        for coef in reversed(_TAIL_VAR_COEFFS):
            acc = acc * e2 + coef
        out[deep] = acc * e2
    return np.clip(out, 0.0, 1.0).reshape(shape)


def truncated_moments_array(mean, variance, bound, side: str = "below"):
    """Vectorized :func:`truncated_moments`; returns ``(logZ, mean, variance)`` arrays."""
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    bound = np.asarray(bound, dtype=float)
    mean, variance, bound = np.broadcast_arrays(mean, variance, bound)
    if np.any(variance <= 0):
        raise ValueError("cavity variance must be positive")
    if side == "below":
        sign = 1.0
    elif side == "above":
        sign = -1.0
    else:
        raise ValueError(f"side must be 'below' or 'above', got {side!r}")
    # Reflect "g >= b" onto "-g <= -b" so only the upper-bound case is coded.
    m = sign * mean
    b = sign * bound
    sd = np.sqrt(variance)
    with np.errstate(invalid="ignore", over="ignore"):
        z = (b - m) / sd
    z = np.where(np.isnan(z), np.inf, z)
    logZ = log_normal_cdf(z)
    zf = np.where(np.isfinite(z), z, 0.0)
    r = np.where(np.isfinite(z), _mills_inverse(zf), 0.0)
    r = np.where(z == np.inf, 0.0, r)
    new_mean = m - sd * r
    factor = np.where(np.isfinite(z), _variance_factor(zf, r), 1.0)
    new_var = variance * factor
    return logZ, sign * new_mean, new_var


def truncated_moments(cavity: UnivariateGaussian, bound: float, side: str = "below"):
    """Log-mass, mean and variance of a Gaussian truncated at ``bound``.

    ``side="below"`` keeps ``g <= bound``; ``side="above"`` keeps ``g >= bound``.
    """
    if not cavity.variance > 0:
        raise ValueError("cavity variance must be positive")
    logZ, m, v = truncated_moments_array(cavity.mean, cavity.variance, bound, side)
    return float(logZ), float(m), float(v)


def cho_solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return cho_solve((L, True), b, check_finite=False)


__all__ = [
    "KernelHyper",
    "NumericalError",
    "UnivariateGaussian",
    "cho_solve_lower",
    "gram",
    "kernel_matrix",
    "log_normal_cdf",
    "matern52",
    "robust_cholesky",
    "truncated_moments",
    "truncated_moments_array",
]
