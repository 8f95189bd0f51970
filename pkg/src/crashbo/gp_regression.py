"""Zero-mean GP regression used for the objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .core_math import (
    KernelHyper,
    NumericalError,
    UnivariateGaussian,
    gram,
    kernel_matrix,
    robust_cholesky,
)


@dataclass(frozen=True)
class GPDataset:
    inputs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.values, dtype=float).ravel()
        if X.size == 0:
            X = X.reshape(0, X.shape[-1] if X.ndim == 2 else 0)
        elif X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} values")
        if X.size and (X.min() < 0.0 or X.max() > 1.0):
            raise ValueError("inputs must lie inside the unit hypercube")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "values", y)

    @classmethod
    def empty(cls, dim: int) -> "GPDataset":
        return cls(np.zeros((0, dim)), np.zeros(0))

    def __len__(self):
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class GPModel:
    dataset: GPDataset
    hyper: KernelHyper
    noise_variance: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    def predict(self, x) -> UnivariateGaussian:
        return predict(self, x)

    def predict_many(self, X):
        return predict_many(self, X)


def fit(dataset: GPDataset, hyper: KernelHyper, noise_variance: float,
        jitter: float = 0.0) -> GPModel:
    """Factorize ``K + noise I`` for the given data.

    An empty dataset yields the prior model.  ``jitter`` is the relative
    diagonal inflation tried first; it is escalated automatically on failure.
    """
    if not noise_variance > 0:
        raise ValueError("noise_variance must be positive")
    n = len(dataset)
    if n == 0:
        return GPModel(dataset, hyper, float(noise_variance), np.zeros((0, 0)), np.zeros(0))
    K = gram(dataset.inputs, hyper) + noise_variance * np.eye(n)
    try:
        L, _ = robust_cholesky(K, jitter=jitter)
    except NumericalError as exc:
        raise NumericalError(
            f"{exc} (n={n}, D={dataset.dim}, lengthscale={hyper.lengthscale}, "
            f"scale={hyper.scale:g}, noise={noise_variance:g})"
        ) from None
    tmp = solve_triangular(L, dataset.values, lower=True, check_finite=False)
    alpha = solve_triangular(L.T, tmp, lower=False, check_finite=False)
    return GPModel(dataset, hyper, float(noise_variance), L, alpha)


def predict_many(model: GPModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Predictive means and variances at the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    prior_var = np.full(X.shape[0], model.hyper.scale)
    if len(model.dataset) == 0:
        return np.zeros(X.shape[0]), prior_var
    Ks = kernel_matrix(model.dataset.inputs, X, model.hyper)
    mean = Ks.T @ model.alpha
    V = solve_triangular(model.chol, Ks, lower=True, check_finite=False)
    var = prior_var - np.einsum("ij,ij->j", V, V)
    return mean, np.maximum(var, 0.0)


def predict(model: GPModel, x) -> UnivariateGaussian:
    mean, var = predict_many(model, np.asarray(x, dtype=float).reshape(1, -1))
    return UnivariateGaussian(float(mean[0]), float(var[0]))


def log_marginal_likelihood(model: GPModel) -> float:
    n = len(model.dataset)
    if n == 0:
        raise ValueError("log marginal likelihood needs at least one observation")
    quad = float(model.dataset.values @ model.alpha)
    logdet = 2.0 * float(np.sum(np.log(np.diag(model.chol))))
    return -0.5 * quad - 0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi)
