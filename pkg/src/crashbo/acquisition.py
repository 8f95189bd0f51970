"""Expected improvement, its constrained variant, and the inner optimizers."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erfcx, log_ndtr, ndtr
from scipy.stats import qmc

from . import gpcr
from .core_math import UnivariateGaussian
from .gp_regression import GPModel
from .search import pattern_search

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_LOG_INV_SQRT_2PI = math.log(_INV_SQRT_2PI)
# below this z the direct EI formula starts to lose digits to cancellation
_LOG_EI_SWITCH = -5.0
_SQRT_PI_OVER_2 = math.sqrt(math.pi / 2.0)


@dataclass(frozen=True)
class AcquisitionContext:
    objective_model: GPModel
    constraint_models: Sequence[gpcr.GPCRModel] = ()
    eta_cons: float | None = None
    delta: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        object.__setattr__(self, "constraint_models", tuple(self.constraint_models))


@dataclass(frozen=True)
class AcquisitionOptions:
    probes_per_dim: int = 2000
    n_refine: int = 10
    refine_step: float = 0.05
    refine_min_step: float = 1e-4
    refine_evals: int = 200


@dataclass(frozen=True)
class BestGuess:
    x: np.ndarray
    mean: float
    probability: float
    flagged: bool


def expected_improvement_array(mean, variance, eta):
    """Closed-form ``E[max(eta - f, 0)]`` for ``f ~ N(mean, variance)``."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    gap = eta - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, gap / sd, 0.0)
    ei = gap * ndtr(z) + sd * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return np.where(sd > 0, np.maximum(ei, 0.0), np.maximum(gap, 0.0))


def expected_improvement(pred: UnivariateGaussian, eta: float) -> float:
    return float(expected_improvement_array(pred.mean, pred.variance, eta))


def log_expected_improvement_array(mean, variance, eta):
    """``log EI`` without underflow when ``eta`` sits many deviations below the mean."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    gap = eta - mean
    out = np.full(mean.shape, -np.inf)
    pos = sd > 0
    z = np.where(pos, gap / np.where(pos, sd, 1.0), 0.0)
    tail = z < _LOG_EI_SWITCH
    # lower tail: EI = sd * phi(z) * (1 + z * Phi(z) / phi(z)), Phi/phi through erfcx
    zt = np.where(tail, z, _LOG_EI_SWITCH)
    h = 1.0 + zt * _SQRT_PI_OVER_2 * erfcx(-zt / math.sqrt(2.0))
    # the two terms cancel to ~1/z^2; switch to the Mills-ratio series in the far tail
    u = 1.0 / (zt * zt)
    h = np.where(zt < -30.0, u * (1.0 - 3.0 * u * (1.0 - 5.0 * u * (1.0 - 7.0 * u))), h)
    h = np.maximum(h, 1e-300)
    with np.errstate(divide="ignore"):
        log_tail = np.log(np.where(pos, sd, 1.0)) + _LOG_INV_SQRT_2PI - 0.5 * zt * zt + np.log(h)
        log_direct = np.log(expected_improvement_array(mean, variance, eta))
        out = np.where(pos, np.where(tail, log_tail, log_direct), out)
        det = ~pos & (gap > 0)
        out = np.where(det, np.log(np.where(det, gap, 1.0)), out)
    return out


def log_gamma_values(ctx: AcquisitionContext, X) -> np.ndarray:
    """Log of the joint success probability over all constraint models."""
    X = np.atleast_2d(X)
    total = np.zeros(X.shape[0])
    for model in ctx.constraint_models:
        mean, var = model.predict_many(X)
        sd = np.sqrt(var)
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = np.where(sd > 0, log_ndtr((model.threshold - mean) / np.where(sd > 0, sd, 1.0)),
                          np.where(mean <= model.threshold, 0.0, -np.inf))
        total = total + lp
    return total


def gamma_values(ctx: AcquisitionContext, X) -> np.ndarray:
    X = np.atleast_2d(X)
    out = np.ones(X.shape[0])
    for model in ctx.constraint_models:
        out = out * model.prob_success_many(X)
    return out


def eic_values(ctx: AcquisitionContext, X) -> np.ndarray:
    X = np.atleast_2d(X)
    gam = gamma_values(ctx, X)
    if ctx.eta_cons is None:
        return gam
    mean, var = ctx.objective_model.predict_many(X)
    return expected_improvement_array(mean, var, ctx.eta_cons) * gam


def eic_value(ctx: AcquisitionContext, x) -> float:
    return float(eic_values(ctx, np.asarray(x, dtype=float).reshape(1, -1))[0])


def log_eic_values(ctx: AcquisitionContext, X) -> np.ndarray:
    X = np.atleast_2d(X)
    lg = log_gamma_values(ctx, X)
    if ctx.eta_cons is None:
        return lg
    mean, var = ctx.objective_model.predict_many(X)
    return log_expected_improvement_array(mean, var, ctx.eta_cons) + lg


def probe_points(dim: int, n: int, seed) -> np.ndarray:
    with warnings.catch_warnings():
        # scrambled Sobol warns when n is not a power of two
        warnings.simplefilter("ignore", UserWarning)
        return qmc.Sobol(d=dim, scramble=True, seed=seed).random(n)


def _top_indices(values, k):
    order = np.argsort(-values, kind="stable")
    return order[:k]


def maximize(ctx: AcquisitionContext, dim: int, seed, opts: AcquisitionOptions | None = None):
    """Approximate argmax of the constrained EI over ``[0, 1]**dim``.

    The search runs on ``log EIC`` so that deep-tail values still rank
    correctly.  If every probe evaluates to zero, the probe with the largest
    success probability is returned (lowest index on ties).
    """
    opts = opts or AcquisitionOptions()
    P = probe_points(dim, opts.probes_per_dim * dim, seed)
    vals = log_eic_values(ctx, P)
    if not np.any(np.isfinite(vals)):
        lg = log_gamma_values(ctx, P)
        return P[int(np.argmax(lg))].copy()
    best_x = P[int(np.argmax(vals))].copy()
    best_v = float(np.max(vals))

    def neg(Q):
        v = log_eic_values(ctx, Q)
        return np.where(np.isfinite(v), -v, np.inf)

    for i in _top_indices(vals, opts.n_refine):
        if not np.isfinite(vals[i]):
            continue
        x, f, _ = pattern_search(neg, P[i], step=opts.refine_step, max_evals=opts.refine_evals,
                                 min_step=opts.refine_min_step, lower=0.0, upper=1.0,
                                 f0=-vals[i])
        if -f > best_v:
            best_v, best_x = -f, x
    return np.clip(best_x, 0.0, 1.0)


def best_guess(ctx: AcquisitionContext, dim: int, seed,
               opts: AcquisitionOptions | None = None) -> BestGuess:
    """Lowest posterior objective mean among points with success probability >= 1 - delta."""
    opts = opts or AcquisitionOptions()
    P = probe_points(dim, opts.probes_per_dim * dim, seed)
    level = 1.0 - ctx.delta
    gam = gamma_values(ctx, P)
    mean, _ = ctx.objective_model.predict_many(P)
    feasible = gam >= level
    if not np.any(feasible):
        k = int(np.argmax(gam))
        return BestGuess(P[k].copy(), float(mean[k]), float(gam[k]), True)

    def penalized(Q):
        m, _ = ctx.objective_model.predict_many(Q)
        return np.where(gamma_values(ctx, Q) >= level, m, np.inf)

    idx = np.flatnonzero(feasible)
    # ascending mean, ties broken by larger success probability
    order = idx[np.lexsort((-gam[idx], mean[idx]))]
    best_x, best_m = P[order[0]].copy(), float(mean[order[0]])
    for i in order[: opts.n_refine]:
        x, f, _ = pattern_search(penalized, P[i], step=opts.refine_step,
                                 max_evals=opts.refine_evals, min_step=opts.refine_min_step,
                                 lower=0.0, upper=1.0, f0=mean[i])
        if f < best_m:
            best_m, best_x = f, x
    best_x = np.clip(best_x, 0.0, 1.0)
    return BestGuess(best_x, best_m, float(gamma_values(ctx, best_x)[0]), False)
