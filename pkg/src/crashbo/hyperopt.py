"""MAP estimation of GP and GPCR hyperparameters under Beta/Gamma hyperpriors.

Gamma priors use the shape-rate convention.  The GPCR threshold prior is a
Gamma density on ``c - y_max``, so the threshold always sits strictly above
the largest safe constraint observation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from . import _compiled, gp_regression, gpcr
from .core_math import KernelHyper
from .search import simplex_search

_LOGIT_CLIP = 12.0
_LOG_CLIP = 12.0
_SOFTPLUS_MIN = -30.0


@dataclass(frozen=True)
class BetaPrior:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("Beta parameters must be positive")

    def logpdf(self, x) -> float:
        if not 0.0 < x < 1.0:
            return -math.inf
        a, b = self.a, self.b
        log_norm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        return log_norm + (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x)

    @property
    def mode(self) -> float:
        if self.a > 1 and self.b > 1:
            return (self.a - 1.0) / (self.a + self.b - 2.0)
        return self.a / (self.a + self.b)

    def sample(self, rng, size=None):
        return rng.beta(self.a, self.b, size=size)


@dataclass(frozen=True)
class GammaPrior:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Gamma parameters must be positive")

    def logpdf(self, x) -> float:
        if not x > 0.0:
            return -math.inf
        k, rate = self.shape, self.rate
        return k * math.log(rate) - math.lgamma(k) + (k - 1.0) * math.log(x) - rate * x

    @property
    def mode(self) -> float:
        return max(self.shape - 1.0, 0.0) / self.rate

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size=size)


@dataclass(frozen=True)
class PriorSpec:
    """Hyperpriors for one model; ``threshold_prior`` is only used by GPCR."""

    lengthscale_prior: BetaPrior = BetaPrior(1.5, 15.0)
    scale_prior: GammaPrior = GammaPrior(2.0, 1.0)
    threshold_prior: GammaPrior | None = None
    noise_variance: float = 1e-4
    ard: bool = False
    # Origin of the threshold prior when no safe observation exists yet.
    threshold_origin: float = 0.0

    def __post_init__(self):
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be positive")


@dataclass(frozen=True)
class MapOptions:
    restarts: int = 8
    max_evals: int = 200
    initial_step: float = 1.0
    xtol: float = 1e-3
    ftol: float = 1e-4
    seed: int = 0
    ep: gpcr.EPOptions = field(default_factory=gpcr.EPOptions)
    warm_start_ep: bool = True


@dataclass(frozen=True)
class MapResult:
    hyper: KernelHyper | gpcr.GPCRHyper
    objective_value: float
    restarts_used: int
    fallback: bool = False


def _lengthscales_ok(ls) -> bool:
    ls = np.atleast_1d(ls)
    return bool(np.all((ls > 0) & (ls < 1)))


def log_prior(hyper, priors: PriorSpec, y_max: float | None = None) -> float:
    """Sum of hyperprior log densities; ``-inf`` outside the supports.

    ``hyper`` may be a :class:`KernelHyper` or a :class:`gpcr.GPCRHyper`; for the
    latter the threshold term needs ``y_max`` (``threshold_origin`` when None).
    """
    kernel = hyper.kernel if isinstance(hyper, gpcr.GPCRHyper) else hyper
    if not _lengthscales_ok(kernel.lengthscale):
        return -math.inf
    lp = sum(priors.lengthscale_prior.logpdf(float(l)) for l in kernel.lengthscale)
    lp += priors.scale_prior.logpdf(kernel.scale)
    if isinstance(hyper, gpcr.GPCRHyper):
        if priors.threshold_prior is None:
            raise ValueError("GPCR hyperparameters need a threshold prior")
        origin = priors.threshold_origin if y_max is None else y_max
        offset = hyper.threshold - origin
        if not offset > 0:
            return -math.inf
        lp += priors.threshold_prior.logpdf(offset)
    return float(lp)


def _n_lengthscales(priors: PriorSpec, dim: int) -> int:
    return dim if priors.ard else 1


def _softplus(u):
    return np.logaddexp(0.0, u)


def _softplus_inv(y):
    y = float(y)
    return y + math.log(-math.expm1(-y)) if y < 30 else y


def _decode_kernel(u, n_ls) -> KernelHyper:
    ls = expit(np.clip(u[:n_ls], -_LOGIT_CLIP, _LOGIT_CLIP))
    scale = math.exp(float(np.clip(u[n_ls], -_LOG_CLIP, _LOG_CLIP)))
    return KernelHyper(ls, scale)


def _encode_kernel(ls, scale, n_ls) -> np.ndarray:
    ls = np.broadcast_to(np.asarray(ls, dtype=float), (n_ls,))
    return np.concatenate([logit(ls), [math.log(scale)]])


def _prior_mode_kernel(priors: PriorSpec, n_ls: int) -> KernelHyper:
    scale = priors.scale_prior.mode
    if not scale > 0:
        scale = priors.scale_prior.mean
    return KernelHyper(np.full(n_ls, priors.lengthscale_prior.mode), scale)


def _start_points(priors: PriorSpec, n_ls: int, opts: MapOptions, rng, with_threshold: bool):
    """Restart 0 at the prior modes, the others drawn from the priors."""
    starts = []
    for r in range(opts.restarts):
        if r == 0:
            ls = np.full(n_ls, priors.lengthscale_prior.mode)
            scale = _prior_mode_kernel(priors, n_ls).scale
            off = priors.threshold_prior.mode if with_threshold else None
            if with_threshold and not off > 0:
                off = priors.threshold_prior.mean
        else:
            ls = np.clip(priors.lengthscale_prior.sample(rng, n_ls), 1e-4, 1 - 1e-4)
            scale = max(float(priors.scale_prior.sample(rng)), 1e-4)
            off = max(float(priors.threshold_prior.sample(rng)), 1e-6) if with_threshold else None
        u = _encode_kernel(ls, scale, n_ls)
        if with_threshold:
            u = np.append(u, _softplus_inv(off))
        starts.append(u)
    return starts


def _multistart(neg_objective, starts, opts: MapOptions):
    best_u, best_f, best_r = None, math.inf, -1
    for r, u0 in enumerate(starts):
        u, f, _ = simplex_search(neg_objective, u0, step=opts.initial_step,
                                 max_evals=opts.max_evals, xtol=opts.xtol, ftol=opts.ftol)
        # strict '<' keeps the lowest restart index on ties
        if f < best_f:
            best_u, best_f, best_r = u, f, r
    return best_u, best_f


def map_fit_objective(dataset: gp_regression.GPDataset, priors: PriorSpec,
                      opts: MapOptions | None = None) -> MapResult:
    """MAP (lengthscale, scale) for the objective GP at fixed noise."""
    opts = opts or MapOptions()
    n_ls = _n_lengthscales(priors, dataset.dim)
    if len(dataset) == 0:
        k = _prior_mode_kernel(priors, n_ls)
        return MapResult(k, log_prior(k, priors), 0)
    rng = np.random.default_rng(opts.seed)

    X, y = dataset.inputs, dataset.values
    dim = dataset.dim

    def neg_objective(u):
        k = _decode_kernel(u, n_ls)
        lp = log_prior(k, priors)
        if not np.isfinite(lp):
            return math.inf
        lml = _compiled.gp_log_marginal(X, y, k.lengthscales_for(dim), float(k.scale),
                                        priors.noise_variance, 0.0)
        val = lml + lp
        return -val if np.isfinite(val) else math.inf

    starts = _start_points(priors, n_ls, opts, rng, with_threshold=False)
    best_u, best_f = _multistart(neg_objective, starts, opts)
    if best_u is None:
        warnings.warn("all MAP restarts failed; falling back to prior modes", RuntimeWarning,
                      stacklevel=2)
        k = _prior_mode_kernel(priors, n_ls)
        return MapResult(k, -math.inf, opts.restarts, fallback=True)
    return MapResult(_decode_kernel(best_u, n_ls), -best_f, opts.restarts)


def map_fit_gpcr(dataset: gpcr.HybridDataset, priors: PriorSpec,
                 opts: MapOptions | None = None) -> MapResult:
    """MAP (lengthscale, scale, threshold) for GPCR with ``c > y_max`` by construction."""
    opts = opts or MapOptions()
    if priors.threshold_prior is None:
        raise ValueError("GPCR MAP needs a threshold prior")
    if len(dataset) == 0:
        raise ValueError("GPCR MAP needs at least one observation")
    n_ls = _n_lengthscales(priors, dataset.dim)
    y_max = dataset.y_max
    origin = priors.threshold_origin if y_max is None else y_max
    rng = np.random.default_rng(opts.seed)
    warm = {"sites": None}
    orders = gpcr._sweep_orders(len(dataset), opts.ep)

    def decode(u):
        k = _decode_kernel(u, n_ls)
        offset = float(_softplus(max(float(u[-1]), _SOFTPLUS_MIN)))
        return gpcr.GPCRHyper(k, priors.noise_variance, origin + offset)

    def neg_objective(u):
        hyper = decode(u)
        if not hyper.threshold > origin:
            return math.inf
        lp = log_prior(hyper, priors, y_max)
        if not np.isfinite(lp):
            return math.inf
        value, sites, status = gpcr.fast_log_evidence(dataset, hyper, opts.ep, warm["sites"],
                                                        orders)
        if status == _compiled.NOT_CONVERGED and warm["sites"] is not None:
            value, sites, status = gpcr.fast_log_evidence(dataset, hyper, opts.ep,
                                                            orders=orders)
        if status != _compiled.OK:
            return math.inf
        if opts.warm_start_ep:
            warm["sites"] = sites
        val = value + lp
        return -val if np.isfinite(val) else math.inf

    starts = _start_points(priors, n_ls, opts, rng, with_threshold=True)
    best_u, best_f = _multistart(neg_objective, starts, opts)
    if best_u is None:
        warnings.warn("all GPCR MAP candidates rejected; falling back to prior modes",
                      RuntimeWarning, stacklevel=2)
        k = _prior_mode_kernel(priors, n_ls)
        hyper = gpcr.GPCRHyper(k, priors.noise_variance, origin + priors.threshold_prior.mean)
        return MapResult(hyper, -math.inf, opts.restarts, fallback=True)
    return MapResult(decode(best_u), -best_f, opts.restarts)
