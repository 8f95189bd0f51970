"""Optimization loops for EIC² and the penalty baselines, plus regret bookkeeping.

Seeds are counter based: repetition ``r`` of master seed ``s`` uses
``SeedSequence([s, r])``, and every stochastic stage inside iteration ``n`` is
seeded from ``SeedSequence([rep_seed, n, stage])``.  Any repetition can thus be
re-run in isolation and two runs with equal configs give bit-identical traces.
"""

from __future__ import annotations

import dataclasses
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gp_regression, gpcr, hyperopt
from .acquisition import AcquisitionContext, best_guess, maximize
from .baselines import PenaltyStrategy, fit_penalized_model, penalize
from .benchmarks import BenchmarkSpec, HybridObservation, crash_oracle, get_benchmark, sample_safe_start
from .config import ExperimentConfig
from .core_math import NumericalError
from .gp_regression import GPDataset
from .gpcr import HybridDataset

WORKERS_ENV = "CRASHBO_WORKERS"
RETRY_JITTER = 1e-6

_STAGE_ORACLE = 0
_STAGE_OBJECTIVE_MAP = 1
_STAGE_CONSTRAINT_MAP = 2
_STAGE_ACQUISITION = 3
_STAGE_BEST_GUESS = 4


class InvariantViolation(AssertionError):
    pass


def repetition_seed(master: int, repetition: int) -> int:
    return int(np.random.SeedSequence([master, repetition]).generate_state(1)[0])


def _stage_seed(rep_seed: int, iteration: int, stage: int) -> int:
    return int(np.random.SeedSequence([rep_seed, iteration, stage]).generate_state(1)[0])


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    x: np.ndarray
    label: int
    y_f: float | None
    y_g: float | None
    eta_cons: float | None
    c_hat: float | None
    regret: float | None
    regret_best: float | None


@dataclass
class ExperimentTrace:
    benchmark: str
    method: str
    repetition: int
    seed: int
    dim: int
    records: list = field(default_factory=list)
    x_best: np.ndarray | None = None
    best_guess_flagged: bool = False
    best_guess_regret: float | None = None
    c_hat: float | None = None
    wall_clock: float = 0.0
    failed: bool = False
    error: str | None = None
    penalty_flagged: bool = False

    @property
    def n_failures(self) -> int:
        return sum(1 for r in self.records if r.label == 0)

    @property
    def final_regret(self) -> float | None:
        """Best-so-far simple regret after the last iteration."""
        return self.records[-1].regret_best if self.records else None


def simple_regret(trace: ExperimentTrace, f_min: float):
    """Instantaneous regret (NaN at failures) and its running minimum."""
    inst = np.array([r.y_f - f_min if r.label == 1 else np.nan for r in trace.records])
    best = np.full(inst.shape, np.nan)
    current = np.inf
    for i, v in enumerate(inst):
        if not np.isnan(v):
            current = min(current, v)
        if np.isfinite(current):
            best[i] = current
    return inst, best


def _record(n, x, obs: HybridObservation, eta, c_hat, f_min, prev_best):
    regret = obs.objective_value - f_min if obs.success else None
    best = prev_best
    if regret is not None:
        best = regret if best is None else min(best, regret)
    return IterationRecord(n, np.array(x, dtype=float), obs.label, obs.objective_value,
                           obs.constraint_value, eta, c_hat, regret, best)


def _check_start(spec: BenchmarkSpec, x):
    if not spec.is_safe(x):
        raise InvariantViolation("initial point violates the constraint")


def _check_coupled(obj: GPDataset, hyb: HybridDataset, n_success: int):
    if len(obj) != n_success or hyb.n_safe != n_success:
        raise InvariantViolation("objective and constraint data hold different success counts")
    if not np.array_equal(obj.inputs, hyb.safe_inputs):
        raise InvariantViolation("objective and constraint safe inputs differ")


def _check_eta(prev, eta):
    if prev is not None and (eta is None or eta > prev):
        raise InvariantViolation(f"best constrained observation increased from {prev} to {eta}")


def _check_threshold(c_hat, hyb: HybridDataset):
    if hyb.y_max is not None and not c_hat > hyb.y_max:
        raise InvariantViolation(f"threshold {c_hat} not above largest safe value {hyb.y_max}")


def _eic2_models(cfg: ExperimentConfig, obj: GPDataset, hyb: HybridDataset, rep_seed, n,
                 jitter):
    ep = dataclasses.replace(cfg.ep, jitter=max(cfg.ep.jitter, jitter))
    obj_opts = dataclasses.replace(cfg.map, ep=ep,
                                   seed=_stage_seed(rep_seed, n, _STAGE_OBJECTIVE_MAP))
    con_opts = dataclasses.replace(cfg.map, ep=ep,
                                   seed=_stage_seed(rep_seed, n, _STAGE_CONSTRAINT_MAP))
    obj_res = hyperopt.map_fit_objective(obj, cfg.objective_priors, obj_opts)
    obj_model = gp_regression.fit(obj, obj_res.hyper, cfg.objective_priors.noise_variance,
                                  jitter=jitter)
    con_res = hyperopt.map_fit_gpcr(hyb, cfg.constraint_priors, con_opts)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        con_model = gpcr.fit(hyb, con_res.hyper, ep)
    return obj_model, con_model


def run_eic2(config: ExperimentConfig, repetition: int = 0,
             spec: BenchmarkSpec | None = None) -> ExperimentTrace:
    """One repetition of the EIC² loop on a simulated benchmark."""
    cfg = config
    spec = spec or get_benchmark(cfg.benchmark, noisy=cfg.noisy, noise_std=cfg.noise_std)
    rep_seed = repetition_seed(cfg.seed, repetition)
    rng = np.random.default_rng(np.random.SeedSequence([rep_seed, _STAGE_ORACLE]))
    trace = ExperimentTrace(spec.name, "eic2", repetition, rep_seed, spec.dim)
    t0 = time.perf_counter()

    x = sample_safe_start(spec, rng)
    _check_start(spec, x)
    obj = GPDataset.empty(spec.dim)
    hyb = HybridDataset.empty(spec.dim)
    eta_prev = None
    best_prev = None
    ctx = None
    for n in range(1, cfg.iterations + 1):
        obs = crash_oracle(spec, x, rng)
        if obs.success:
            obj = GPDataset(np.vstack([obj.inputs, x]), np.append(obj.values, obs.objective_value))
            hyb = hyb.with_safe(x, obs.constraint_value)
        else:
            hyb = hyb.with_failure(x)
        _check_coupled(obj, hyb, sum(r.label for r in trace.records) + obs.label)

        models = None
        for jitter in (0.0, RETRY_JITTER):
            try:
                models = _eic2_models(cfg, obj, hyb, rep_seed, n, jitter)
                break
            except (NumericalError, np.linalg.LinAlgError) as exc:
                trace.error = f"iteration {n}: {exc}"
        if models is None:
            trace.records.append(_record(n, x, obs, eta_prev, None, spec.f_min, best_prev))
            trace.failed = True
            break
        obj_model, con_model = models
        eta = float(np.min(obj.values)) if len(obj) else None
        _check_eta(eta_prev, eta)
        c_hat = con_model.threshold
        _check_threshold(c_hat, hyb)
        ctx = AcquisitionContext(obj_model, (con_model,), eta, cfg.delta)
        rec = _record(n, x, obs, eta, c_hat, spec.f_min, best_prev)
        trace.records.append(rec)
        eta_prev, best_prev = eta, rec.regret_best
        trace.c_hat = c_hat
        if n < cfg.iterations:
            x = maximize(ctx, spec.dim, _stage_seed(rep_seed, n, _STAGE_ACQUISITION),
                         cfg.acquisition)

    if ctx is not None:
        _finish(trace, ctx, spec, rep_seed, cfg)
    trace.wall_clock = time.perf_counter() - t0
    return trace


def _finish(trace, ctx, spec, rep_seed, cfg):
    guess = best_guess(ctx, spec.dim, _stage_seed(rep_seed, cfg.iterations, _STAGE_BEST_GUESS),
                       cfg.acquisition)
    trace.x_best = guess.x
    trace.best_guess_flagged = guess.flagged
    if math.isfinite(spec.f_min):
        trace.best_guess_regret = float(spec.objective(guess.x)) - spec.f_min


def run_baseline(config: ExperimentConfig, repetition: int = 0,
                 spec: BenchmarkSpec | None = None) -> ExperimentTrace:
    """One repetition of plain EI on failure-penalized data."""
    cfg = config
    spec = spec or get_benchmark(cfg.benchmark, noisy=cfg.noisy, noise_std=cfg.noise_std)
    strategy = PenaltyStrategy(cfg.method, spec.hc_bound if math.isfinite(spec.hc_bound) else None)
    rep_seed = repetition_seed(cfg.seed, repetition)
    rng = np.random.default_rng(np.random.SeedSequence([rep_seed, _STAGE_ORACLE]))
    trace = ExperimentTrace(spec.name, cfg.method, repetition, rep_seed, spec.dim)
    t0 = time.perf_counter()

    x = sample_safe_start(spec, rng)
    _check_start(spec, x)
    inputs, observations = [], []
    eta_prev = None
    best_prev = None
    ctx = None
    for n in range(1, cfg.iterations + 1):
        obs = crash_oracle(spec, x, rng)
        inputs.append(np.array(x, dtype=float))
        observations.append(obs)
        penalized, flagged = penalize(inputs, observations, strategy)
        trace.penalty_flagged |= flagged
        if len(penalized) != n:
            raise InvariantViolation("penalized dataset length differs from evaluation count")
        successes = [o.objective_value for o in observations if o.success]
        eta = min(successes) if successes else None
        _check_eta(eta_prev, eta)

        model = None
        opts = dataclasses.replace(cfg.map, ep=cfg.ep,
                                   seed=_stage_seed(rep_seed, n, _STAGE_OBJECTIVE_MAP))
        for jitter in (0.0, RETRY_JITTER):
            try:
                res = hyperopt.map_fit_objective(penalized, cfg.objective_priors, opts)
                model = gp_regression.fit(penalized, res.hyper,
                                          cfg.objective_priors.noise_variance, jitter=jitter)
                break
            except (NumericalError, np.linalg.LinAlgError) as exc:
                trace.error = f"iteration {n}: {exc}"
        rec = _record(n, x, obs, eta, None, spec.f_min, best_prev)
        trace.records.append(rec)
        if model is None:
            trace.failed = True
            break
        eta_prev, best_prev = eta, rec.regret_best
        ctx = AcquisitionContext(model, (), float(np.min(penalized.values)), cfg.delta)
        if n < cfg.iterations:
            x = maximize(ctx, spec.dim, _stage_seed(rep_seed, n, _STAGE_ACQUISITION),
                         cfg.acquisition)

    if ctx is not None:
        _finish(trace, ctx, spec, rep_seed, cfg)
    trace.wall_clock = time.perf_counter() - t0
    return trace


def run_repetition(config: ExperimentConfig, repetition: int) -> ExperimentTrace:
    if config.method == "eic2":
        return run_eic2(config, repetition)
    return run_baseline(config, repetition)


def _run_one(args):
    return run_repetition(*args)


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return default
    n = int(raw)
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer")
    return n


def run_experiment(config: ExperimentConfig, workers: int | None = None,
                   repetitions=None) -> list[ExperimentTrace]:
    """All repetitions of one config, in repetition order."""
    reps = list(range(config.repetitions)) if repetitions is None else list(repetitions)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(reps) <= 1:
        return [run_repetition(config, r) for r in reps]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, [(config, r) for r in reps]))


def _stats(values):
    values = [float(v) for v in values if v is not None and math.isfinite(v)]
    if not values:
        return None
    n = len(values)
    # fsum keeps the reduction independent of trace order
    mean = math.fsum(values) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)
    return {"mean": mean, "std": std, "median": float(np.median(values)), "n": n}


def aggregate(traces) -> dict:
    """Per-method statistics of final regret and threshold estimate."""
    traces = list(traces)
    if not traces:
        raise ValueError("aggregate needs at least one trace")
    out = {}
    for method in sorted({t.method for t in traces}):
        group = sorted((t for t in traces if t.method == method),
                       key=lambda t: (t.benchmark, t.repetition, t.seed))
        out[method] = {
            "benchmarks": sorted({t.benchmark for t in group}),
            "n_runs": len(group),
            "final_regret": _stats(t.final_regret for t in group),
            "best_guess_regret": _stats(t.best_guess_regret for t in group),
            "c_hat": _stats(t.c_hat for t in group),
            "failures_per_run": {str(t.repetition): t.n_failures for t in group},
            "failed_runs": [t.repetition for t in group if t.failed],
            "flagged_best_guesses": [t.repetition for t in group if t.best_guess_flagged],
        }
    return out
