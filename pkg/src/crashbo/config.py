"""Experiment configuration: per-benchmark hyperprior defaults and JSON loading.

Gamma priors use the shape-rate convention.  The noise standard deviation 0.01
of every model corresponds to a noise variance of 1e-4.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .acquisition import AcquisitionOptions
from .benchmarks import BENCHMARK_NAMES
from .gpcr import EPOptions
from .hyperopt import BetaPrior, GammaPrior, MapOptions, PriorSpec

METHODS = ("eic2", "hc", "mc", "ac")

NOISE_STD = 0.01

# benchmark -> {model -> {hyperparameter -> (family, p1, p2)}}
DEFAULT_PRIORS = {
    "michalewicz10": {
        "objective": {"lengthscale": ("beta", 1.5, 15.0), "scale": ("gamma", 2.0, 1.0)},
        "constraint": {"lengthscale": ("beta", 1.5, 15.0), "scale": ("gamma", 2.0, 2.0),
                       "threshold": ("gamma", 2.0, 1.0)},
    },
    "hartman6": {
        "objective": {"lengthscale": ("beta", 1.5, 15.0), "scale": ("gamma", 2.0, 0.5)},
        "constraint": {"lengthscale": ("beta", 1.5, 15.0), "scale": ("gamma", 2.0, 1.0),
                       "threshold": ("gamma", 2.0, 1.0)},
    },
    "eggcrate2": {
        "objective": {"lengthscale": ("beta", 1.5, 15.0), "scale": ("gamma", 2.0, 1.0)},
        "constraint": {"lengthscale": ("beta", 1.5, 15.0), "scale": ("gamma", 2.0, 1.0),
                       "threshold": ("gamma", 2.0, 1.0)},
    },
}


def _prior(entry):
    if isinstance(entry, dict):
        family = entry["family"]
        params = entry["params"]
    else:
        family, *params = entry
    if family == "beta":
        return BetaPrior(*map(float, params))
    if family == "gamma":
        return GammaPrior(*map(float, params))
    raise ValueError(f"unknown prior family {family!r}")


def prior_spec(table: dict, noise_std: float = NOISE_STD, ard: bool = False) -> PriorSpec:
    return PriorSpec(
        lengthscale_prior=_prior(table["lengthscale"]),
        scale_prior=_prior(table["scale"]),
        threshold_prior=_prior(table["threshold"]) if "threshold" in table else None,
        noise_variance=float(noise_std) ** 2,
        ard=ard,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: str = "eggcrate2"
    method: str = "eic2"
    iterations: int = 100
    repetitions: int = 100
    seed: int = 0
    objective_priors: PriorSpec | None = None
    constraint_priors: PriorSpec | None = None
    delta: float = 0.1
    noisy: bool = True
    noise_std: float = NOISE_STD
    ep: EPOptions = field(default_factory=EPOptions)
    acquisition: AcquisitionOptions = field(default_factory=AcquisitionOptions)
    map: MapOptions = field(default_factory=MapOptions)

    def __post_init__(self):
        if self.benchmark not in BENCHMARK_NAMES:
            raise ValueError(f"unknown benchmark {self.benchmark!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.iterations < 1 or self.repetitions < 1:
            raise ValueError("iterations and repetitions must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        table = DEFAULT_PRIORS[self.benchmark]
        if self.objective_priors is None:
            object.__setattr__(self, "objective_priors",
                               prior_spec(table["objective"], self.noise_std))
        if self.constraint_priors is None:
            object.__setattr__(self, "constraint_priors",
                               prior_spec(table["constraint"], self.noise_std))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _prior_to_json(p):
    if isinstance(p, BetaPrior):
        return {"family": "beta", "params": [p.a, p.b]}
    return {"family": "gamma", "params": [p.shape, p.rate]}


def _spec_to_json(spec: PriorSpec) -> dict:
    out = {"lengthscale": _prior_to_json(spec.lengthscale_prior),
           "scale": _prior_to_json(spec.scale_prior),
           "noise_variance": spec.noise_variance, "ard": spec.ard}
    if spec.threshold_prior is not None:
        out["threshold"] = _prior_to_json(spec.threshold_prior)
    return out


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Plain-JSON snapshot; ``config_from_dict`` restores an equal config."""
    return {
        "benchmark": cfg.benchmark, "method": cfg.method, "iterations": cfg.iterations,
        "repetitions": cfg.repetitions, "seed": cfg.seed, "delta": cfg.delta,
        "noisy": cfg.noisy, "noise_std": cfg.noise_std,
        "objective": _spec_to_json(cfg.objective_priors),
        "constraint": _spec_to_json(cfg.constraint_priors),
        "ep": dataclasses.asdict(cfg.ep),
        "acquisition": dataclasses.asdict(cfg.acquisition),
        "map": {k: v for k, v in dataclasses.asdict(cfg.map).items() if k != "ep"},
    }


def _spec_from_json(d: dict, default: PriorSpec) -> PriorSpec:
    changes = {}
    if "lengthscale" in d:
        changes["lengthscale_prior"] = _prior(d["lengthscale"])
    if "scale" in d:
        changes["scale_prior"] = _prior(d["scale"])
    if "threshold" in d:
        changes["threshold_prior"] = _prior(d["threshold"])
    if "noise_std" in d:
        changes["noise_variance"] = float(d["noise_std"]) ** 2
    if "noise_variance" in d:
        changes["noise_variance"] = float(d["noise_variance"])
    if "ard" in d:
        changes["ard"] = bool(d["ard"])
    return dataclasses.replace(default, **changes)


def config_from_dict(d: dict, **overrides) -> ExperimentConfig:
    """Build a config from a (possibly partial) dict; missing fields take defaults."""
    d = {**d, **{k: v for k, v in overrides.items() if v is not None}}
    known = {"benchmark", "method", "iterations", "repetitions", "seed", "delta",
             "noisy", "noise_std", "objective", "constraint", "ep", "acquisition", "map"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    base = ExperimentConfig(**{k: d[k] for k in ("benchmark", "method", "iterations",
                                                  "repetitions", "seed", "delta", "noisy",
                                                  "noise_std") if k in d})
    ep = EPOptions(**d.get("ep", {}))
    return base.replace(
        objective_priors=_spec_from_json(d.get("objective", {}), base.objective_priors),
        constraint_priors=_spec_from_json(d.get("constraint", {}), base.constraint_priors),
        ep=ep,
        acquisition=AcquisitionOptions(**d.get("acquisition", {})),
        map=MapOptions(**d.get("map", {}), ep=ep),
    )


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh), **overrides)
