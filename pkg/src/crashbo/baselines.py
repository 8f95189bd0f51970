"""Failure-penalty heuristics that turn crashes into fake objective values.

Each strategy assigns a cost to every failed input and then runs plain EI on a
standard GP, so the strategies only differ once a failure has occurred.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import gp_regression, hyperopt
from .acquisition import AcquisitionContext, AcquisitionOptions, maximize
from .benchmarks import HybridObservation
from .gp_regression import GPDataset


class PenaltyKind(str, Enum):
    HIGH_COST = "hc"
    MIDDLE_COST = "mc"
    ADAPTIVE_COST = "ac"


@dataclass(frozen=True)
class PenaltyStrategy:
    kind: PenaltyKind
    high_cost_value: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PenaltyKind(self.kind))
        if self.kind is PenaltyKind.HIGH_COST:
            if self.high_cost_value is None or not math.isfinite(self.high_cost_value):
                raise ValueError("the high-cost strategy needs a finite upper bound")


def penalize(inputs: Sequence, observations: Sequence[HybridObservation],
             strategy: PenaltyStrategy) -> tuple[GPDataset, bool]:
    """Objective dataset with one entry per evaluation, failures replaced by a cost.

    Returns ``(dataset, flagged)``; ``flagged`` is True when the middle- or
    adaptive-cost rule had no successful value to use and the high-cost bound
    was substituted.
    """
    if len(observations) == 0:
        raise ValueError("penalization needs at least one evaluation")
    if len(inputs) != len(observations):
        raise ValueError("inputs and observations differ in length")
    successes = [o.objective_value for o in observations if o.success]
    flagged = False
    if strategy.kind is PenaltyKind.HIGH_COST:
        cost = strategy.high_cost_value
    elif strategy.kind is PenaltyKind.MIDDLE_COST:
        cost = observations[0].objective_value
    else:
        cost = max(successes) if successes else None
    if cost is None:
        if strategy.high_cost_value is None:
            raise ValueError(f"{strategy.kind.value}: no successful value and no fallback bound")
        cost, flagged = strategy.high_cost_value, True
    values = np.array([o.objective_value if o.success else cost for o in observations],
                      dtype=float)
    X = np.asarray(inputs, dtype=float).reshape(len(observations), -1)
    return GPDataset(X, values), flagged


def fit_penalized_model(dataset: GPDataset, priors: hyperopt.PriorSpec,
                        map_opts: hyperopt.MapOptions | None = None):
    res = hyperopt.map_fit_objective(dataset, priors, map_opts)
    return gp_regression.fit(dataset, res.hyper, priors.noise_variance), res


def baseline_step(inputs, observations, strategy: PenaltyStrategy, priors: hyperopt.PriorSpec,
                  seed, map_opts: hyperopt.MapOptions | None = None,
                  acq_opts: AcquisitionOptions | None = None) -> np.ndarray:
    """Next point from plain EI on a GP fit to the penalized data."""
    dataset, _ = penalize(inputs, observations, strategy)
    model, _ = fit_penalized_model(dataset, priors, map_opts)
    ctx = AcquisitionContext(model, (), float(np.min(dataset.values)))
    return maximize(ctx, dataset.dim, seed, acq_opts)
