"""Simulated test problems with a sinusoidal crash constraint.

Objectives take points in the unit hypercube and map them affinely onto the
native domain of each function.  The constraint is evaluated directly on the
normalized coordinates, where ``prod_d sin(2 pi x_d) <= 0`` marks exactly half
of the ``2**D`` sub-hypercubes as safe.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Callable

import numpy as np
from scipy.special import sindg

MICHALEWICZ_STEEPNESS = 10

HARTMAN6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
HARTMAN6_A = np.array([
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
])
HARTMAN6_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])

# name -> (dimension, native lower bound, native upper bound)
NATIVE_DOMAINS = {
    "michalewicz10": (10, 0.0, math.pi),
    "hartman6": (6, 0.0, 1.0),
    "eggcrate2": (2, -5.0, 5.0),
}

CONSTANTS_FILE = "constants.json"


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != dim:
        raise ValueError(f"expected {dim}-dimensional points, got {X.shape[1]}")
    return X, single


def _native(X, name):
    _, lo, hi = NATIVE_DOMAINS[name]
    return lo + (hi - lo) * X


def michalewicz(x, m: int = MICHALEWICZ_STEEPNESS):
    X, single = _as_batch(x, 10)
    Z = _native(X, "michalewicz10")
    i = np.arange(1, Z.shape[1] + 1)
    out = -np.sum(np.sin(Z) * np.sin(i * Z**2 / math.pi) ** (2 * m), axis=1)
    return float(out[0]) if single else out


def hartman6(x):
    X, single = _as_batch(x, 6)
    Z = _native(X, "hartman6")
    inner = np.einsum("ij,nij->ni", HARTMAN6_A, (Z[:, None, :] - HARTMAN6_P[None]) ** 2)
    out = -np.exp(-inner) @ HARTMAN6_ALPHA
    return float(out[0]) if single else out


def eggcrate(x):
    X, single = _as_batch(x, 2)
    Z = _native(X, "eggcrate2")
    out = np.sum(Z**2, axis=1) + 25.0 * np.sum(np.sin(Z) ** 2, axis=1)
    return float(out[0]) if single else out


def sin_constraint(x):
    # sindg is exact at the zeros (faces and midplanes), where np.sin(2 pi x) leaves
    # a roundoff residue of either sign that would decide the label
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(np.prod(sindg(360.0 * x)))
    return np.prod(sindg(360.0 * x), axis=1)


@dataclass(frozen=True)
class HybridObservation:
    """Outcome of one experiment: values only on success, nothing on failure."""

    label: int
    objective_value: float | None = None
    constraint_value: float | None = None

    def __post_init__(self):
        if self.label == 1:
            if self.objective_value is None or self.constraint_value is None:
                raise ValueError("a successful evaluation must carry both observations")
        elif self.label == 0:
            if self.objective_value is not None or self.constraint_value is not None:
                raise ValueError("a failed evaluation cannot carry observations")
        else:
            raise ValueError(f"label must be 1 (success) or 0 (failure), got {self.label!r}")

    @property
    def success(self) -> bool:
        return self.label == 1


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    dim: int
    objective: Callable
    constraint: Callable
    true_threshold: float = 0.0
    noise_std_objective: float = 0.01
    noise_std_constraint: float = 0.01
    f_min: float = math.nan
    hc_bound: float = math.nan

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if self.noise_std_objective < 0 or self.noise_std_constraint < 0:
            raise ValueError("noise standard deviations must be non-negative")

    def is_safe(self, x) -> bool:
        return bool(self.constraint(x) <= self.true_threshold)


def crash_oracle(spec: BenchmarkSpec, x, rng) -> HybridObservation:
    """Run one simulated experiment; constraint violation returns only a failure label."""
    x = np.asarray(x, dtype=float)
    g = spec.constraint(x)
    if g > spec.true_threshold:
        return HybridObservation(0)
    f = spec.objective(x)
    yf = f + spec.noise_std_objective * rng.standard_normal() if spec.noise_std_objective else f
    yg = g + spec.noise_std_constraint * rng.standard_normal() if spec.noise_std_constraint else g
    return HybridObservation(1, float(yf), float(yg))


def sample_safe_start(spec: BenchmarkSpec, rng, max_tries: int = 100_000) -> np.ndarray:
    """Uniform rejection sample from the safe region."""
    for _ in range(max_tries):
        x = rng.random(spec.dim)
        if spec.is_safe(x):
            return x
    raise RuntimeError(
        f"no safe point found in {max_tries} uniform draws for {spec.name}; check the constraint"
    )


def load_constants(path=None) -> dict:
    if path is None:
        text = resources.files(__package__).joinpath(CONSTANTS_FILE).read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return json.loads(text)


_OBJECTIVES = {
    "michalewicz10": michalewicz,
    "hartman6": hartman6,
    "eggcrate2": eggcrate,
}

BENCHMARK_NAMES = tuple(_OBJECTIVES)


def get_benchmark(name: str, noisy: bool = True, noise_std: float = 0.01,
                  constants: dict | None = None) -> BenchmarkSpec:
    """Registry lookup; ``f_min`` and ``hc_bound`` come from the constants file."""
    if name not in _OBJECTIVES:
        raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARK_NAMES)}")
    constants = load_constants() if constants is None else constants
    entry = constants.get(name, {})
    std = noise_std if noisy else 0.0
    return BenchmarkSpec(
        name=name,
        dim=NATIVE_DOMAINS[name][0],
        objective=_OBJECTIVES[name],
        constraint=sin_constraint,
        true_threshold=0.0,
        noise_std_objective=std,
        noise_std_constraint=std,
        f_min=float(entry.get("f_min", math.nan)),
        hc_bound=float(entry.get("hc_bound", math.nan)),
    )
