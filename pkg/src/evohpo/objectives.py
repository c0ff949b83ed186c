"""Closed-form benchmark objectives for traditional-mode runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evohpo.space import Genotype


def sphere(x: np.ndarray) -> float:
    return float(np.sum(x * x))


def rastrigin(x: np.ndarray) -> float:
    # the constant is folded into the sum so the optimum is exactly 0.0
    return float(np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x) + 10.0))


def rosenbrock(x: np.ndarray) -> float:
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


FUNCTIONS = {"sphere": sphere, "rastrigin": rastrigin, "rosenbrock": rosenbrock}

OPTIMA = {
    "sphere": lambda d: np.zeros(d),
    "rastrigin": lambda d: np.zeros(d),
    "rosenbrock": lambda d: np.ones(d),
}


@dataclass(frozen=True)
class ObjectiveSpec:
    name: str = "sphere"
    dimension: int = 7
    noise_sd: float = 0.0

    def __post_init__(self):
        if self.name not in FUNCTIONS:
            raise ValueError(f"unknown objective {self.name!r}; choose from {sorted(FUNCTIONS)}")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")


def evaluate_objective(spec: ObjectiveSpec, g: Genotype, rng: np.random.Generator | None = None) -> float:
    """Figure of merit of genotype ``g`` (lower is better).

    Adds ``N(0, noise_sd)`` observation noise when ``noise_sd > 0``; the rng is
    untouched otherwise, so noiseless evaluation is exactly repeatable.
    """
    if len(g) != spec.dimension:
        raise ValueError(f"genotype has {len(g)} values, objective expects {spec.dimension}")
    x = np.asarray(g, dtype=float)
    fom = FUNCTIONS[spec.name](x)
    if spec.noise_sd > 0:
        if rng is None:
            raise ValueError("noisy objective needs an rng")
        fom += float(rng.normal(0.0, spec.noise_sd))
    return fom
