"""Genetic operators: relative fitness, roulette selection, crossover, mutation.

Every operator is a pure function of its inputs and the ``numpy`` Generator
passed in; callers own the random streams.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from evohpo.space import CATEGORICAL, Genotype, SearchSpace, clamp

MINIMIZE = "minimize"
MAXIMIZE = "maximize"

# (label, low, high, sign): multiplier is 1 + sign * Uniform(low, high)
MUTATION_CLASSES = (
    ("decrease_small", 0.00, 0.01, -1.0),
    ("increase_small", 0.00, 0.01, +1.0),
    ("increase_large", 0.10, 0.20, +1.0),
    ("decrease_large", 0.10, 0.20, -1.0),
)
ZERO_KICK = 0.01


class FitnessError(ValueError):
    pass


@dataclass(frozen=True)
class FitnessConfig:
    sigma: float = 4.0
    direction: str = MINIMIZE

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.direction not in (MINIMIZE, MAXIMIZE):
            raise ValueError(f"unknown direction {self.direction!r}")


@dataclass(frozen=True)
class ScoredIndividual:
    genotype: Genotype
    fom: float
    fitness: float = 1.0
    params_ref: str | None = None


class Offspring(NamedTuple):
    genotype: Genotype
    alpha: int
    a: int  # base (hyperparameter) parent after role assignment
    b: int  # donor parent


def fitness_map(foms: Sequence[float], cfg: FitnessConfig = FitnessConfig()) -> list[float]:
    """Relative fitness ``exp(-sigma * n**2)`` with ``n`` the min-max normalised fom.

    The best fom maps to 1 and the worst to ``exp(-sigma)``. A generation with
    no spread gets fitness 1 everywhere.
    """
    if len(foms) == 0:
        raise FitnessError("empty fom list")
    x = np.asarray(foms, dtype=float)
    if not np.all(np.isfinite(x)):
        raise FitnessError(f"non-finite fom in {list(foms)!r}")
    if cfg.direction == MAXIMIZE:
        x = -x
    lo, hi = x.min(), x.max()
    if hi == lo:
        return [1.0] * len(x)
    n = (x - lo) / (hi - lo)
    return [float(v) for v in np.exp(-cfg.sigma * n * n)]


def select_index(fitnesses: Sequence[float], rng: np.random.Generator) -> int:
    """Roulette-wheel draw: index ``i`` with probability ``f_i / sum(f)``."""
    if len(fitnesses) == 0:
        raise FitnessError("cannot select from an empty population")
    cum = []
    total = 0.0
    for f in fitnesses:
        if not (f > 0 and math.isfinite(f)):
            raise FitnessError(f"fitness values must be positive and finite, got {f!r}")
        total += f
        cum.append(total)
    u = rng.random() * total
    return min(bisect.bisect_right(cum, u), len(cum) - 1)


def crossover_events(a: Genotype, b: Genotype, rate: float, rng: np.random.Generator):
    """Crossover that also reports what happened.

    Returns ``(child, a_is_base, mask)`` where ``mask[i]`` is true when locus
    ``i`` was taken from the non-base parent.
    """
    if len(a) != len(b):
        raise ValueError(f"genotype length mismatch: {len(a)} vs {len(b)}")
    a_is_base = bool(rng.random() < 0.5)
    base, donor = (a, b) if a_is_base else (b, a)
    mask = rng.random(len(a)) < rate
    child = tuple(d if m else x for x, d, m in zip(base, donor, mask))
    return child, a_is_base, mask


def crossover(a: Genotype, b: Genotype, rate: float, rng: np.random.Generator) -> Genotype:
    """Single-locus crossover events: each locus independently comes from the
    donor with probability ``rate``, otherwise from the base parent. Which of
    ``a``/``b`` is the base is a fair coin per mating."""
    return crossover_events(a, b, rate, rng)[0]


def draw_mutation(rng: np.random.Generator) -> tuple[int, float]:
    """Pick one of the four mutation classes uniformly; return (class, multiplier)."""
    k = int(rng.integers(len(MUTATION_CLASSES)))
    _, lo, hi, sign = MUTATION_CLASSES[k]
    return k, 1.0 + sign * rng.uniform(lo, hi)


def mutate(space: SearchSpace, g: Genotype, rate: float, rng: np.random.Generator) -> Genotype:
    out = list(g)
    fire = rng.random(len(g)) < rate
    for i, loc in enumerate(space.loci):
        if not fire[i]:
            continue
        if loc.kind == CATEGORICAL:
            others = [c for c in range(len(loc.categories)) if c != g[i]]
            out[i] = others[int(rng.integers(len(others)))]
            continue
        _, factor = draw_mutation(rng)
        v = float(g[i]) * factor
        if g[i] == 0:
            # multiplicative classes cannot move a zero
            v = rng.choice((-1.0, 1.0)) * rng.uniform(0.0, ZERO_KICK) * loc.span
        out[i] = v
    return clamp(space, tuple(out), round_integers=False)


def breed(
    space: SearchSpace,
    pop: Sequence[ScoredIndividual],
    crossover_rate: float,
    mutation_rate: float,
    rng: np.random.Generator,
) -> Offspring:
    """Produce one child from three fitness-proportional draws.

    Hyperparameters come from ``mutate(crossover(a, b))``; ``alpha`` names the
    member whose parameters the child inherits. Draws are with replacement.
    """
    fit = [p.fitness for p in pop]
    i = select_index(fit, rng)
    j = select_index(fit, rng)
    alpha = select_index(fit, rng)
    child, i_is_base, _ = crossover_events(pop[i].genotype, pop[j].genotype, crossover_rate, rng)
    a, b = (i, j) if i_is_base else (j, i)
    return Offspring(mutate(space, child, mutation_rate, rng), alpha, a, b)
