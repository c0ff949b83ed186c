"""Run summaries and baseline comparisons, written as flat CSV files."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from evohpo.genetics import MINIMIZE
from evohpo.orchestrator import (PBT, GaConfig, GenerationRecord, UnsupportedModeError,
                                 build_evaluator, derived_seed, evaluate_population,
                                 load_run, read_history, stream)
from evohpo.space import Genotype, SearchSpace, sample_genotype
from evohpo.trainer import DivergenceError, TrainHparams, evaluate_error, init_model, train_epoch

SUMMARY = "summary.csv"
BASELINE = "baseline.csv"


@dataclass
class RunSummary:
    generation: list[int]
    best: list[float]
    mean: list[float]
    min: list[float]
    max: list[float]
    best_so_far: list[float]
    total_evaluations: int
    best_genotype: Genotype
    best_fom: float

    def rows(self):
        for k in range(len(self.generation)):
            yield {
                "generation": self.generation[k],
                "best": self.best[k],
                "mean": self.mean[k],
                "min": self.min[k],
                "max": self.max[k],
                "best_so_far": self.best_so_far[k],
            }

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["generation", "best", "mean", "min", "max", "best_so_far"])
            w.writeheader()
            for row in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return path


def _summarize_batches(batches: Sequence[tuple[int, Sequence[float], Sequence[Genotype]]],
                       direction: str = MINIMIZE) -> RunSummary:
    if not batches:
        raise ValueError("nothing to summarize")
    pick = min if direction == MINIMIZE else max
    better = (lambda x, y: x < y) if direction == MINIMIZE else (lambda x, y: x > y)
    s = RunSummary([], [], [], [], [], [], 0, (), 0.0)
    incumbent = None
    for gen, foms, genos in batches:
        i = pick(range(len(foms)), key=lambda j: foms[j])
        s.generation.append(gen)
        s.best.append(foms[i])
        s.mean.append(sum(foms) / len(foms))
        s.min.append(min(foms))
        s.max.append(max(foms))
        if incumbent is None or better(foms[i], incumbent[0]):
            incumbent = (foms[i], genos[i])
        s.best_so_far.append(incumbent[0])
        s.total_evaluations += len(foms)
    s.best_fom, s.best_genotype = incumbent
    return s


def summarize(history: Sequence[GenerationRecord] | str | Path, direction: str = MINIMIZE) -> RunSummary:
    """Per-generation best/mean/min/max of recorded foms.

    Accepts in-memory records or a path to ``history.jsonl`` (or its run
    directory); both give identical numbers.
    """
    if isinstance(history, (str, Path)):
        history = read_history(history)
    return _summarize_batches([(r.generation, r.foms, [m.genotype for m in r.members]) for r in history],
                              direction)


def random_search_baseline(config: GaConfig, space: SearchSpace, budget: int, *,
                           parallelism: int = 1, evaluator=None) -> RunSummary:
    """Uniform random search with ``budget`` evaluations.

    Samples are drawn in batches of ``population_size`` using the same
    stream derivation as the GA's generation 0, so a budget of one
    population reproduces that generation exactly.
    """
    if config.mode == PBT:
        raise UnsupportedModeError("random-search baseline applies to traditional mode only")
    n = config.population_size
    if budget < n:
        raise ValueError(f"budget {budget} is smaller than the population size {n}")
    evaluator = evaluator or build_evaluator(config, space)
    batches = []
    done = 0
    k = 0
    while done < budget:
        size = min(n, budget - done)
        genos = [sample_genotype(space, stream(config.seed, k, i, "init")) for i in range(size)]
        foms = evaluate_population(genos, evaluator, parallelism, seed=config.seed, generation=k,
                                   direction=config.direction)
        batches.append((k, foms, genos))
        done += size
        k += 1
    return _summarize_batches(batches, config.direction)


def constant_hparam_baseline(config: GaConfig, space: SearchSpace) -> list[float]:
    """Final validation error of each generation-0 individual trained for the
    whole run with its hyperparameters held fixed.

    Uses the same initial models and per-epoch training streams as a PBT run
    with this config, so the only difference is the absence of selection.
    """
    if config.mode != PBT:
        raise UnsupportedModeError("constant-hyperparameter baseline applies to pbt mode only")
    task = config.objective
    data = task.make_data()
    sizes = (data.n_features, *task.hidden, data.n_classes)
    errors = []
    for i in range(config.population_size):
        g = sample_genotype(space, stream(config.seed, 0, i, "init"))
        h = TrainHparams.from_mapping(space.decode(g), task.defaults)
        model = init_model(sizes, derived_seed(config.seed, 0, i, "model"))
        try:
            for epoch in range(config.epochs):
                model, _ = train_epoch(model, data, h, stream(config.seed, epoch, i, "train"))
            errors.append(evaluate_error(model, data, "validation"))
        except DivergenceError:
            errors.append(1.0)
    return errors


def write_report(run_dir: str | Path, baseline_budget: int | None = None, parallelism: int = 1) -> list[Path]:
    """Write ``summary.csv`` (and ``baseline.csv`` if a budget is given) into a run directory."""
    run_dir = Path(run_dir)
    result = load_run(run_dir)
    written = [summarize(result.history, result.config.direction).write_csv(run_dir / SUMMARY)]
    if baseline_budget:
        base = random_search_baseline(result.config, result.space, baseline_budget, parallelism=parallelism)
        written.append(base.write_csv(run_dir / BASELINE))
    return written
