"""Generation-synchronous GA driver for traditional HPO and PBT.

Traditional mode scores every genotype from scratch each generation. PBT mode
keeps a model checkpoint per individual: each generation loads it, trains one
epoch with the individual's hyperparameters, saves, and scores on validation
error; children then inherit hyperparameters from parents ``a``/``b`` and
parameters (a checkpoint id) from parent ``alpha``.

All randomness comes from streams keyed on ``(seed, generation, slot,
purpose)``, so results do not depend on how evaluations are scheduled.
"""

from __future__ import annotations

import csv
import json
import logging
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import yaml

from evohpo.checkpoints import CheckpointError, CheckpointStore
from evohpo.genetics import (MAXIMIZE, MINIMIZE, FitnessConfig, Offspring,
                             ScoredIndividual, breed, fitness_map)
from evohpo.objectives import ObjectiveSpec, evaluate_objective
from evohpo.space import Genotype, SearchSpace, check_space, load_space, sample_genotype
from evohpo.trainer import (UNREACHED_PENALTY, TrainHparams, epochs_to_threshold,
                            evaluate_error, init_model, make_dataset, train_epoch)

log = logging.getLogger(__name__)

TRADITIONAL = "traditional"
PBT = "pbt"

HISTORY = "history.jsonl"
CONFIG_SNAPSHOT = "config.yaml"
BEST = "best.json"
SCHEDULE = "schedule.csv"
TIMINGS = "timings.csv"

_PURPOSES = {"init": 0, "eval": 1, "breed": 2, "train": 3, "model": 4}
# failures of the run itself, as opposed to one individual's evaluation
SYSTEMIC_ERRORS = (CheckpointError, OSError, MemoryError)


class ConfigError(ValueError):
    pass


class UnsupportedModeError(ValueError):
    pass


def stream(seed: int, generation: int, slot: int, purpose: str) -> np.random.Generator:
    """Independent random stream for one (generation, slot, purpose)."""
    s = int(seed) % 2**64
    words = [s & 0xFFFFFFFF, s >> 32, int(generation), int(slot), _PURPOSES[purpose]]
    return np.random.default_rng(np.random.SeedSequence(words))


def derived_seed(seed: int, generation: int, slot: int, purpose: str) -> int:
    return int(stream(seed, generation, slot, purpose).integers(2**63))


# --- configuration -------------------------------------------------------


@dataclass(frozen=True)
class TrainerTask:
    """A training problem on the built-in MLP.

    In PBT mode ``hidden`` fixes the topology. In traditional mode loci named
    ``hidden_1``, ``hidden_2``... override it and the figure of merit is
    epochs to reach ``threshold`` validation error.
    """

    dataset: str = "spirals"
    n: int = 1000
    data_seed: int = 0
    noise: float | None = None
    turns: float = 1.25
    hidden: tuple[int, ...] = (32, 32)
    threshold: float = 0.1
    max_epochs: int = 50
    defaults: TrainHparams = TrainHparams()

    def make_data(self):
        return make_dataset(self.data_seed, self.n, self.dataset, noise=self.noise, turns=self.turns)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainerTask":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(int(x) for x in d["hidden"])
        if "defaults" in d:
            d["defaults"] = TrainHparams(**d["defaults"])
        return cls(**d)


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 100
    mutation_rate: float = 0.05
    crossover_rate: float = 0.33
    sigma: float = 4.0
    generations: int = 250
    wall_clock_limit: float = 24 * 3600.0
    mode: str = TRADITIONAL
    epochs: int = 30
    seed: int = 0
    objective: ObjectiveSpec | TrainerTask = field(default_factory=ObjectiveSpec)
    direction: str = MINIMIZE
    keep_best: bool = False
    failure_fom: float | None = None

    def problems(self) -> list[str]:
        errs = []
        if self.population_size < 1:
            errs.append("population_size must be positive")
        for name in ("mutation_rate", "crossover_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                errs.append(f"{name} must lie in [0, 1]")
        if not self.sigma > 0:
            errs.append("sigma must be positive")
        if self.generations < 1 or self.epochs < 1:
            errs.append("generations and epochs must be positive")
        if self.wall_clock_limit < 0:
            errs.append("wall_clock_limit must be nonnegative")
        if self.mode not in (TRADITIONAL, PBT):
            errs.append(f"unknown mode {self.mode!r}")
        if self.direction not in (MINIMIZE, MAXIMIZE):
            errs.append(f"unknown direction {self.direction!r}")
        if self.mode == PBT and not isinstance(self.objective, TrainerTask):
            errs.append("pbt mode needs a trainer task")
        return errs

    @property
    def n_generations(self) -> int:
        return self.epochs if self.mode == PBT else self.generations

    @property
    def fitness(self) -> FitnessConfig:
        return FitnessConfig(self.sigma, self.direction)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "objective"}
        if isinstance(self.objective, TrainerTask):
            d["task"] = self.objective.to_dict()
        else:
            d["objective"] = asdict(self.objective)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GaConfig":
        d = dict(d)
        if "task" in d:
            d["objective"] = TrainerTask.from_dict(d.pop("task"))
        elif "objective" in d:
            d["objective"] = ObjectiveSpec(**d["objective"])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown GA settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Experiment:
    config: GaConfig
    space: SearchSpace
    output_dir: Path | None = None
    parallelism: int = 1


def load_experiment(path: str | Path) -> Experiment:
    """Read an experiment YAML file.

    Top-level keys: ``ga`` (GaConfig fields), ``space`` (bundled name, path
    relative to the file, or inline ``{loci: [...]}``), ``objective`` or
    ``task``, ``output_dir`` and ``parallelism``.
    """
    path = Path(path)
    doc = yaml.safe_load(path.read_text()) or {}
    ga = dict(doc.get("ga", {}))
    if "objective" in doc:
        ga["objective"] = doc["objective"]
    if "task" in doc:
        ga["task"] = doc["task"]
    space_ref = doc.get("space")
    if space_ref is None:
        raise ConfigError("experiment config needs a 'space'")
    if isinstance(space_ref, str) and (path.parent / space_ref).exists():
        space_ref = path.parent / space_ref
    out = doc.get("output_dir")
    return Experiment(
        config=GaConfig.from_dict(ga),
        space=load_space(space_ref),
        output_dir=Path(out) if out else None,
        parallelism=int(doc.get("parallelism", 1)),
    )


# --- records -------------------------------------------------------------


@dataclass(frozen=True)
class Parents:
    a: int
    b: int
    alpha: int


@dataclass(frozen=True)
class Member:
    slot: int
    genotype: Genotype
    fom: float
    fitness: float
    parents: Parents | None = None
    start_checkpoint: str | None = None
    start_hash: str | None = None
    checkpoint: str | None = None
    checkpoint_hash: str | None = None
    error: str | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        d["genotype"] = list(self.genotype)
        return d

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "Member":
        d = dict(d)
        d["genotype"] = tuple(d["genotype"])
        if d.get("parents") is not None:
            d["parents"] = Parents(**d["parents"])
        return cls(**d)

    def scored(self) -> ScoredIndividual:
        return ScoredIndividual(self.genotype, self.fom, self.fitness, self.checkpoint)


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    members: tuple[Member, ...]
    best_fom: float
    wall_time: float = 0.0

    @property
    def foms(self) -> list[float]:
        return [m.fom for m in self.members]

    def to_json(self) -> str:
        # wall_time is excluded so that history files are byte-reproducible
        doc = {
            "generation": self.generation,
            "best_fom": self.best_fom,
            "members": [m.to_json() for m in self.members],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "GenerationRecord":
        d = json.loads(line)
        return cls(d["generation"], tuple(Member.from_json(m) for m in d["members"]), d["best_fom"])


@dataclass
class ExperimentResult:
    config: GaConfig
    space: SearchSpace
    history: list[GenerationRecord]
    best_individual: ScoredIndividual
    best_lineage: list[tuple[int, Genotype]]
    best_overall: ScoredIndividual | None = None

    @property
    def mode(self) -> str:
        return self.config.mode


def _best_index(foms: Sequence[float], direction: str) -> int:
    pick = min if direction == MINIMIZE else max
    return pick(range(len(foms)), key=lambda i: foms[i])


def _better(x: float, y: float, direction: str) -> bool:
    return x < y if direction == MINIMIZE else x > y


# --- evaluators ----------------------------------------------------------


class AnalyticEvaluator:
    failure_fom = None

    def __init__(self, spec: ObjectiveSpec, space: SearchSpace):
        if spec.dimension != len(space):
            raise ConfigError(f"objective dimension {spec.dimension} != {len(space)} loci")
        self.spec = spec

    def __call__(self, genotype: Genotype, rng: np.random.Generator) -> float:
        return evaluate_objective(self.spec, genotype, rng)


class TimeToAccuracyEvaluator:
    """Epochs-to-threshold of a freshly built MLP; topology comes from loci."""

    def __init__(self, task: TrainerTask, space: SearchSpace):
        self.task = task
        self.space = space
        self.data = task.make_data()
        self.failure_fom = float(task.max_epochs + UNREACHED_PENALTY)

    def hidden_sizes(self, values: Mapping[str, Any]) -> tuple[int, ...]:
        hidden = list(self.task.hidden)
        for k in range(len(hidden)):
            hidden[k] = int(values.get(f"hidden_{k + 1}", hidden[k]))
        return tuple(hidden)

    def __call__(self, genotype: Genotype, rng: np.random.Generator) -> float:
        values = self.space.decode(genotype)
        h = TrainHparams.from_mapping(values, self.task.defaults)
        return epochs_to_threshold(h, self.hidden_sizes(values), self.data,
                                   self.task.threshold, self.task.max_epochs, rng)


class PbtEvaluator:
    """Load, train one epoch, save, score by validation error."""

    failure_fom = 1.0

    def __init__(self, task: TrainerTask, space: SearchSpace, store: CheckpointStore):
        self.task = task
        self.space = space
        self.store = store
        self.data = task.make_data()
        self.layer_sizes = (self.data.n_features, *task.hidden, self.data.n_classes)

    def initial_checkpoint(self, seed: int, slot: int) -> str:
        model = init_model(self.layer_sizes, derived_seed(seed, 0, slot, "model"))
        return self.store.save(model, 0, slot)

    def hparams(self, genotype: Genotype) -> TrainHparams:
        return TrainHparams.from_mapping(self.space.decode(genotype), self.task.defaults)

    def __call__(self, genotype: Genotype, start_id: str, generation: int, slot: int,
                 rng: np.random.Generator) -> tuple[float, str]:
        model = self.store.load(start_id)
        model, _ = train_epoch(model, self.data, self.hparams(genotype), rng)
        end_id = self.store.save(model, generation, slot)
        return evaluate_error(model, self.data, "validation"), end_id


def build_evaluator(config: GaConfig, space: SearchSpace, store: CheckpointStore | None = None):
    if config.mode == PBT:
        return PbtEvaluator(config.objective, space, store)
    if isinstance(config.objective, TrainerTask):
        return TimeToAccuracyEvaluator(config.objective, space)
    return AnalyticEvaluator(config.objective, space)


# --- evaluation ----------------------------------------------------------


def _guarded(fn: Callable[[int], Any]) -> Callable[[int], tuple[Any, str | None]]:
    def call(slot: int):
        try:
            return fn(slot), None
        except SYSTEMIC_ERRORS:
            raise
        except Exception as exc:  # one bad individual must not stop the run
            log.warning("evaluation of slot %d failed: %s", slot, exc)
            return None, f"{type(exc).__name__}: {exc}"
    return call


def run_slots(fn: Callable[[int], Any], n: int, parallelism: int = 1) -> list[tuple[Any, str | None]]:
    """Call ``fn(slot)`` for every slot; returns ``(value, error)`` in slot order."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    call = _guarded(fn)
    if parallelism == 1:
        return [call(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(call, range(n)))


def _fill_failures(values: Sequence[float | None], failure_fom: float | None, direction: str) -> list[float]:
    ok = [v for v in values if v is not None]
    if failure_fom is None:
        if not ok:
            raise RuntimeError("every evaluation in the generation failed")
        failure_fom = max(ok) if direction == MINIMIZE else min(ok)
    return [failure_fom if v is None else float(v) for v in values]


def evaluate_population(genotypes: Sequence[Genotype], evaluator, parallelism: int = 1, *,
                        seed: int = 0, generation: int = 0, direction: str = MINIMIZE) -> list[float]:
    """Score genotypes with a stateless evaluator ``evaluator(genotype, rng)``.

    Failed slots get ``evaluator.failure_fom`` if it is set, otherwise the
    worst fom of the generation.
    """
    out = run_slots(lambda i: evaluator(genotypes[i], stream(seed, generation, i, "eval")),
                    len(genotypes), parallelism)
    return _fill_failures([v for v, _ in out], getattr(evaluator, "failure_fom", None), direction)


# --- output --------------------------------------------------------------


class RunWriter:
    def __init__(self, out_dir: Path, config: GaConfig, space: SearchSpace):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        snapshot = {"ga": config.to_dict(), "space": space.to_dict()}
        (self.dir / CONFIG_SNAPSHOT).write_text(yaml.safe_dump(snapshot, sort_keys=True))
        self._history = open(self.dir / HISTORY, "w")
        self._timings = open(self.dir / TIMINGS, "w", newline="")
        self._timings.write("generation,wall_time\n")

    def append(self, record: GenerationRecord) -> None:
        self._history.write(record.to_json() + "\n")
        self._history.flush()
        self._timings.write(f"{record.generation},{record.wall_time!r}\n")
        self._timings.flush()

    def close(self) -> None:
        self._history.close()
        self._timings.close()


def read_history(path: str | Path) -> list[GenerationRecord]:
    path = Path(path)
    if path.is_dir():
        path = path / HISTORY
    with open(path) as fh:
        return [GenerationRecord.from_json(line) for line in fh if line.strip()]


def lineage(history: Sequence[GenerationRecord], slot: int, mode: str) -> list[tuple[int, Genotype]]:
    """Walk parent links back from ``slot`` of the last generation.

    PBT follows the parameter parent ``alpha``; traditional mode follows the
    base hyperparameter parent ``a``.
    """
    chain = []
    for rec in reversed(history):
        m = rec.members[slot]
        chain.append((rec.generation, m.genotype))
        if m.parents is None:
            break
        slot = m.parents.alpha if mode == PBT else m.parents.a
    return chain[::-1]


def _result_from_history(config: GaConfig, space: SearchSpace,
                         history: list[GenerationRecord]) -> ExperimentResult:
    last = history[-1]
    i = _best_index(last.foms, config.direction)
    overall = None
    for rec in history:
        for m in rec.members:
            if overall is None or _better(m.fom, overall.fom, config.direction):
                overall = m
    return ExperimentResult(
        config=config,
        space=space,
        history=history,
        best_individual=last.members[i].scored(),
        best_lineage=lineage(history, i, config.mode),
        best_overall=overall.scored(),
    )


def load_run(run_dir: str | Path) -> ExperimentResult:
    """Rebuild an :class:`ExperimentResult` from a run's output directory."""
    run_dir = Path(run_dir)
    snap = yaml.safe_load((run_dir / CONFIG_SNAPSHOT).read_text())
    config = GaConfig.from_dict(snap["ga"])
    space = load_space(snap["space"])
    return _result_from_history(config, space, read_history(run_dir / HISTORY))


def export_schedule(result: ExperimentResult) -> list[dict[str, Any]]:
    """One row per generation along the best lineage: generation + decoded loci."""
    if result.mode != PBT:
        raise UnsupportedModeError("hyperparameter schedules exist only for pbt runs")
    return [{"generation": g, **result.space.decode(geno)} for g, geno in result.best_lineage]


def write_schedule(result: ExperimentResult, path: str | Path) -> Path:
    rows = export_schedule(result)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["generation", *result.space.names])
        w.writeheader()
        w.writerows(rows)
    return path


def _write_best(result: ExperimentResult, path: Path) -> None:
    def describe(ind: ScoredIndividual):
        return {
            "genotype": list(ind.genotype),
            "values": result.space.decode(ind.genotype),
            "fom": ind.fom,
            "checkpoint": ind.params_ref,
        }

    doc = {"final_best": describe(result.best_individual), "overall_best": describe(result.best_overall)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --- main loop -----------------------------------------------------------


def run(config: GaConfig, space: SearchSpace, *, out_dir: str | Path | None = None,
        parallelism: int = 1, evaluator=None) -> ExperimentResult:
    """Run the GA until ``n_generations`` or the wall-clock limit.

    The stop rules are checked after each fully evaluated generation, so a
    zero wall-clock limit still runs exactly one generation. A custom PBT
    ``evaluator`` brings its own checkpoint store.
    """
    errs = config.problems()
    if errs:
        raise ConfigError("; ".join(errs))
    check_space(space)
    pbt = config.mode == PBT
    tmp = None
    store = None
    if pbt and evaluator is not None:
        store = evaluator.store
    elif pbt:
        if out_dir is None:
            tmp = tempfile.TemporaryDirectory(prefix="evohpo-")
            root = Path(tmp.name)
        else:
            root = Path(out_dir)
        store = CheckpointStore(root)
    evaluator = evaluator or build_evaluator(config, space, store)
    writer = RunWriter(Path(out_dir), config, space) if out_dir is not None else None

    n = config.population_size
    seed = config.seed
    genotypes = [sample_genotype(space, stream(seed, 0, i, "init")) for i in range(n)]
    parents: list[Parents | None] = [None] * n
    starts: list[str | None] = [None] * n
    if pbt:
        starts = [evaluator.initial_checkpoint(seed, i) for i in range(n)]

    history: list[GenerationRecord] = []
    best_pin: tuple[float, str] | None = None
    t0 = time.monotonic()
    try:
        for g in range(config.n_generations):
            tg = time.monotonic()
            if pbt:
                def job(i, g=g, genos=genotypes, st=starts):
                    return evaluator(genos[i], st[i], g, i, stream(seed, g, i, "train"))
                out = run_slots(job, n, parallelism)
                foms = _fill_failures([None if v is None else v[0] for v, _ in out],
                                      evaluator.failure_fom if config.failure_fom is None else config.failure_fom,
                                      config.direction)
                ends = [starts[i] if v is None else v[1] for i, (v, _) in enumerate(out)]
            else:
                def job(i, g=g, genos=genotypes):
                    return evaluator(genos[i], stream(seed, g, i, "eval"))
                out = run_slots(job, n, parallelism)
                failure = config.failure_fom
                if failure is None:
                    failure = getattr(evaluator, "failure_fom", None)
                foms = _fill_failures([v for v, _ in out], failure, config.direction)
                ends = [None] * n
            fitness = fitness_map(foms, config.fitness)
            members = tuple(
                Member(
                    slot=i,
                    genotype=genotypes[i],
                    fom=foms[i],
                    fitness=fitness[i],
                    parents=parents[i],
                    start_checkpoint=starts[i],
                    start_hash=store.hash_of(starts[i]) if pbt else None,
                    checkpoint=ends[i],
                    checkpoint_hash=store.hash_of(ends[i]) if pbt else None,
                    error=out[i][1],
                )
                for i in range(n)
            )
            ib = _best_index(foms, config.direction)
            record = GenerationRecord(g, members, foms[ib], time.monotonic() - tg)
            history.append(record)
            if writer:
                writer.append(record)

            if pbt and (best_pin is None or _better(foms[ib], best_pin[0], config.direction)):
                if best_pin is not None:
                    store.unpin(best_pin[1])
                best_pin = (foms[ib], ends[ib])
                store.pin(ends[ib])

            if g + 1 >= config.n_generations or time.monotonic() - t0 >= config.wall_clock_limit:
                break

            pop = [m.scored() for m in members]
            children: list[Offspring] = [
                breed(space, pop, config.crossover_rate, config.mutation_rate, stream(seed, g + 1, i, "breed"))
                for i in range(n)
            ]
            if config.keep_best:
                children[0] = Offspring(genotypes[ib], ib, ib, ib)
            genotypes = [c.genotype for c in children]
            parents = [Parents(c.a, c.b, c.alpha) for c in children]
            if pbt:
                starts = [ends[c.alpha] for c in children]
                store.collect_garbage(set(starts))
        if pbt:
            store.collect_garbage({m.checkpoint for m in history[-1].members})
    finally:
        if writer:
            writer.close()

    result = _result_from_history(config, space, history)
    if out_dir is not None:
        _write_best(result, Path(out_dir) / BEST)
        if pbt:
            write_schedule(result, Path(out_dir) / SCHEDULE)
    if tmp is not None:
        tmp.cleanup()
    return result
