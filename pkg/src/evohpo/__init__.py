"""Genetic-algorithm hyperparameter optimization with population based training."""

from evohpo.checkpoints import CheckpointIntegrityError, CheckpointStore
from evohpo.genetics import FitnessConfig, ScoredIndividual, breed, crossover, fitness_map, mutate, select_index
from evohpo.objectives import ObjectiveSpec, evaluate_objective
from evohpo.orchestrator import (ExperimentResult, GaConfig, TrainerTask, export_schedule, load_experiment,
                                 load_run, run)
from evohpo.reporting import constant_hparam_baseline, random_search_baseline, summarize
from evohpo.space import LocusSpec, SearchSpace, clamp, load_space, sample_genotype, validate_space
from evohpo.trainer import (MlpModel, TrainHparams, epochs_to_threshold, gradient_check, init_model,
                            make_dataset, train_epoch)

__all__ = [
    "CheckpointIntegrityError", "CheckpointStore", "ExperimentResult", "FitnessConfig", "GaConfig",
    "LocusSpec", "MlpModel", "ObjectiveSpec", "ScoredIndividual", "SearchSpace", "TrainHparams",
    "TrainerTask", "breed", "clamp", "constant_hparam_baseline", "crossover", "epochs_to_threshold",
    "evaluate_objective", "export_schedule", "fitness_map", "gradient_check", "init_model", "load_experiment",
    "load_run", "load_space", "make_dataset", "mutate", "random_search_baseline", "run", "sample_genotype",
    "select_index", "summarize", "train_epoch", "validate_space",
]
