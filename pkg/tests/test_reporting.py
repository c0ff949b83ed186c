import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evohpo.objectives import ObjectiveSpec
from evohpo.orchestrator import PBT, GaConfig, GenerationRecord, Member, TrainerTask, UnsupportedModeError, run
from evohpo.reporting import (constant_hparam_baseline, random_search_baseline, summarize,
                              write_report)
from evohpo.space import load_space

SPHERE = load_space("sphere7")


def cfg(**kw):
    base = dict(population_size=20, generations=6, objective=ObjectiveSpec("sphere", 7), seed=3)
    base.update(kw)
    return GaConfig(**base)


def records(batches):
    return [GenerationRecord(g, tuple(Member(i, (float(i),), f, 1.0) for i, f in enumerate(foms)), min(foms))
            for g, foms in enumerate(batches)]


def test_single_generation():
    s = summarize(records([[3.0, 1.0, 2.0]]))
    assert (s.best, s.mean, s.min, s.max, s.best_so_far) == ([1.0], [2.0], [1.0], [3.0], [1.0])
    assert s.total_evaluations == 3 and s.best_genotype == (1.0,) and s.best_fom == 1.0


def test_empty_history():
    with pytest.raises(ValueError):
        summarize([])


def test_maximize_tracks_largest():
    s = summarize(records([[1.0, 5.0], [4.0, 2.0]]), "maximize")
    assert s.best == [5.0, 4.0] and s.best_so_far == [5.0, 5.0]
    assert s.best_fom == 5.0 and s.best_genotype == (1.0,)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=10), min_size=1, max_size=10))
def test_order_statistics_and_running_best(batches):
    s = summarize(records(batches))
    assert len(s.generation) == len(batches)
    for lo, mid, hi in zip(s.min, s.mean, s.max):
        assert lo <= mid + 1e-9 * max(1.0, abs(mid)) and mid <= hi + 1e-9 * max(1.0, abs(mid))
    assert all(b <= a for a, b in zip(s.best_so_far, s.best_so_far[1:]))
    assert s.best_so_far[-1] == min(min(b) for b in batches)


def test_file_round_trip_matches_memory(tmp_path):
    res = run(cfg(), SPHERE, out_dir=tmp_path)
    assert summarize(tmp_path) == summarize(res.history)
    assert summarize(tmp_path / "history.jsonl") == summarize(res.history)


def test_csv_is_exact(tmp_path):
    res = run(cfg(), SPHERE)
    s = summarize(res.history)
    path = s.write_csv(tmp_path / "summary.csv")
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 6
    assert [float(r["mean"]) for r in rows] == s.mean


def test_budget_of_one_population_is_generation_zero():
    res = run(cfg(), SPHERE)
    base = random_search_baseline(cfg(), SPHERE, 20)
    g0 = summarize(res.history[:1])
    assert (base.best, base.mean, base.min, base.max) == (g0.best, g0.mean, g0.min, g0.max)


def test_random_search_bookkeeping():
    s = random_search_baseline(cfg(), SPHERE, 50)
    assert s.total_evaluations == 50
    assert len(s.generation) == 3
    assert all(b <= a for a, b in zip(s.best_so_far, s.best_so_far[1:]))


def test_budget_below_population():
    with pytest.raises(ValueError):
        random_search_baseline(cfg(), SPHERE, 5)


def test_ga_beats_random_search_small_budget():
    wins = 0
    for seed in range(5):
        c = cfg(generations=30, seed=seed)
        ga = summarize(run(c, SPHERE).history)
        rs = random_search_baseline(c, SPHERE, 20 * 30)
        wins += ga.best_fom < rs.best_fom
    assert wins >= 4


def test_baselines_check_mode():
    pbt = GaConfig(population_size=2, epochs=1, mode=PBT, objective=TrainerTask(n=200, hidden=(4,)))
    with pytest.raises(UnsupportedModeError):
        random_search_baseline(pbt, load_space("pbt_mlp"), 10)
    with pytest.raises(UnsupportedModeError):
        constant_hparam_baseline(cfg(), SPHERE)


def test_constant_baseline_matches_frozen_pbt():
    # one individual, no variation: PBT is exactly training with fixed hparams
    c = GaConfig(population_size=1, epochs=3, mode=PBT, mutation_rate=0.0, crossover_rate=0.0,
                 objective=TrainerTask(n=300, hidden=(8,)), seed=4)
    space = load_space("pbt_mlp")
    res = run(c, space)
    assert constant_hparam_baseline(c, space) == [res.history[-1].foms[0]]


def test_write_report(tmp_path):
    run(cfg(), SPHERE, out_dir=tmp_path)
    paths = write_report(tmp_path, baseline_budget=40)
    assert [p.name for p in paths] == ["summary.csv", "baseline.csv"]
    assert len(list(csv.DictReader(paths[1].open()))) == 2
    assert np.isfinite(float(next(csv.DictReader(paths[0].open()))["best"]))
