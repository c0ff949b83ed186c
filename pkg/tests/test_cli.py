import json
import subprocess
import sys

import pytest
import yaml

from evohpo.cli import main


def sphere_file(tmp_path, **ga):
    p = tmp_path / "exp.yaml"
    p.write_text(yaml.safe_dump({
        "ga": {"population_size": 8, "generations": 3, **ga},
        "space": "sphere7",
        "objective": {"name": "sphere", "dimension": 7},
    }))
    return p


def pbt_file(tmp_path):
    p = tmp_path / "pbt.yaml"
    p.write_text(yaml.safe_dump({
        "ga": {"population_size": 4, "epochs": 3, "mode": "pbt"},
        "space": "pbt_mlp",
        "task": {"n": 200, "hidden": [6]},
    }))
    return p


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(sphere_file(tmp_path)), "--out", str(out), "--seed", "5", "--parallelism", "2"]) == 0
    assert "best fom" in capsys.readouterr().out
    assert len((out / "history.jsonl").read_text().splitlines()) == 3
    snap = yaml.safe_load((out / "config.yaml").read_text())
    assert snap["ga"]["seed"] == 5
    assert json.loads((out / "best.json").read_text())["final_best"]["fom"] >= 0


def test_seed_flag_is_deterministic(tmp_path):
    cfg = sphere_file(tmp_path)
    for name in ("a", "b"):
        assert main(["run", str(cfg), "--out", str(tmp_path / name), "--seed", "11"]) == 0
    assert (tmp_path / "a/history.jsonl").read_bytes() == (tmp_path / "b/history.jsonl").read_bytes()


def test_pbt_then_export_schedule(tmp_path, capsys):
    out = tmp_path / "pbt"
    assert main(["pbt", str(pbt_file(tmp_path)), "--out", str(out)]) == 0
    (out / "schedule.csv").unlink()
    capsys.readouterr()
    assert main(["export-schedule", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "generation,learning_rate,weight_decay,dropout"
    assert len(lines) == 4
    assert (out / "schedule.csv").exists()


def test_export_schedule_of_traditional_run_fails(tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", str(sphere_file(tmp_path)), "--out", str(out)])
    assert main(["export-schedule", str(out)]) == 2
    assert "pbt" in capsys.readouterr().err


def test_mode_mismatch(tmp_path):
    assert main(["run", str(pbt_file(tmp_path))]) == 2
    assert main(["pbt", str(sphere_file(tmp_path))]) == 2


def test_bad_config(tmp_path):
    assert main(["run", str(sphere_file(tmp_path, mutation_rate=2.0))]) == 2
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2


def test_gradcheck(capsys):
    assert main(["gradcheck", "--layers", "2,12,12,3", "--n-params", "80"]) == 0
    assert "ok" in capsys.readouterr().out


def test_gradcheck_bad_layers():
    assert main(["gradcheck", "--layers", "5,4,3"]) == 2


def test_report(tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", str(sphere_file(tmp_path)), "--out", str(out)])
    assert main(["report", str(out), "--baseline-budget", "16"]) == 0
    assert (out / "summary.csv").exists() and (out / "baseline.csv").exists()


def test_bundled_experiment_by_name(tmp_path):
    assert main(["run", "sphere", "--out", str(tmp_path / "s"), "--generations", "2"]) == 0
    assert len((tmp_path / "s/history.jsonl").read_text().splitlines()) == 2


def test_systemic_failure_exit_code(tmp_path, monkeypatch):
    import evohpo.checkpoints as mod

    def broken(path, data):
        raise OSError("read-only")

    monkeypatch.setattr(mod, "_atomic_write", broken)
    assert main(["pbt", str(pbt_file(tmp_path)), "--out", str(tmp_path / "p")]) == 1


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "evohpo.cli", "gradcheck", "--n-params", "10"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        main([])


@pytest.mark.parametrize("name", ["sphere", "pbt_spirals", "time_to_accuracy"])
def test_bundled_experiments_load(name):
    from evohpo.cli import resolve_experiment
    from evohpo.orchestrator import build_evaluator

    exp = resolve_experiment(name)
    assert exp.config.problems() == []
    if exp.config.mode == "traditional":
        build_evaluator(exp.config, exp.space)
