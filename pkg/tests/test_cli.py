"""Command-line behavior: exit codes, locking, overrides, and messages."""

import pytest

from bertese.cli import main

TINY = [
    "--set", "world.relation_count=2",
    "--set", "world.entities_per_relation=4",
    "--set", "world.objects_per_relation=2",
    "--set", "predictor.dim=16",
    "--set", "predictor.heads=2",
    "--set", "predictor.ffn_dim=32",
    "--set", "predictor_stage.epochs=2",
    "--set", "predictor_stage.eval_every=1",
    "--set", "predictor_stage.target_p_at_1=0.0",
    "--set", "predictor_stage.fail_p_at_1=0.0",
    "--set", "identity_stage.epochs=1",
    "--set", "identity_stage.eval_every=1",
    "--set", "identity_stage.target_decode=0.0",
    "--set", "identity_stage.fail_decode=0.0",
    "--set", "bertese_stage.epochs=1",
    "--set", "ft_stage.epochs=1",
]


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path), *TINY])


def test_gen_world_succeeds(tmp_path, capsys):
    assert run(tmp_path, "gen-world") == 0
    out = capsys.readouterr().out
    assert "world" in out
    assert (tmp_path / "world.json").exists()


def test_no_command_is_usage_error(capsys):
    assert main([]) == 1


def test_unknown_command_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert "invalid choice" in capsys.readouterr().err


def test_bad_override_exits_1_naming_key(tmp_path, capsys):
    code = main(["gen-world", "--out", str(tmp_path),
                 "--set", "world.entities_per_relation=lots"])
    assert code == 1
    err = capsys.readouterr().err
    assert "world.entities_per_relation" in err


def test_unknown_config_key_exits_1(tmp_path, capsys):
    code = main(["gen-world", "--out", str(tmp_path), "--set", "world.metropolis=9"])
    assert code == 1
    assert "metropolis" in capsys.readouterr().err


def test_missing_config_file_exits_1(tmp_path, capsys):
    code = main(["gen-world", "--out", str(tmp_path),
                 "--config", str(tmp_path / "nope.cfg")])
    assert code == 1
    assert "nope.cfg" in capsys.readouterr().err


def test_missing_artifact_exits_1_naming_producer(tmp_path, capsys):
    assert run(tmp_path, "train-predictor") == 1
    assert "gen-world" in capsys.readouterr().err
    assert run(tmp_path, "gen-world") == 0
    assert run(tmp_path, "evaluate", "--system", "bertese") == 1
    err = capsys.readouterr().err
    assert "train-predictor" in err  # predictor checkpoint is checked first


def test_evaluate_requires_system_flag(tmp_path, capsys):
    assert main(["evaluate", "--out", str(tmp_path)]) == 1
    assert main(["evaluate", "--system", "psychic", "--out", str(tmp_path)]) == 1


def test_stage_failure_exits_2(tmp_path, capsys):
    assert run(tmp_path, "gen-world") == 0
    code = main(["train-predictor", "--out", str(tmp_path), *TINY[:-4],
                 "--set", "predictor_stage.fail_p_at_1=0.99",
                 "--set", "predictor_stage.epochs=1"])
    assert code == 2
    err = capsys.readouterr().err
    assert "train-predictor" in err and "0.99" in err


def test_lock_file_blocks_concurrent_runs(tmp_path, capsys):
    tmp_path.mkdir(exist_ok=True)
    (tmp_path / ".lock").write_text("pid 12345\n")
    assert run(tmp_path, "gen-world") == 1
    assert "lock" in capsys.readouterr().err
    (tmp_path / ".lock").unlink()
    assert run(tmp_path, "gen-world") == 0
    assert not (tmp_path / ".lock").exists()  # released after the run


def test_lock_released_after_failure(tmp_path, capsys):
    assert run(tmp_path, "train-predictor") == 1  # missing world.json
    assert not (tmp_path / ".lock").exists()


def test_completed_artifact_skipped_without_force(tmp_path, capsys):
    assert run(tmp_path, "gen-world") == 0
    capsys.readouterr()
    assert run(tmp_path, "gen-world") == 0
    assert "already exists" in capsys.readouterr().out


def test_force_regenerates_byte_identical_world(tmp_path, capsys):
    assert run(tmp_path, "gen-world") == 0
    before = (tmp_path / "world.json").read_bytes()
    assert run(tmp_path, "gen-world", "--force") == 0
    assert (tmp_path / "world.json").read_bytes() == before


def test_run_all_and_ablate_full_inventory(tmp_path, capsys):
    assert run(tmp_path, "run-all") == 0
    out = capsys.readouterr().out
    assert "macro P@1" in out
    assert run(tmp_path, "ablate") == 0
    assert (tmp_path / "ablations.json").exists()
    assert (tmp_path / "ablation_table.txt").exists()
    assert run(tmp_path, "analyze", "--force") == 0
    assert (tmp_path / "analysis.txt").exists()


def test_effective_config_written(tmp_path):
    assert run(tmp_path, "gen-world") == 0
    text = (tmp_path / "effective.cfg").read_text()
    assert "[world]" in text
    assert "entities_per_relation = 4" in text


def test_out_flag_equivalent_to_set_override(tmp_path, capsys):
    code = main(["gen-world", "--set", f"run.out_dir={tmp_path}/x", *TINY])
    assert code == 0
    assert (tmp_path / "x" / "world.json").exists()
