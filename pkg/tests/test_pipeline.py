"""Stage-level pipeline tests on a miniature world: artifact flow, gate
behavior, freeze guarantees, and batching properties."""

import json

import numpy as np
import pytest

from bertese import checkpoint as ckpt
from bertese.config import ConfigError, load_config
from bertese.pipeline import (
    MissingArtifactError,
    RunLog,
    StageError,
    cmd_analyze,
    cmd_evaluate,
    cmd_gen_world,
    cmd_run_all,
    cmd_train_bertese,
    cmd_train_predictor,
    decode_accuracy,
    length_bucketed_batches,
    pretrain_rewriter_stage,
    train_bertese_stage,
    train_ft_baseline,
    train_predictor_stage,
)
from bertese.seeding import derived_rng
from bertese.world import generate_world, load_world

TINY = [
    "world.relation_count=2", "world.entities_per_relation=4",
    "world.objects_per_relation=2",
    "predictor.dim=16", "predictor.heads=2", "predictor.ffn_dim=32",
    "predictor_stage.epochs=2", "predictor_stage.eval_every=1",
    "predictor_stage.target_p_at_1=0.0", "predictor_stage.fail_p_at_1=0.0",
    "identity_stage.epochs=2", "identity_stage.eval_every=1",
    "identity_stage.target_decode=0.0", "identity_stage.fail_decode=0.0",
    "bertese_stage.epochs=2", "ft_stage.epochs=1",
]


def tiny_cfg(tmp_path, extra=()):
    return load_config(None, [f"run.out_dir={tmp_path}"] + TINY + list(extra))


def test_length_bucketed_batches_cover_all_uniformly():
    lengths = [4, 5, 4, 4, 5, 4, 4]
    rng = np.random.default_rng(0)
    batches = list(length_bucketed_batches(lengths, 3, rng))
    seen = [i for b in batches for i in b]
    assert sorted(seen) == list(range(len(lengths)))
    for batch in batches:
        assert len({lengths[i] for i in batch}) == 1
        assert len(batch) <= 3


def test_length_bucketed_batches_deterministic_per_seed():
    lengths = [4] * 10 + [6] * 7
    a = list(length_bucketed_batches(lengths, 4, np.random.default_rng(9)))
    b = list(length_bucketed_batches(lengths, 4, np.random.default_rng(9)))
    c = list(length_bucketed_batches(lengths, 4, np.random.default_rng(10)))
    assert a == b
    assert a != c


def test_run_all_produces_artifacts_and_resumes(tmp_path):
    cfg = tiny_cfg(tmp_path)
    messages = cmd_run_all(cfg, force=False)
    expected = [
        "world.json", "predictor.ckpt", "rewriter_identity.ckpt",
        "rewriter_bertese.ckpt", "ft_predictor.ckpt",
        "eval_zero_shot.json", "eval_ft.json", "eval_bertese.json",
        "eval_summary.txt", "analysis.json", "analysis.txt", "effective.cfg",
        "run_log_predictor.jsonl", "run_log_identity.jsonl",
        "run_log_bertese.jsonl", "run_log_ft.jsonl",
    ]
    for name in expected:
        assert (tmp_path / name).exists(), name
    # resumable: second call leaves the checkpoints untouched
    before = (tmp_path / "predictor.ckpt").read_bytes()
    messages2 = cmd_run_all(cfg, force=False)
    assert any("already exists" in m for m in messages2)
    assert (tmp_path / "predictor.ckpt").read_bytes() == before


def test_run_all_force_rerun_is_byte_identical(tmp_path):
    cfg = tiny_cfg(tmp_path)
    names = ("world.json", "predictor.ckpt", "rewriter_identity.ckpt",
             "rewriter_bertese.ckpt", "ft_predictor.ckpt", "eval_bertese.json",
             "eval_zero_shot.json", "eval_summary.txt", "analysis.json")
    cmd_run_all(cfg, force=False)
    first = {n: (tmp_path / n).read_bytes() for n in names}
    cmd_run_all(cfg, force=True)
    for n in names:
        assert (tmp_path / n).read_bytes() == first[n], n


def test_missing_artifact_names_producer(tmp_path):
    cfg = tiny_cfg(tmp_path)
    with pytest.raises(MissingArtifactError, match="gen-world"):
        cmd_train_predictor(cfg, force=False)
    cmd_gen_world(cfg, force=False)
    with pytest.raises(MissingArtifactError, match="train-predictor"):
        cmd_train_bertese(cfg, force=False)
    with pytest.raises(MissingArtifactError, match="evaluate --system bertese"):
        cmd_analyze(cfg, force=False)


def test_predictor_gate_failure_raises_stage_error(tmp_path):
    cfg = tiny_cfg(tmp_path, ["predictor_stage.fail_p_at_1=0.99",
                              "predictor_stage.epochs=1"])
    world = generate_world(cfg.world_spec())
    with pytest.raises(StageError, match="train-predictor"):
        with RunLog(tmp_path / "log.jsonl") as log:
            train_predictor_stage(cfg, world, log)


def test_identity_gate_failure_raises_stage_error(tmp_path):
    cfg = tiny_cfg(tmp_path, ["identity_stage.fail_decode=1.01",
                              "identity_stage.epochs=1",
                              "identity_stage.learning_rate=10.0"])
    world = generate_world(cfg.world_spec())
    with RunLog(tmp_path / "plog.jsonl") as log:
        predictor, _ = train_predictor_stage(cfg, world, log)
    with pytest.raises(StageError, match="pretrain-rewriter"):
        with RunLog(tmp_path / "ilog.jsonl") as log:
            pretrain_rewriter_stage(cfg, world, predictor, log)


def test_max_len_too_small_is_config_error(tmp_path):
    cfg = tiny_cfg(tmp_path, ["predictor.max_len=4"])
    world = generate_world(cfg.world_spec())
    with pytest.raises(ConfigError, match="max_len"):
        with RunLog(tmp_path / "log.jsonl") as log:
            train_predictor_stage(cfg, world, log)


def stage_inputs(tmp_path, extra=()):
    cfg = tiny_cfg(tmp_path, extra)
    world = generate_world(cfg.world_spec())
    with RunLog(tmp_path / "plog.jsonl") as log:
        predictor, _ = train_predictor_stage(cfg, world, log)
    with RunLog(tmp_path / "ilog.jsonl") as log:
        rewriter, _ = pretrain_rewriter_stage(cfg, world, predictor, log)
    return cfg, world, predictor, rewriter


def test_bertese_stage_freezes_predictor(tmp_path):
    cfg, world, predictor, rewriter = stage_inputs(tmp_path)
    digest = ckpt.predictor_digest(predictor)
    with RunLog(tmp_path / "blog.jsonl") as log:
        _, metrics = train_bertese_stage(cfg, world, predictor, rewriter, log)
    assert ckpt.predictor_digest(predictor) == digest
    assert metrics["predictor_digest_before"] == metrics["predictor_digest_after"]
    # trainability restored for later stages
    assert all(p.requires_grad for p in predictor.params.values())


def test_bertese_stage_trains_the_rewriter(tmp_path):
    cfg, world, predictor, rewriter = stage_inputs(tmp_path)
    before = {n: p.data.copy() for n, p in rewriter.params.items()}
    with RunLog(tmp_path / "blog.jsonl") as log:
        rewriter, _ = train_bertese_stage(cfg, world, predictor, rewriter, log)
    changed = any(not np.array_equal(before[n], p.data)
                  for n, p in rewriter.params.items())
    assert changed


def test_ft_baseline_leaves_original_untouched(tmp_path):
    cfg, world, predictor, _ = stage_inputs(tmp_path)
    digest = ckpt.predictor_digest(predictor)
    with RunLog(tmp_path / "flog.jsonl") as log:
        ft_model, _ = train_ft_baseline(cfg, world, predictor, log)
    assert ckpt.predictor_digest(predictor) == digest
    assert ckpt.predictor_digest(ft_model) != digest


def test_decode_accuracy_on_identity_snapshot(tmp_path):
    cfg, world, predictor, rewriter = stage_inputs(
        tmp_path, ["identity_stage.epochs=30", "identity_stage.eval_every=5",
                   "identity_stage.learning_rate=3e-3",
                   "identity_stage.target_decode=0.99"])
    acc = decode_accuracy(rewriter, predictor, list(world.perturbed_eval))
    assert 0.0 <= acc <= 1.0


def test_run_log_records_stage_fields(tmp_path):
    path = tmp_path / "log.jsonl"
    with RunLog(path) as log:
        log.log("predictor", 0, 13, f_ce=1.5, L=1.5, p_at_1=0.25)
        log.log("bertese", 1, 20, f1=0.1, f2=-0.9, f_ce=0.5, L=0.05)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert rows[0]["stage"] == "predictor"
    assert rows[0]["p_at_1"] == 0.25
    assert rows[0]["f1"] is None
    assert rows[1]["stage"] == "bertese"
    assert rows[1]["f2"] == -0.9
    assert "p_at_1" not in rows[1]


def test_evaluate_requires_checkpoints(tmp_path):
    cfg = tiny_cfg(tmp_path)
    cmd_gen_world(cfg, force=False)
    with pytest.raises(MissingArtifactError, match="train-predictor"):
        cmd_evaluate(cfg, "zero-shot", force=False)
    cmd_train_predictor(cfg, force=False)
    with pytest.raises(MissingArtifactError, match="train-ft-baseline"):
        cmd_evaluate(cfg, "ft", force=False)
    with pytest.raises(MissingArtifactError, match="train-bertese"):
        cmd_evaluate(cfg, "bertese", force=False)
