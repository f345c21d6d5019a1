"""Training stages and run orchestration.

Stage order: world generation, predictor MLM pretraining (canonical
sentences only), rewriter identity pretraining (canonical + perturbed
train pool, decode measured on the held-out perturbed split), BERTese
training with the predictor frozen, and the fine-tuned-predictor
baseline. Each stage derives its own named random streams from the one
run seed, consumes only earlier-stage artifacts, and writes its own
checkpoint and metrics log, so completed stages are individually
reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import ConfigError, RunConfig, config_digest, config_to_ini
from .evaluation import (
    ABLATION_VARIANTS,
    ablation_lambdas,
    ablation_table,
    analysis_text,
    analyze_rewrites,
    evaluate_model,
    load_report,
    rewrite_stats,
    save_report,
    summary_table,
)
from .optim import AdamW
from .predictor import PredictorModel, masked_cross_entropy, mlm_train_step
from .rewriter import RewriterModel, bertese_loss, identity_pretrain_loss, project_to_tokens
from .seeding import derived_rng
from .tensor import Tensor, no_grad
from .world import World, generate_world, load_world, save_world

WORLD_FILE = "world.json"
PREDICTOR_CKPT = "predictor.ckpt"
IDENTITY_CKPT = "rewriter_identity.ckpt"
BERTESE_CKPT = "rewriter_bertese.ckpt"
FT_CKPT = "ft_predictor.ckpt"
EFFECTIVE_CFG = "effective.cfg"


class StageError(RuntimeError):
    """A training stage missed its required criterion."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"{stage}: {message}")


class MissingArtifactError(FileNotFoundError):
    """A required input artifact is absent; names the command that makes it."""

    def __init__(self, path: Path, producer: str):
        self.producer = producer
        super().__init__(f"missing {path.name}; run `bertese {producer}` first")


class RunLog:
    """JSONL metrics stream: one object per logging step."""

    def __init__(self, path):
        self._fh = open(path, "w", encoding="utf-8")

    def log(self, stage, epoch, step, f1=None, f2=None, f_ce=None, L=None, **extra):
        record = {"stage": stage, "epoch": epoch, "step": step,
                  "f1": f1, "f2": f2, "f_ce": f_ce, "L": L}
        for key, value in extra.items():
            if value is not None:
                record[key] = value
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return path


def length_bucketed_batches(lengths, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches whose members all share one length."""
    order = rng.permutation(len(lengths))
    buckets: dict[int, list[int]] = {}
    for idx in order:
        buckets.setdefault(int(lengths[idx]), []).append(int(idx))
    for length in sorted(buckets):
        bucket = buckets[length]
        for start in range(0, len(bucket), batch_size):
            yield bucket[start : start + batch_size]


# --- stages -------------------------------------------------------------------


def train_predictor_stage(
    cfg: RunConfig, world: World, log: RunLog
) -> tuple[PredictorModel, dict]:
    stage = cfg.predictor_stage
    pcfg = cfg.predictor_config(len(world.vocab))
    if world.max_query_len() > pcfg.max_len:
        raise ConfigError(
            f"config key predictor.max_len: {pcfg.max_len} is smaller than the "
            f"longest world query ({world.max_query_len()})"
        )
    model = PredictorModel.init(pcfg, derived_rng(cfg.run.seed, "predictor-init"))

    sentences = world.fact_sentences()
    corpus = []
    for fact, sent in zip(world.facts, sentences):
        corpus.append((sent, sent.index(world.vocab.id_of(fact.object))))
    lengths = [len(s) for s, _ in corpus]

    opt = AdamW(model.params, stage.learning_rate)
    mlm_rng = derived_rng(cfg.run.seed, "predictor-mlm")
    shuffle_rng = derived_rng(cfg.run.seed, "predictor-shuffle")

    p_at_1 = 0.0
    step = 0
    epochs_run = 0
    for epoch in range(stage.epochs):
        epochs_run = epoch + 1
        losses = []
        for indices in length_bucketed_batches(lengths, stage.batch_size, shuffle_rng):
            loss = mlm_train_step(model, [corpus[i] for i in indices], mlm_rng, opt)
            step += 1
            if not math.isfinite(loss):
                raise StageError("train-predictor", f"non-finite loss at step {step}")
            losses.append(loss)
        mean_loss = sum(losses) / len(losses)
        evaluated = (epoch + 1) % stage.eval_every == 0 or epoch == stage.epochs - 1
        if evaluated:
            p_at_1 = evaluate_model("zero-shot", world.canonical, model).macro_p_at_1
        log.log("predictor", epoch, step, f_ce=mean_loss, L=mean_loss,
                p_at_1=p_at_1 if evaluated else None)
        if evaluated and p_at_1 >= stage.target_p_at_1:
            break
    if p_at_1 < stage.fail_p_at_1:
        raise StageError(
            "train-predictor",
            f"canonical P@1 {p_at_1:.3f} is below the {stage.fail_p_at_1} "
            "stage-failure threshold",
        )
    return model, {"canonical_p_at_1": p_at_1, "epochs_run": epochs_run}


def decode_accuracy(rewriter: RewriterModel, predictor: PredictorModel, queries) -> float:
    """Fraction of queries whose rewrite projects back to the exact
    input ids at every position."""
    table = predictor.embedding_table.data
    correct = 0
    by_len: dict[int, list[int]] = {}
    for i, q in enumerate(queries):
        by_len.setdefault(len(q), []).append(i)
    for n, indices in sorted(by_len.items()):
        ids = np.array([list(queries[i].tokens) for i in indices], dtype=np.int64)
        with no_grad():
            q_hat = rewriter.rewrite_batch(ids).data
        flat = np.ascontiguousarray(q_hat.reshape(-1, q_hat.shape[-1]))
        projected = project_to_tokens(flat, table).reshape(len(indices), n)
        correct += int((projected == ids).all(axis=1).sum())
    return correct / len(queries)


def pretrain_rewriter_stage(
    cfg: RunConfig, world: World, predictor: PredictorModel, log: RunLog
) -> tuple[RewriterModel, dict]:
    stage = cfg.identity_stage
    rewriter = RewriterModel.from_predictor(predictor)
    pool = list(world.canonical) + list(world.perturbed_train)
    lengths = [len(q) for q in pool]
    table = predictor.embedding_table.data

    opt = AdamW(rewriter.params, stage.learning_rate)
    shuffle_rng = derived_rng(cfg.run.seed, "identity-shuffle")

    acc = 0.0
    step = 0
    epochs_run = 0
    for epoch in range(stage.epochs):
        epochs_run = epoch + 1
        losses = []
        for indices in length_bucketed_batches(lengths, stage.batch_size, shuffle_rng):
            ids = np.array([list(pool[i].tokens) for i in indices], dtype=np.int64)
            target = Tensor(table[ids])
            loss = identity_pretrain_loss(rewriter.rewrite_batch(ids), target)
            step += 1
            if not math.isfinite(loss.item()):
                raise StageError("pretrain-rewriter", f"non-finite loss at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        mean_loss = sum(losses) / len(losses)
        evaluated = (epoch + 1) % stage.eval_every == 0 or epoch == stage.epochs - 1
        if evaluated:
            acc = decode_accuracy(rewriter, predictor, world.perturbed_eval)
        log.log("identity", epoch, step, L=mean_loss,
                decode_acc=acc if evaluated else None)
        if evaluated and acc >= stage.target_decode:
            break
    if acc < stage.fail_decode:
        raise StageError(
            "pretrain-rewriter",
            f"held-out decode accuracy {acc:.4f} is below the "
            f"{stage.fail_decode} stage-failure threshold",
        )
    return rewriter, {"decode_accuracy": acc, "epochs_run": epochs_run}


def train_bertese_stage(
    cfg: RunConfig,
    world: World,
    predictor: PredictorModel,
    rewriter: RewriterModel,
    log: RunLog,
    stage_name: str = "bertese",
) -> tuple[RewriterModel, dict]:
    stage = cfg.bertese_stage
    digest_before = ckpt.predictor_digest(predictor)
    predictor.set_trainable(False)
    queries = world.perturbed_train
    lengths = [len(q) for q in queries]
    p_at_1 = 0.0
    try:
        opt = AdamW(rewriter.params, stage.learning_rate)
        shuffle_rng = derived_rng(cfg.run.seed, "bertese-shuffle")
        step = 0
        for epoch in range(stage.epochs):
            sums = {"f1": 0.0, "f2": 0.0, "f_ce": 0.0, "L": 0.0}
            count = 0
            for batch_index, indices in enumerate(
                length_bucketed_batches(lengths, stage.batch_size, shuffle_rng)
            ):
                ids = np.array([list(queries[i].tokens) for i in indices], dtype=np.int64)
                answers = np.array([queries[i].answer for i in indices], dtype=np.int64)
                total, br = bertese_loss(
                    rewriter, predictor, ids, answers,
                    stage.lambda1, stage.lambda2,
                    ste_mode=stage.ste_mode, snap_input=stage.snap_input,
                )
                if not math.isfinite(br.total):
                    raise StageError(
                        stage_name,
                        f"non-finite loss at epoch {epoch} batch {batch_index}",
                    )
                opt.zero_grad()
                total.backward()
                opt.step()
                step += 1
                count += 1
                sums["f1"] += br.f1
                sums["f2"] += br.f2
                sums["f_ce"] += br.f_ce
                sums["L"] += br.total
            p_at_1 = evaluate_model(
                "bertese", world.perturbed_eval, predictor, rewriter=rewriter
            ).macro_p_at_1
            log.log(stage_name, epoch, step,
                    f1=sums["f1"] / count, f2=sums["f2"] / count,
                    f_ce=sums["f_ce"] / count, L=sums["L"] / count, p_at_1=p_at_1,
                    beta=float(np.exp(rewriter.params["log_beta"].data[0])))
    finally:
        predictor.set_trainable(True)
    digest_after = ckpt.predictor_digest(predictor)
    if digest_after != digest_before:
        raise StageError(stage_name, "predictor parameters changed; freeze violated")
    return rewriter, {
        "eval_p_at_1": p_at_1,
        "predictor_digest_before": digest_before,
        "predictor_digest_after": digest_after,
    }


def train_ft_baseline(
    cfg: RunConfig, world: World, predictor: PredictorModel, log: RunLog
) -> tuple[PredictorModel, dict]:
    stage = cfg.ft_stage
    digest_before = ckpt.predictor_digest(predictor)
    ft_model = PredictorModel(
        predictor.config,
        {n: Tensor(p.data.copy(), requires_grad=True) for n, p in predictor.params.items()},
    )
    queries = world.perturbed_train
    lengths = [len(q) for q in queries]
    opt = AdamW(ft_model.params, stage.learning_rate)
    shuffle_rng = derived_rng(cfg.run.seed, "ft-shuffle")

    p_at_1 = 0.0
    step = 0
    for epoch in range(stage.epochs):
        losses = []
        for indices in length_bucketed_batches(lengths, stage.batch_size, shuffle_rng):
            ids = np.array([list(queries[i].tokens) for i in indices], dtype=np.int64)
            positions = np.array([queries[i].mask_index for i in indices], dtype=np.int64)
            answers = np.array([queries[i].answer for i in indices], dtype=np.int64)
            loss = masked_cross_entropy(ft_model.forward_tokens(ids), positions, answers)
            if not math.isfinite(loss.item()):
                raise StageError("train-ft-baseline", f"non-finite loss at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            losses.append(loss.item())
        p_at_1 = evaluate_model(
            "ft", world.perturbed_eval, predictor, ft_model=ft_model
        ).macro_p_at_1
        log.log("ft", epoch, step, f_ce=sum(losses) / len(losses),
                L=sum(losses) / len(losses), p_at_1=p_at_1)
    if ckpt.predictor_digest(predictor) != digest_before:
        raise StageError("train-ft-baseline", "original predictor was modified")
    return ft_model, {"eval_p_at_1": p_at_1}


# --- per-command orchestration -------------------------------------------------


def prepare_out_dir(cfg: RunConfig) -> Path:
    out_dir = Path(cfg.run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / EFFECTIVE_CFG).write_text(config_to_ini(cfg), encoding="utf-8")
    return out_dir


def cmd_gen_world(cfg: RunConfig, force: bool) -> str:
    out_dir = prepare_out_dir(cfg)
    path = out_dir / WORLD_FILE
    if path.exists() and not force:
        return f"{WORLD_FILE} already exists (use --force to regenerate)"
    world = generate_world(cfg.world_spec())
    save_world(world, path)
    return (
        f"world: {len(world.facts)} facts, {len(world.canonical)} canonical, "
        f"{len(world.perturbed_train)}+{len(world.perturbed_eval)} perturbed "
        f"train+eval queries, vocab {len(world.vocab)}"
    )


def _load_world(cfg: RunConfig, out_dir: Path) -> World:
    return load_world(require(out_dir / WORLD_FILE, "gen-world"))


def cmd_train_predictor(cfg: RunConfig, force: bool) -> str:
    out_dir = prepare_out_dir(cfg)
    path = out_dir / PREDICTOR_CKPT
    if path.exists() and not force:
        return f"{PREDICTOR_CKPT} already exists (use --force to retrain)"
    world = _load_world(cfg, out_dir)
    with RunLog(out_dir / "run_log_predictor.jsonl") as log:
        model, metrics = train_predictor_stage(cfg, world, log)
    ckpt.save_predictor(path, model)
    return (
        f"predictor: canonical P@1 {metrics['canonical_p_at_1']:.3f} "
        f"after {metrics['epochs_run']} epochs"
    )


def cmd_pretrain_rewriter(cfg: RunConfig, force: bool) -> str:
    out_dir = prepare_out_dir(cfg)
    path = out_dir / IDENTITY_CKPT
    if path.exists() and not force:
        return f"{IDENTITY_CKPT} already exists (use --force to retrain)"
    world = _load_world(cfg, out_dir)
    predictor = ckpt.load_predictor(require(out_dir / PREDICTOR_CKPT, "train-predictor"))
    with RunLog(out_dir / "run_log_identity.jsonl") as log:
        rewriter, metrics = pretrain_rewriter_stage(cfg, world, predictor, log)
    ckpt.save_rewriter(path, rewriter)
    return (
        f"identity rewriter: held-out decode accuracy "
        f"{metrics['decode_accuracy']:.4f} after {metrics['epochs_run']} epochs"
    )


def cmd_train_bertese(cfg: RunConfig, force: bool) -> str:
    out_dir = prepare_out_dir(cfg)
    path = out_dir / BERTESE_CKPT
    if path.exists() and not force:
        return f"{BERTESE_CKPT} already exists (use --force to retrain)"
    world = _load_world(cfg, out_dir)
    predictor = ckpt.load_predictor(require(out_dir / PREDICTOR_CKPT, "train-predictor"))
    rewriter = ckpt.load_rewriter(require(out_dir / IDENTITY_CKPT, "pretrain-rewriter"))
    with RunLog(out_dir / "run_log_bertese.jsonl") as log:
        rewriter, metrics = train_bertese_stage(cfg, world, predictor, rewriter, log)
    ckpt.save_rewriter(path, rewriter)
    return f"bertese: eval P@1 {metrics['eval_p_at_1']:.3f}"


def cmd_train_ft_baseline(cfg: RunConfig, force: bool) -> str:
    out_dir = prepare_out_dir(cfg)
    path = out_dir / FT_CKPT
    if path.exists() and not force:
        return f"{FT_CKPT} already exists (use --force to retrain)"
    world = _load_world(cfg, out_dir)
    predictor = ckpt.load_predictor(require(out_dir / PREDICTOR_CKPT, "train-predictor"))
    with RunLog(out_dir / "run_log_ft.jsonl") as log:
        ft_model, metrics = train_ft_baseline(cfg, world, predictor, log)
    ckpt.save_predictor(path, ft_model)
    return f"ft baseline: eval P@1 {metrics['eval_p_at_1']:.3f}"


def eval_report_path(out_dir: Path, system: str) -> Path:
    return out_dir / f"eval_{system.replace('-', '_')}.json"


def cmd_evaluate(cfg: RunConfig, system: str, force: bool) -> str:
    out_dir = prepare_out_dir(cfg)
    path = eval_report_path(out_dir, system)
    if path.exists() and not force:
        return f"{path.name} already exists (use --force to re-evaluate)"
    world = _load_world(cfg, out_dir)
    predictor = ckpt.load_predictor(require(out_dir / PREDICTOR_CKPT, "train-predictor"))
    rewriter = ft_model = None
    if system == "bertese":
        rewriter = ckpt.load_rewriter(require(out_dir / BERTESE_CKPT, "train-bertese"))
    elif system == "ft":
        ft_model = ckpt.load_predictor(require(out_dir / FT_CKPT, "train-ft-baseline"))
    report = evaluate_model(
        system, list(world.perturbed_eval), predictor,
        rewriter=rewriter, ft_model=ft_model, config_digest=config_digest(cfg),
    )
    save_report(report, path)
    return f"{system}: eval macro P@1 {report.macro_p_at_1:.3f} -> {path.name}"


def cmd_ablate(cfg: RunConfig, force: bool) -> str:
    out_dir = prepare_out_dir(cfg)
    table_path = out_dir / "ablation_table.txt"
    if table_path.exists() and not force:
        return "ablation_table.txt already exists (use --force to rerun)"
    world = _load_world(cfg, out_dir)
    predictor = ckpt.load_predictor(require(out_dir / PREDICTOR_CKPT, "train-predictor"))
    identity_path = require(out_dir / IDENTITY_CKPT, "pretrain-rewriter")
    results: dict[str, dict] = {}
    for variant in ABLATION_VARIANTS:
        l1, l2 = ablation_lambdas(
            variant, cfg.bertese_stage.lambda1, cfg.bertese_stage.lambda2
        )
        vcfg = replace(cfg, bertese_stage=replace(
            cfg.bertese_stage, lambda1=l1, lambda2=l2
        ))
        rewriter = ckpt.load_rewriter(identity_path)
        with RunLog(out_dir / f"run_log_ablation_{variant}.jsonl") as log:
            rewriter, metrics = train_bertese_stage(
                vcfg, world, predictor, rewriter, log,
                stage_name=f"ablation_{variant}",
            )
        ckpt.save_rewriter(out_dir / f"rewriter_ablation_{variant}.ckpt", rewriter)
        stats = rewrite_stats(rewriter, predictor, world.perturbed_eval)
        results[variant] = {
            "lambda1": l1, "lambda2": l2,
            "macro_p_at_1": metrics["eval_p_at_1"],
            "config_digest": config_digest(vcfg),
            **stats,
        }
    with open(out_dir / "ablations.json", "w", encoding="utf-8") as fh:
        json.dump(results, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    table = ablation_table(results)
    table_path.write_text(table, encoding="utf-8")
    return table.rstrip("\n")


def cmd_analyze(cfg: RunConfig, force: bool) -> str:
    out_dir = prepare_out_dir(cfg)
    path = out_dir / "analysis.txt"
    if path.exists() and not force:
        return "analysis.txt already exists (use --force to rerun)"
    world = _load_world(cfg, out_dir)
    report_path = require(eval_report_path(out_dir, "bertese"), "evaluate --system bertese")
    analysis = analyze_rewrites(load_report(report_path), world)
    with open(out_dir / "analysis.json", "w", encoding="utf-8") as fh:
        json.dump(analysis, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    text = analysis_text(analysis)
    path.write_text(text, encoding="utf-8")
    return (
        f"rewrite analysis: replacement rate "
        f"{100.0 * analysis['replacement_rate']:.2f}%, "
        f"{analysis['multi_mask_rewrites']} multi-[MASK] rewrites -> analysis.txt"
    )


def cmd_run_all(cfg: RunConfig, force: bool) -> list[str]:
    """Full pipeline in order; existing artifacts are reused unless forced."""
    out_dir = prepare_out_dir(cfg)
    messages = []

    messages.append(cmd_gen_world(cfg, force))
    world = load_world(out_dir / WORLD_FILE)

    messages.append(cmd_train_predictor(cfg, force))
    predictor = ckpt.load_predictor(out_dir / PREDICTOR_CKPT)

    messages.append(cmd_pretrain_rewriter(cfg, force))
    messages.append(cmd_train_bertese(cfg, force))
    messages.append(cmd_train_ft_baseline(cfg, force))

    for system in ("zero-shot", "ft", "bertese"):
        messages.append(cmd_evaluate(cfg, system, force))
    messages.append(cmd_analyze(cfg, force))

    canonical = evaluate_model("zero-shot", list(world.canonical), predictor)
    rows = [("zero-shot (canonical)", canonical.macro_p_at_1,
             canonical.counts["queries"])]
    for system in ("zero-shot", "ft", "bertese"):
        report = load_report(eval_report_path(out_dir, system))
        rows.append((system, report.macro_p_at_1, report.counts["queries"]))
    table = summary_table(rows)
    (out_dir / "eval_summary.txt").write_text(table, encoding="utf-8")
    messages.append(table.rstrip("\n"))
    return messages
