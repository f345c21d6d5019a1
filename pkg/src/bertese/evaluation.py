"""Precision@1 metrics, per-system evaluation reports, the four-way
loss ablation, and rewrite analysis over the synthetic token categories.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .predictor import PredictorModel
from .rewriter import RewriterModel, infer_answers, nearest_row_sqdist
from .vocab import MASK, ClozeQuery, decode_tokens
from .world import World

SYSTEMS = ("zero-shot", "ft", "bertese")


@dataclass
class QueryRecord:
    relation: str
    tokens: tuple[int, ...]
    gold: int
    predicted: int
    correct: bool
    prob: float
    rewritten_ids: tuple[int, ...] | None = None
    mask_position: int | None = None
    raw_projected_ids: tuple[int, ...] | None = None


@dataclass
class EvalReport:
    system: str
    config_digest: str
    macro_p_at_1: float
    per_relation: dict[str, float]
    counts: dict[str, int]
    records: list[QueryRecord]
    warnings: list[str] = field(default_factory=list)


def precision_at_1(records: list[QueryRecord]) -> float:
    """Fraction of records whose prediction matches the gold answer."""
    if not records:
        raise ValueError("precision_at_1: empty record list")
    return sum(r.correct for r in records) / len(records)


def macro_p_at_1(
    records: list[QueryRecord], relations: list[str] | None = None
) -> tuple[float, dict[str, float], list[str]]:
    """Average within relations first, then across relations. Relations
    with no records are excluded from the mean with a warning."""
    by_relation: dict[str, list[QueryRecord]] = {}
    for r in records:
        by_relation.setdefault(r.relation, []).append(r)
    if relations is None:
        relations = sorted(by_relation)
    warnings = []
    per_relation = {}
    for rel in relations:
        if not by_relation.get(rel):
            warnings.append(f"relation {rel} has no queries; excluded from macro average")
            continue
        per_relation[rel] = precision_at_1(by_relation[rel])
    if not per_relation:
        raise ValueError("macro_p_at_1: no relation has any queries")
    macro = sum(per_relation.values()) / len(per_relation)
    return macro, per_relation, warnings


def predict_mask_tokens(model: PredictorModel, queries) -> list[tuple[int, float]]:
    """Batched predict_mask_token over arbitrary-length queries."""
    results: dict[int, tuple[int, float]] = {}
    by_len: dict[int, list[int]] = {}
    for i, q in enumerate(queries):
        by_len.setdefault(len(q), []).append(i)
    for _, indices in sorted(by_len.items()):
        ids = np.array([list(queries[i].tokens) for i in indices], dtype=np.int64)
        with T.no_grad():
            out = model.forward_tokens(ids)
        for row, qi in enumerate(indices):
            results[qi] = out.top_token(row, queries[qi].mask_index)
    return [results[i] for i in range(len(queries))]


def evaluate_model(
    system: str,
    queries: list[ClozeQuery],
    predictor: PredictorModel,
    rewriter: RewriterModel | None = None,
    ft_model: PredictorModel | None = None,
    config_digest: str = "",
    relations: list[str] | None = None,
) -> EvalReport:
    """Run one system's answer path over a query set."""
    if system not in SYSTEMS:
        raise ValueError(f"system must be one of {SYSTEMS}, got {system!r}")
    records: list[QueryRecord] = []
    if system == "bertese":
        if rewriter is None:
            raise ValueError("bertese evaluation needs a rewriter")
        for q, res in zip(queries, infer_answers(rewriter, predictor, queries)):
            records.append(QueryRecord(
                relation=q.relation, tokens=q.tokens, gold=q.answer,
                predicted=res.answer, correct=res.answer == q.answer,
                prob=res.answer_prob, rewritten_ids=res.rewritten_ids,
                mask_position=res.mask_position,
                raw_projected_ids=res.raw_projected_ids,
            ))
    else:
        model = predictor if system == "zero-shot" else ft_model
        if model is None:
            raise ValueError("ft evaluation needs the fine-tuned model")
        for q, (pred, prob) in zip(queries, predict_mask_tokens(model, queries)):
            records.append(QueryRecord(
                relation=q.relation, tokens=q.tokens, gold=q.answer,
                predicted=pred, correct=pred == q.answer, prob=prob,
            ))
    macro, per_relation, warnings = macro_p_at_1(records, relations)
    return EvalReport(
        system=system,
        config_digest=config_digest,
        macro_p_at_1=macro,
        per_relation=per_relation,
        counts={"queries": len(records), "correct": sum(r.correct for r in records)},
        records=records,
        warnings=warnings,
    )


def save_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(report), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_report(path) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    records = [
        QueryRecord(**{
            k: tuple(v) if isinstance(v, list) else v for k, v in r.items()
        })
        for r in raw.pop("records")
    ]
    return EvalReport(records=records, **raw)


def summary_table(rows: list[tuple[str, float, int]]) -> str:
    """Three-column text table: system, macro P@1, query count."""
    lines = [f"{'system':<24}{'macro P@1':>12}{'queries':>10}"]
    for name, macro, count in rows:
        lines.append(f"{name:<24}{100.0 * macro:>11.1f}{count:>10d}")
    return "\n".join(lines) + "\n"


# --- rewrite statistics and ablation ----------------------------------------


def rewrite_stats(
    rewriter: RewriterModel, predictor: PredictorModel, queries
) -> dict[str, float]:
    """Off-manifold distance and raw multi-[MASK] statistics of rewrites."""
    table = predictor.embedding_table.data
    total_positions = 0
    dist_sum = 0.0
    mask_counts = []
    by_len: dict[int, list[int]] = {}
    for i, q in enumerate(queries):
        by_len.setdefault(len(q), []).append(i)
    for n, indices in sorted(by_len.items()):
        ids = np.array([list(queries[i].tokens) for i in indices], dtype=np.int64)
        with T.no_grad():
            q_hat = rewriter.rewrite_batch(ids).data
        flat = np.ascontiguousarray(q_hat.reshape(-1, q_hat.shape[-1]))
        nearest, d2 = nearest_row_sqdist(flat, table)
        dist_sum += float(d2.sum())
        total_positions += flat.shape[0]
        projected = nearest.reshape(len(indices), n)
        mask_counts.extend(int((row == MASK).sum()) for row in projected)
    multi = sum(1 for c in mask_counts if c > 1)
    return {
        "mean_nn_dist": dist_sum / total_positions,
        "multi_mask_queries": multi,
        "mean_mask_count": sum(mask_counts) / len(mask_counts),
    }


ABLATION_VARIANTS = ("none", "sml_only", "vtl_only", "full")


def ablation_lambdas(variant: str, lambda1: float, lambda2: float) -> tuple[float, float]:
    return {
        "none": (0.0, 0.0),
        "sml_only": (0.0, lambda2),
        "vtl_only": (lambda1, 0.0),
        "full": (lambda1, lambda2),
    }[variant]


def ablation_table(results: dict[str, dict]) -> str:
    header = (
        f"{'variant':<12}{'macro P@1':>12}{'mean NN dist':>14}"
        f"{'multi-mask':>12}{'mean masks':>12}  config"
    )
    lines = [header]
    for variant in ABLATION_VARIANTS:
        r = results[variant]
        lines.append(
            f"{variant:<12}{100.0 * r['macro_p_at_1']:>11.1f}"
            f"{r['mean_nn_dist']:>14.5f}{r['multi_mask_queries']:>12d}"
            f"{r['mean_mask_count']:>12.3f}  {r['config_digest']}"
        )
    return "\n".join(lines) + "\n"


# --- rewrite analysis --------------------------------------------------------


def analyze_rewrites(report: EvalReport, world: World, top_k: int = 10) -> dict:
    """Position-aligned input/rewrite comparison over the eval records."""
    vocab = world.vocab
    replacements = Counter()
    category_counts = Counter()
    replaced = 0
    total_positions = 0
    multi_mask = 0
    examples: dict[tuple[str, str], str] = {}
    for record in report.records:
        if record.rewritten_ids is None:
            continue
        total_positions += len(record.tokens)
        if record.raw_projected_ids is not None:
            if sum(1 for t in record.raw_projected_ids if t == MASK) > 1:
                multi_mask += 1
        for orig, new in zip(record.tokens, record.rewritten_ids):
            if orig == new:
                continue
            replaced += 1
            orig_tok, new_tok = vocab.token_of(orig), vocab.token_of(new)
            replacements[(orig_tok, new_tok)] += 1
            category_counts[world.token_category.get(orig_tok, "special")] += 1
            examples.setdefault(
                (orig_tok, new_tok), decode_tokens(record.tokens, vocab)
            )
    rate = replaced / total_positions if total_positions else 0.0
    category_pct = {
        cat: 100.0 * count / replaced for cat, count in sorted(category_counts.items())
    } if replaced else {}
    top = [
        {"original": o, "rewritten": n, "count": c, "example": examples[(o, n)]}
        for (o, n), c in replacements.most_common(top_k)
    ]
    return {
        "replacement_rate": rate,
        "replaced_positions": replaced,
        "total_positions": total_positions,
        "category_percentages": category_pct,
        "top_replacements": top,
        "multi_mask_rewrites": multi_mask,
    }


def analysis_text(analysis: dict) -> str:
    lines = [
        f"replacement rate: {100.0 * analysis['replacement_rate']:.2f}% "
        f"({analysis['replaced_positions']}/{analysis['total_positions']} positions)",
        f"rewrites with multiple raw [MASK] projections: {analysis['multi_mask_rewrites']}",
        "",
        "replaced-token categories:",
    ]
    for cat, pct in analysis["category_percentages"].items():
        lines.append(f"  {cat:<14}{pct:>7.1f}%")
    lines.append("")
    lines.append("most frequent replacements:")
    for entry in analysis["top_replacements"]:
        lines.append(
            f"  {entry['original']} -> {entry['rewritten']}  x{entry['count']}"
            f"   e.g. {entry['example']}"
        )
    return "\n".join(lines) + "\n"
