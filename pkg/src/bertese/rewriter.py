"""The trainable query rewriter and its training objective.

The rewriter encodes a cloze query into one vector per input position,
in the predictor's token-embedding space. Training combines three
terms:

  f1   valid-token loss — mean squared distance from each output vector
       to its nearest predictor-embedding row (keeps rewrites decodable);
  f2   single-mask loss — negative max of the softmin mask distribution
       m over positions (keeps exactly one position mask-like);
  f_ce prediction loss — mask-distribution-weighted cross-entropy of the
       gold answer under the frozen predictor, with an optional
       straight-through hard selection of the mask position.

Total: L = f_ce + lambda1 * f1 + lambda2 * f2.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import LN_EPS, encoder_forward
from .predictor import PredictorConfig, PredictorModel, PredictorOutput
from .tensor import ShapeError, Tensor
from .vocab import MASK, ClozeQuery

STE_MODES = ("hard", "soft")


class RewriterModel:
    """Encoder producing embedding-space rewrites, plus the softmin
    temperature beta = exp(log_beta)."""

    def __init__(self, config: PredictorConfig, params: dict[str, Tensor]):
        config.validate()
        if params["log_beta"].shape != (1,):
            raise ShapeError(f"rewriter: log_beta must have shape (1,), got {params['log_beta'].shape}")
        self.config = config
        self.params = params

    @classmethod
    def from_predictor(cls, predictor: PredictorModel) -> "RewriterModel":
        """Initialize as a copy of the predictor (embeddings, positions,
        encoder); the output head is not copied, log_beta starts at 0."""
        params: dict[str, Tensor] = {}
        for name, p in predictor.params.items():
            if name == "out_bias":
                continue
            params[name] = Tensor(p.data.copy(), requires_grad=True)
        params["log_beta"] = Tensor(
            np.zeros(1, dtype=predictor.params["tok_emb"].dtype), requires_grad=True
        )
        return cls(copy.deepcopy(predictor.config), params)

    def beta(self) -> Tensor:
        return T.exp(self.params["log_beta"])

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    def rewrite_batch(self, ids) -> Tensor:
        """(B, n) token ids -> (B, n, d) rewrite vectors."""
        ids = np.asarray(ids, dtype=np.int64)
        cfg = self.config
        if ids.ndim != 2:
            raise ShapeError(f"rewriter: token input must be (B, n), got {ids.shape}")
        n = ids.shape[1]
        if n > cfg.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {cfg.max_len}")
        x = T.gather_rows(self.params["tok_emb"], ids)
        pos = T.gather_rows(self.params["pos_emb"], np.arange(n))
        x = x + T.reshape(pos, (1, n, cfg.dim))
        x = T.layer_norm(x, self.params["emb_ln_gain"], self.params["emb_ln_bias"], eps=LN_EPS)
        return encoder_forward(self.params, x, cfg.layers, cfg.heads)


def rewrite(model: RewriterModel, query: ClozeQuery) -> Tensor:
    """Length-preserving rewrite of one query: (n, d)."""
    q_hat = model.rewrite_batch([list(query.tokens)])
    return T.reshape(q_hat, (len(query), model.config.dim))


# --- loss terms -------------------------------------------------------------


def valid_token_loss(q_hat: Tensor, embedding_table: Tensor) -> Tensor:
    """f1: mean over positions of the squared distance to the nearest
    embedding row. Accepts (n, d) or (B, n, d)."""
    dim = embedding_table.shape[-1]
    flat = q_hat if q_hat.ndim == 2 else T.reshape(q_hat, (-1, dim))
    return T.reduce_mean(T.min_sqdist(flat, embedding_table))


def mask_distribution(q_hat: Tensor, mask_embedding: Tensor, beta: Tensor) -> Tensor:
    """m: softmin over positions of beta-scaled squared distance to the
    [MASK] embedding. Shapes (..., n, d) -> (..., n)."""
    diff = q_hat - mask_embedding
    sqdist = T.reduce_sum(diff * diff, axis=-1)
    return T.softmax(T.neg(beta * sqdist))


def single_mask_loss(m: Tensor) -> Tensor:
    """f2 = -max_i m_i (mean over the batch), in [-1, -1/n]."""
    rows = m if m.ndim == 2 else T.reshape(m, (1, -1))
    top = np.argmax(rows.data, axis=-1)  # lowest index on ties
    return T.neg(T.reduce_mean(T.index_last(rows, top)))


def prediction_loss(
    m: Tensor, predictor_out: PredictorOutput, answers, ste_mode: str = "hard"
) -> Tensor:
    """f_ce = sum_i w_i * ell(y, o_i), mean over the batch.

    Soft mode weights by m directly; hard mode weights by a one-hot at
    argmax(m) whose backward is the straight-through identity, so the
    forward value is ell(y, o_argmax) while gradients through m match
    the soft path.
    """
    if ste_mode not in STE_MODES:
        raise ValueError(f"ste_mode must be one of {STE_MODES}, got {ste_mode!r}")
    logits = predictor_out.logits
    rows = m if m.ndim == 2 else T.reshape(m, (1, -1))
    if rows.shape[-1] != logits.shape[1]:
        raise ShapeError(
            f"prediction_loss: mask distribution {rows.shape} vs logits {logits.shape}"
        )
    batch, n = rows.shape
    y = np.broadcast_to(np.asarray(answers, dtype=np.int64).reshape(-1, 1), (batch, n))
    ell = T.neg(T.index_last(T.log_softmax(logits), y))
    weights = T.ste_hardmax(rows) if ste_mode == "hard" else rows
    return T.reduce_mean(T.reduce_sum(weights * ell, axis=-1))


@dataclass
class LossBreakdown:
    f1: float
    f2: float
    f_ce: float
    lambda1: float
    lambda2: float
    total: float


def total_loss(
    f_ce: Tensor, f1: Tensor, f2: Tensor, lambda1: float, lambda2: float
) -> tuple[Tensor, LossBreakdown]:
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be nonnegative")
    total = f_ce + lambda1 * f1 + lambda2 * f2
    breakdown = LossBreakdown(
        f1=float(f1.data), f2=float(f2.data), f_ce=float(f_ce.data),
        lambda1=lambda1, lambda2=lambda2, total=float(total.data),
    )
    return total, breakdown


def identity_pretrain_loss(q_hat: Tensor, q_target: Tensor) -> Tensor:
    """Mean over positions of the squared distance between the rewrite
    and the embedding rows it should reproduce."""
    if q_hat.shape != q_target.shape:
        raise ShapeError(
            f"identity_pretrain_loss: {q_hat.shape} vs {q_target.shape}"
        )
    diff = q_hat - q_target
    per_position = T.reduce_sum(diff * diff, axis=-1)
    return T.reduce_mean(per_position)


def bertese_loss(
    rewriter: RewriterModel,
    predictor: PredictorModel,
    ids,
    answers,
    lambda1: float,
    lambda2: float,
    ste_mode: str = "hard",
    snap_input: bool = False,
) -> tuple[Tensor, LossBreakdown]:
    """Full training objective on a uniform-length batch of queries."""
    ids = np.asarray(ids, dtype=np.int64)
    batch, n = ids.shape
    dim = rewriter.config.dim
    table = predictor.embedding_table

    q_hat = rewriter.rewrite_batch(ids)
    f1 = valid_token_loss(q_hat, table)
    m = mask_distribution(q_hat, T.gather_rows(table, np.array(MASK)), rewriter.beta())
    f2 = single_mask_loss(m)
    if snap_input:
        snapped = T.snap_to_rows(T.reshape(q_hat, (-1, dim)), table)
        predictor_in = T.reshape(snapped, (batch, n, dim))
    else:
        predictor_in = q_hat
    out = predictor.forward_vectors(predictor_in)
    f_ce = prediction_loss(m, out, answers, ste_mode)
    return total_loss(f_ce, f1, f2, lambda1, lambda2)


# --- inference --------------------------------------------------------------


def nearest_row_sqdist(q: np.ndarray, rows: np.ndarray, chunk: int = 512):
    """Per-point (nearest row index, squared distance), exhaustively and
    exactly, processed in row chunks to bound memory."""
    indices = np.empty(q.shape[0], dtype=np.int64)
    dists = np.empty(q.shape[0], dtype=q.dtype)
    for start in range(0, q.shape[0], chunk):
        block = q[start : start + chunk]
        diff = block[:, None, :] - rows[None, :, :]
        d2 = (diff * diff).sum(axis=2)
        idx = np.argmin(d2, axis=1)
        indices[start : start + chunk] = idx
        dists[start : start + chunk] = d2[np.arange(block.shape[0]), idx]
    return indices, dists


def project_to_tokens(q_hat, embedding_table) -> np.ndarray:
    """Exhaustive nearest-row projection, lowest index on ties. Pure
    numpy, no gradient participation."""
    q = q_hat.data if isinstance(q_hat, Tensor) else np.asarray(q_hat)
    rows = (
        embedding_table.data
        if isinstance(embedding_table, Tensor)
        else np.asarray(embedding_table)
    )
    if q.ndim != 2 or rows.ndim != 2 or q.shape[1] != rows.shape[1]:
        raise ShapeError(f"project_to_tokens: shapes {q.shape} and {rows.shape}")
    return nearest_row_sqdist(q, rows)[0]


@dataclass(frozen=True)
class RewriteResult:
    q_hat: np.ndarray  # (n, d)
    m: np.ndarray  # (n,), sums to 1
    projected_ids: tuple[int, ...]  # raw nearest-row projection
    mask_position: int  # argmax of m


@dataclass(frozen=True)
class InferenceResult:
    answer: int
    rewritten_ids: tuple[int, ...]  # projection with [MASK] forced at mask_position
    mask_position: int
    raw_projected_ids: tuple[int, ...]
    answer_prob: float


def rewrite_result(
    rewriter: RewriterModel, predictor: PredictorModel, query: ClozeQuery
) -> RewriteResult:
    with T.no_grad():
        q_hat = rewrite(rewriter, query)
        m = mask_distribution(
            q_hat, T.gather_rows(predictor.embedding_table, np.array(MASK)),
            rewriter.beta(),
        )
        projected = project_to_tokens(q_hat, predictor.embedding_table)
    return RewriteResult(
        q_hat=q_hat.data,
        m=m.data,
        projected_ids=tuple(int(i) for i in projected),
        mask_position=int(np.argmax(m.data)),
    )


def infer_answer(
    rewriter: RewriterModel, predictor: PredictorModel, query: ClozeQuery
) -> InferenceResult:
    """Rewrite, project to tokens, force [MASK] at argmax(m), and read
    the predictor's most probable token there."""
    rr = rewrite_result(rewriter, predictor, query)
    forced = list(rr.projected_ids)
    forced[rr.mask_position] = MASK
    with T.no_grad():
        out = predictor.forward_tokens([forced])
    answer, prob = out.top_token(0, rr.mask_position)
    return InferenceResult(
        answer=answer,
        rewritten_ids=tuple(forced),
        mask_position=rr.mask_position,
        raw_projected_ids=rr.projected_ids,
        answer_prob=prob,
    )


def infer_answers(
    rewriter: RewriterModel, predictor: PredictorModel, queries
) -> list[InferenceResult]:
    """Batched inference grouped by query length; per-query results are
    identical to infer_answer (answer aggregation is order-independent)."""
    results: dict[int, InferenceResult] = {}
    by_len: dict[int, list[int]] = {}
    for i, q in enumerate(queries):
        by_len.setdefault(len(q), []).append(i)
    table = predictor.embedding_table
    for n, indices in sorted(by_len.items()):
        ids = np.array([list(queries[i].tokens) for i in indices], dtype=np.int64)
        with T.no_grad():
            q_hat = rewriter.rewrite_batch(ids)
            m = mask_distribution(
                q_hat, T.gather_rows(table, np.array(MASK)), rewriter.beta()
            )
            flat_proj = project_to_tokens(
                np.ascontiguousarray(q_hat.data.reshape(-1, rewriter.config.dim)), table
            )
        projections = flat_proj.reshape(len(indices), n)
        mask_positions = np.argmax(m.data, axis=-1)
        forced = projections.copy()
        forced[np.arange(len(indices)), mask_positions] = MASK
        with T.no_grad():
            out = predictor.forward_tokens(forced)
        for row, qi in enumerate(indices):
            pos = int(mask_positions[row])
            answer, prob = out.top_token(row, pos)
            results[qi] = InferenceResult(
                answer=answer,
                rewritten_ids=tuple(int(t) for t in forced[row]),
                mask_position=pos,
                raw_projected_ids=tuple(int(t) for t in projections[row]),
                answer_prob=prob,
            )
    return [results[i] for i in range(len(queries))]
