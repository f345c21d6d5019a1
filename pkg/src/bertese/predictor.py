"""The toy masked-language model that answers (rewritten) cloze queries.

Token + position embeddings with an embedding layer-norm, a post-LN
transformer encoder, and an output head tied to the embedding table:
logits = hidden @ tok_emb.T + out_bias. Trainable during its own
pretraining; frozen (requires_grad off, digest-checked) afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import LN_EPS, encoder_forward, init_encoder_params, init_weight, init_ones, init_zeros
from .tensor import ShapeError, Tensor
from .vocab import CLS, MASK, PAD, SEP, UNK, ClozeQuery

_SPECIAL_IDS = (PAD, UNK, CLS, SEP, MASK)


@dataclass(frozen=True)
class PredictorConfig:
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 1024
    max_len: int = 16
    vocab_size: int = 0  # filled from the generated world

    def validate(self) -> None:
        for name in ("dim", "layers", "heads", "ffn_dim", "max_len", "vocab_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"predictor config field {name} must be positive")
        if self.dim % self.heads:
            raise ValueError("predictor dim must be divisible by heads")


@dataclass
class PredictorOutput:
    logits: Tensor  # (B, n, V)
    probs: Tensor  # (B, n, V), rows sum to 1

    def top_token(self, batch_index: int, position: int) -> tuple[int, float]:
        row = self.probs.data[batch_index, position]
        idx = int(np.argmax(row))
        return idx, float(row[idx])


class PredictorModel:
    def __init__(self, config: PredictorConfig, params: dict[str, Tensor]):
        config.validate()
        if params["tok_emb"].shape != (config.vocab_size, config.dim):
            raise ShapeError(
                f"predictor: embedding table {params['tok_emb'].shape} vs "
                f"config ({config.vocab_size}, {config.dim})"
            )
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: PredictorConfig, rng: np.random.Generator, dtype=np.float32):
        params = {
            "tok_emb": init_weight(rng, (config.vocab_size, config.dim), dtype),
            "pos_emb": init_weight(rng, (config.max_len, config.dim), dtype),
            "emb_ln_gain": init_ones((config.dim,), dtype),
            "emb_ln_bias": init_zeros((config.dim,), dtype),
            "out_bias": init_zeros((config.vocab_size,), dtype),
        }
        params.update(
            init_encoder_params(rng, config.dim, config.layers, config.heads,
                                config.ffn_dim, dtype)
        )
        return cls(config, params)

    @property
    def embedding_table(self) -> Tensor:
        return self.params["tok_emb"]

    @property
    def mask_embedding(self) -> np.ndarray:
        return self.params["tok_emb"].data[MASK]

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    def forward_vectors(self, vectors: Tensor) -> PredictorOutput:
        """Run the encoder on embedding-space inputs (B, n, d).

        Position embeddings and the embedding layer-norm are applied
        here, so inputs are expected in raw token-embedding space.
        """
        cfg = self.config
        if vectors.ndim != 3 or vectors.shape[2] != cfg.dim:
            raise ShapeError(
                f"predictor: input {vectors.shape} vs expected (B, n, {cfg.dim})"
            )
        n = vectors.shape[1]
        if n > cfg.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {cfg.max_len}")
        pos = T.gather_rows(self.params["pos_emb"], np.arange(n))
        x = vectors + T.reshape(pos, (1, n, cfg.dim))
        x = T.layer_norm(x, self.params["emb_ln_gain"], self.params["emb_ln_bias"], eps=LN_EPS)
        h = encoder_forward(self.params, x, cfg.layers, cfg.heads)
        logits = h @ T.transpose(self.params["tok_emb"], (1, 0)) + self.params["out_bias"]
        return PredictorOutput(logits=logits, probs=T.softmax(logits))

    def forward_tokens(self, ids) -> PredictorOutput:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ShapeError(f"predictor: token input must be (B, n), got {ids.shape}")
        return self.forward_vectors(T.gather_rows(self.params["tok_emb"], ids))


def predict_mask_token(model: PredictorModel, query: ClozeQuery) -> tuple[int, float]:
    """Most probable token at the query's mask position."""
    with T.no_grad():
        out = model.forward_tokens([list(query.tokens)])
    return out.top_token(0, query.mask_index)


def mask_batch(batch, rng: np.random.Generator):
    """Apply the pretraining mask policy to a batch of fact sentences.

    `batch` is a list of (token ids, object position). Per sentence:
    with probability 0.5 mask the object token, otherwise mask one
    uniformly random non-special token. Returns (masked ids (B, n),
    positions (B,), labels (B,)).
    """
    ids = np.array([list(tokens) for tokens, _ in batch], dtype=np.int64)
    positions = np.empty(len(batch), dtype=np.int64)
    labels = np.empty(len(batch), dtype=np.int64)
    for row, (tokens, object_pos) in enumerate(batch):
        candidates = [i for i, t in enumerate(tokens) if t not in _SPECIAL_IDS]
        if not candidates:
            raise ValueError(f"sentence {row} in batch has no maskable token")
        if rng.random() < 0.5:
            pos = object_pos
        else:
            pos = candidates[int(rng.integers(len(candidates)))]
        positions[row] = pos
        labels[row] = ids[row, pos]
        ids[row, pos] = MASK
    return ids, positions, labels


def masked_cross_entropy(out: PredictorOutput, positions, labels) -> Tensor:
    """Mean cross-entropy of the original tokens at the masked positions."""
    logp = T.log_softmax(T.gather_positions(out.logits, positions))
    return T.neg(T.reduce_mean(T.index_last(logp, np.asarray(labels))))


def mlm_train_step(model: PredictorModel, batch, rng, optimizer) -> float:
    """One masked-language-model update; returns the batch loss."""
    ids, positions, labels = mask_batch(batch, rng)
    loss = masked_cross_entropy(model.forward_tokens(ids), positions, labels)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()
