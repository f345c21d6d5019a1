"""Transformer encoder shared by the predictor and the rewriter.

Post-layer-norm multi-head self-attention blocks over batched inputs of
uniform sequence length (B, n, d). Batches never mix lengths, so no
padding or attention masking is needed.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

LN_EPS = 1e-12
INIT_STD = 0.02


def init_weight(rng: np.random.Generator, shape, dtype) -> Tensor:
    return Tensor(
        (rng.standard_normal(shape) * INIT_STD).astype(dtype), requires_grad=True
    )


def init_zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_ones(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def init_encoder_params(
    rng: np.random.Generator, dim: int, layers: int, heads: int, ffn_dim: int, dtype
) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    for i in range(layers):
        p = f"layer{i}"
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{p}.attn.{name}"] = init_weight(rng, (dim, dim), dtype)
            params[f"{p}.attn.{name[-1]}bias"] = init_zeros((dim,), dtype)
        params[f"{p}.attn.ln_gain"] = init_ones((dim,), dtype)
        params[f"{p}.attn.ln_bias"] = init_zeros((dim,), dtype)
        params[f"{p}.ffn.w1"] = init_weight(rng, (dim, ffn_dim), dtype)
        params[f"{p}.ffn.b1"] = init_zeros((ffn_dim,), dtype)
        params[f"{p}.ffn.w2"] = init_weight(rng, (ffn_dim, dim), dtype)
        params[f"{p}.ffn.b2"] = init_zeros((dim,), dtype)
        params[f"{p}.ffn.ln_gain"] = init_ones((dim,), dtype)
        params[f"{p}.ffn.ln_bias"] = init_zeros((dim,), dtype)
    return params


def encoder_forward(
    params: dict[str, Tensor], x: Tensor, layers: int, heads: int
) -> Tensor:
    batch, n, dim = x.shape
    head_dim = dim // heads
    scale = 1.0 / math.sqrt(head_dim)

    def split_heads(t: Tensor) -> Tensor:
        t = T.reshape(t, (batch, n, heads, head_dim))
        return T.transpose(t, (0, 2, 1, 3))

    for i in range(layers):
        p = f"layer{i}"
        q = split_heads(x @ params[f"{p}.attn.wq"] + params[f"{p}.attn.qbias"])
        k = split_heads(x @ params[f"{p}.attn.wk"] + params[f"{p}.attn.kbias"])
        v = split_heads(x @ params[f"{p}.attn.wv"] + params[f"{p}.attn.vbias"])
        scores = (q @ T.transpose(k, (0, 1, 3, 2))) * scale
        mixed = T.softmax(scores) @ v
        mixed = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (batch, n, dim))
        attn_out = mixed @ params[f"{p}.attn.wo"] + params[f"{p}.attn.obias"]
        x = T.layer_norm(
            x + attn_out,
            params[f"{p}.attn.ln_gain"],
            params[f"{p}.attn.ln_bias"],
            eps=LN_EPS,
        )
        hidden = T.gelu(x @ params[f"{p}.ffn.w1"] + params[f"{p}.ffn.b1"])
        ffn_out = hidden @ params[f"{p}.ffn.w2"] + params[f"{p}.ffn.b2"]
        x = T.layer_norm(
            x + ffn_out,
            params[f"{p}.ffn.ln_gain"],
            params[f"{p}.ffn.ln_bias"],
            eps=LN_EPS,
        )
    return x
