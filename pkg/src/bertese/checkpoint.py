"""Binary checkpoint format shared by the predictor and the rewriter.

Layout: the 8-byte magic "BERTESE1", a 4-byte little-endian header
length, a JSON header {format_version, config, tensors: [[name, shape,
"f32"], ...]}, then the raw little-endian float32 tensor data
concatenated in manifest order. The manifest is sorted by tensor name
and the header JSON is canonical, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict

import numpy as np

from .predictor import PredictorConfig, PredictorModel
from .rewriter import RewriterModel
from .tensor import Tensor

MAGIC = b"BERTESE1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Base class for checkpoint file problems."""


class BadMagicError(CheckpointError):
    pass


class BadVersionError(CheckpointError):
    pass


class TruncatedDataError(CheckpointError):
    pass


class ManifestMismatchError(CheckpointError):
    pass


def _encode(config: dict, tensors: dict[str, np.ndarray]) -> bytes:
    manifest = []
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        manifest.append([name, list(arr.shape), "f32"])
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "config": config, "tensors": manifest},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return b"".join(
        [MAGIC, len(header).to_bytes(4, "little"), header] + blobs
    )


def _decode(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if raw[: len(MAGIC)] != MAGIC:
        raise BadMagicError(
            f"bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}"
        )
    offset = len(MAGIC)
    if len(raw) < offset + 4:
        raise TruncatedDataError("file ends inside the header-length field")
    header_len = int.from_bytes(raw[offset : offset + 4], "little")
    offset += 4
    if len(raw) < offset + header_len:
        raise TruncatedDataError("file ends inside the JSON header")
    try:
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable JSON header: {e}") from e
    offset += header_len
    if header.get("format_version") != FORMAT_VERSION:
        raise BadVersionError(
            f"format_version {header.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        name, shape, dtype = entry
        if dtype != "f32":
            raise ManifestMismatchError(f"tensor {name}: unsupported dtype {dtype!r}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if len(raw) < offset + nbytes:
            raise TruncatedDataError(
                f"tensor {name}: expected {nbytes} bytes, file has {len(raw) - offset}"
            )
        arr = np.frombuffer(raw[offset : offset + nbytes], dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float32)
        offset += nbytes
    if offset != len(raw):
        raise ManifestMismatchError(
            f"{len(raw) - offset} trailing bytes after the last manifest tensor"
        )
    return header["config"], tensors


def save_checkpoint(path, config: dict, params: dict[str, Tensor]) -> None:
    data = _encode(config, {n: p.data for n, p in params.items()})
    with open(path, "wb") as fh:
        fh.write(data)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return _decode(fh.read())


def checkpoint_bytes(config: dict, params: dict[str, Tensor]) -> bytes:
    return _encode(config, {n: p.data for n, p in params.items()})


def params_digest(config: dict, params: dict[str, Tensor]) -> str:
    return hashlib.sha256(checkpoint_bytes(config, params)).hexdigest()


def file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# --- model-aware save/load --------------------------------------------------


def _predictor_shapes(cfg: PredictorConfig) -> dict[str, tuple[int, ...]]:
    shapes = {
        "tok_emb": (cfg.vocab_size, cfg.dim),
        "pos_emb": (cfg.max_len, cfg.dim),
        "emb_ln_gain": (cfg.dim,),
        "emb_ln_bias": (cfg.dim,),
        "out_bias": (cfg.vocab_size,),
    }
    for i in range(cfg.layers):
        p = f"layer{i}"
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{w}"] = (cfg.dim, cfg.dim)
            shapes[f"{p}.attn.{w[-1]}bias"] = (cfg.dim,)
        shapes[f"{p}.attn.ln_gain"] = (cfg.dim,)
        shapes[f"{p}.attn.ln_bias"] = (cfg.dim,)
        shapes[f"{p}.ffn.w1"] = (cfg.dim, cfg.ffn_dim)
        shapes[f"{p}.ffn.b1"] = (cfg.ffn_dim,)
        shapes[f"{p}.ffn.w2"] = (cfg.ffn_dim, cfg.dim)
        shapes[f"{p}.ffn.b2"] = (cfg.dim,)
        shapes[f"{p}.ffn.ln_gain"] = (cfg.dim,)
        shapes[f"{p}.ffn.ln_bias"] = (cfg.dim,)
    return shapes


def _rewriter_shapes(cfg: PredictorConfig) -> dict[str, tuple[int, ...]]:
    shapes = _predictor_shapes(cfg)
    del shapes["out_bias"]
    shapes["log_beta"] = (1,)
    return shapes


def _check_shapes(kind, expected: dict, tensors: dict[str, np.ndarray]) -> None:
    for name, shape in expected.items():
        if name not in tensors:
            raise ManifestMismatchError(f"tensor {name}: missing from {kind} checkpoint")
        if tuple(tensors[name].shape) != shape:
            raise ManifestMismatchError(
                f"tensor {name}: shape {tensors[name].shape} does not match "
                f"config-implied {shape}"
            )
    for name in tensors:
        if name not in expected:
            raise ManifestMismatchError(f"tensor {name}: not part of a {kind} checkpoint")


def _config_header(kind: str, cfg: PredictorConfig) -> dict:
    return {"kind": kind, **asdict(cfg)}


def _config_from_header(config: dict, kind: str) -> PredictorConfig:
    if config.get("kind") != kind:
        raise ManifestMismatchError(
            f"checkpoint holds a {config.get('kind')!r} model, expected {kind!r}"
        )
    fields = {k: v for k, v in config.items() if k != "kind"}
    return PredictorConfig(**fields)


def save_predictor(path, model: PredictorModel) -> None:
    save_checkpoint(path, _config_header("predictor", model.config), model.params)


def load_predictor(path) -> PredictorModel:
    config, tensors = load_checkpoint(path)
    cfg = _config_from_header(config, "predictor")
    _check_shapes("predictor", _predictor_shapes(cfg), tensors)
    params = {n: Tensor(a, requires_grad=True) for n, a in tensors.items()}
    return PredictorModel(cfg, params)


def save_rewriter(path, model: RewriterModel) -> None:
    save_checkpoint(path, _config_header("rewriter", model.config), model.params)


def load_rewriter(path) -> RewriterModel:
    config, tensors = load_checkpoint(path)
    cfg = _config_from_header(config, "rewriter")
    _check_shapes("rewriter", _rewriter_shapes(cfg), tensors)
    params = {n: Tensor(a, requires_grad=True) for n, a in tensors.items()}
    return RewriterModel(cfg, params)


def predictor_digest(model: PredictorModel) -> str:
    return params_digest(_config_header("predictor", model.config), model.params)
