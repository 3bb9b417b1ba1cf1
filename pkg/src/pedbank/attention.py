"""Multi-head cross-attention that complements features with bank knowledge.

Per block and head, queries come from the flattened block and keys/values
from the composed bank features ``f_k``; a row-softmax association over the
bank aggregates values, head outputs are concatenated through one shared
output projection, and the result is added back onto the block and
layer-normalized over channels. Parameter gradients are derived by hand and
verified against central finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .bank import KnowledgeBank
from .errors import DimensionError, NumericalError, ParseError, PreconditionError

PROPOSAL = "proposal"
QUERY = "query"
MODES = (PROPOSAL, QUERY)

ATTENTION_PARAMS_VERSION = 1


@dataclass(frozen=True)
class FeatureBatch:
    """A batch of feature blocks: ``(m, h, w, c)`` arrays in proposal mode,
    ``(m, 1, c)`` in query mode."""

    mode: str
    blocks: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.blocks, dtype=np.float64)
        object.__setattr__(self, "blocks", arr)
        if self.mode not in MODES:
            raise PreconditionError(f"mode must be one of {MODES}, got {self.mode!r}")
        expected = 4 if self.mode == PROPOSAL else 3
        if arr.ndim != expected:
            raise DimensionError(
                f"{self.mode} blocks must be {expected}-d, got shape {arr.shape}"
            )
        if self.mode == QUERY and arr.shape[1] != 1:
            raise DimensionError(f"query blocks must have shape (m, 1, c), got {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionError(f"all block sizes must be positive, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise PreconditionError("feature blocks must be finite")

    @property
    def m(self) -> int:
        return self.blocks.shape[0]

    @property
    def h(self) -> int:
        return self.blocks.shape[1] if self.mode == PROPOSAL else 1

    @property
    def w(self) -> int:
        return self.blocks.shape[2] if self.mode == PROPOSAL else 1

    @property
    def c(self) -> int:
        return self.blocks.shape[-1]

    def rows(self) -> np.ndarray:
        """Row-major view of every block as ``(m, h*w, c)``."""
        return self.blocks.reshape(self.m, self.h * self.w, self.c)


@dataclass(frozen=True)
class AttentionParams:
    """Per-head projections, the shared output projection, and the
    layer-norm affine."""

    heads: int
    d_model: int
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    gain: np.ndarray
    bias: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_v", "w_o", "gain", "bias"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.heads < 1 or self.d_model < 1:
            raise PreconditionError("heads and d_model must be positive")
        if not self.eps > 0:
            raise PreconditionError("eps must be positive")
        if self.w_q.ndim != 3 or self.w_q.shape[0] != self.heads or self.w_q.shape[2] != self.d_model:
            raise DimensionError(f"w_q must have shape (heads, c, d_model), got {self.w_q.shape}")
        c = self.w_q.shape[1]
        if self.w_k.ndim != 3 or self.w_k.shape[0] != self.heads or self.w_k.shape[2] != self.d_model:
            raise DimensionError(f"w_k must have shape (heads, d, d_model), got {self.w_k.shape}")
        d = self.w_k.shape[1]
        if self.w_v.shape != (self.heads, d, self.d_model):
            raise DimensionError(f"w_v must have shape ({self.heads}, {d}, {self.d_model})")
        if self.w_o.shape != (self.heads * self.d_model, c):
            raise DimensionError(
                f"w_o must have shape ({self.heads * self.d_model}, {c}), got {self.w_o.shape}"
            )
        if self.gain.shape != (c,) or self.bias.shape != (c,):
            raise DimensionError(f"gain and bias must have shape ({c},)")
        for name in ("w_q", "w_k", "w_v", "w_o", "gain", "bias"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise PreconditionError(f"{name} must be finite")

    @property
    def c(self) -> int:
        return self.w_q.shape[1]

    @property
    def d(self) -> int:
        return self.w_k.shape[1]


@dataclass(frozen=True)
class AttentionTrace:
    """Per-head association matrices, the pre-norm sums, and the output rows."""

    assoc: np.ndarray
    pre_norm: np.ndarray
    output: np.ndarray

    def __post_init__(self):
        sums = self.assoc.sum(axis=-1)
        if not np.all(np.abs(sums - 1.0) <= 1e-6):
            raise NumericalError("association rows must sum to 1")


@dataclass(frozen=True)
class AttentionGrads:
    """Gradients of a scalar objective for every attention parameter."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    gain: np.ndarray
    bias: np.ndarray


def init_attention(
    c: int, d: int, d_m: int = 64, heads: int = 8, seed: int = 0, eps: float = 1e-5
) -> AttentionParams:
    """Seeded 1/sqrt(fan-in) projections with an identity layer-norm affine."""
    if min(c, d, d_m, heads) < 1:
        raise PreconditionError("c, d, d_m, and heads must be positive")
    rng = np.random.default_rng(seed)
    w_q = rng.normal(0.0, 1.0 / np.sqrt(c), size=(heads, c, d_m))
    w_k = rng.normal(0.0, 1.0 / np.sqrt(d), size=(heads, d, d_m))
    w_v = rng.normal(0.0, 1.0 / np.sqrt(d), size=(heads, d, d_m))
    w_o = rng.normal(0.0, 1.0 / np.sqrt(heads * d_m), size=(heads * d_m, c))
    return AttentionParams(
        heads=heads, d_model=d_m, w_q=w_q, w_k=w_k, w_v=w_v, w_o=w_o,
        gain=np.ones(c), bias=np.zeros(c), eps=eps,
    )


def flatten_block(block) -> np.ndarray:
    """Row-major flatten of an ``(h, w, c)`` block to ``(h*w, c)``.

    Spatial position ``(y, x)`` lands on row ``y*w + x``.
    """
    arr = np.asarray(block, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionError(f"block must be 3-d (h, w, c), got shape {arr.shape}")
    h, w, c = arr.shape
    return arr.reshape(h * w, c)


def layer_norm(rows, gain, bias, eps: float = 1e-5) -> np.ndarray:
    """Standardize each row over the channel axis, then apply the affine map.

    Uses the biased variance; ``eps`` keeps constant rows finite.
    """
    x = np.asarray(rows, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.shape[-1] < 2:
        raise PreconditionError("layer norm needs at least 2 channels")
    if eps < 0:
        raise PreconditionError("eps must be nonnegative")
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError("gain and bias must match the channel count")
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gain * (x - mean) / np.sqrt(var + eps) + bias


def _row_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_compatible(batch: FeatureBatch, bank: KnowledgeBank, params: AttentionParams):
    if params.c != batch.c:
        raise DimensionError(
            f"attention expects {params.c} channels, batch has {batch.c}"
        )
    if params.d != bank.dim:
        raise DimensionError(
            f"attention expects bank dimension {params.d}, bank has {bank.dim}"
        )


def _forward_parts(batch: FeatureBatch, bank: KnowledgeBank, params: AttentionParams) -> dict:
    _check_compatible(batch, bank, params)
    flat = batch.rows()  # (m, hw, c)
    scale = 1.0 / math.sqrt(params.d_model)
    k = np.einsum("ne,hed->hnd", bank.f_k, params.w_k)  # (heads, n, d_m)
    v = np.einsum("ne,hed->hnd", bank.f_k, params.w_v)
    q = np.einsum("mrc,hcd->mhrd", flat, params.w_q)  # (m, heads, hw, d_m)
    scores = np.einsum("mhrd,hnd->mhrn", q, k) * scale
    if not np.all(np.isfinite(scores)):
        raise NumericalError("non-finite attention scores")
    assoc = _row_softmax(scores)
    heads_out = np.einsum("mhrn,hnd->mhrd", assoc, v)
    m, hw = flat.shape[0], flat.shape[1]
    concat = heads_out.transpose(0, 2, 1, 3).reshape(m, hw, params.heads * params.d_model)
    f_o = concat @ params.w_o  # (m, hw, c)
    pre = flat + f_o
    if not np.all(np.isfinite(pre)):
        raise NumericalError("non-finite pre-normalization features")
    return {
        "flat": flat, "scale": scale, "k": k, "v": v, "q": q,
        "assoc": assoc, "concat": concat, "pre": pre,
    }


def cross_attend(
    batch: FeatureBatch, bank: KnowledgeBank, params: AttentionParams
) -> tuple[FeatureBatch, AttentionTrace]:
    """Complement every block with bank knowledge.

    Output blocks keep the input shape; proposal blocks of size 1x1 go
    through exactly the same arithmetic as query blocks. Returns the
    complemented batch plus a trace holding the per-head association
    matrices, the pre-norm sums, and the output rows.
    """
    parts = _forward_parts(batch, bank, params)
    out_rows = layer_norm(parts["pre"], params.gain, params.bias, params.eps)
    out = FeatureBatch(mode=batch.mode, blocks=out_rows.reshape(batch.blocks.shape))
    trace = AttentionTrace(assoc=parts["assoc"], pre_norm=parts["pre"], output=out_rows)
    return out, trace


def attention_gradients(
    batch: FeatureBatch, bank: KnowledgeBank, params: AttentionParams, upstream
) -> AttentionGrads:
    """Gradients of ``sum(upstream * cross_attend(...).blocks)``.

    ``upstream`` must match the block array shape. Gradients cover every
    projection matrix and the layer-norm affine; they are exact and are
    checked against central finite differences in the test suite.
    """
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != batch.blocks.shape:
        raise DimensionError(
            f"upstream shape {up.shape} must match blocks shape {batch.blocks.shape}"
        )
    parts = _forward_parts(batch, bank, params)
    flat, pre, assoc = parts["flat"], parts["pre"], parts["assoc"]
    m, hw, c = flat.shape

    du = up.reshape(m, hw, c)
    mean = pre.mean(axis=-1, keepdims=True)
    var = pre.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + params.eps)
    xhat = (pre - mean) * inv
    d_bias = du.sum(axis=(0, 1))
    d_gain = (du * xhat).sum(axis=(0, 1))
    dxhat = du * params.gain
    ds = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    # residual: ds is the cotangent of f_o (the input branch needs no gradient)
    d_wo = parts["concat"].reshape(m * hw, -1).T @ ds.reshape(m * hw, c)
    d_concat = ds @ params.w_o.T
    d_heads = d_concat.reshape(m, hw, params.heads, params.d_model).transpose(0, 2, 1, 3)
    d_assoc = np.einsum("mhrd,hnd->mhrn", d_heads, parts["v"])
    d_v = np.einsum("mhrn,mhrd->hnd", assoc, d_heads)
    d_scores = assoc * (d_assoc - (d_assoc * assoc).sum(axis=-1, keepdims=True))
    d_raw = d_scores * parts["scale"]
    d_q = np.einsum("mhrn,hnd->mhrd", d_raw, parts["k"])
    d_k = np.einsum("mhrn,mhrd->hnd", d_raw, parts["q"])
    d_wq = np.einsum("mrc,mhrd->hcd", flat, d_q)
    d_wk = np.einsum("ne,hnd->hed", bank.f_k, d_k)
    d_wv = np.einsum("ne,hnd->hed", bank.f_k, d_v)
    return AttentionGrads(w_q=d_wq, w_k=d_wk, w_v=d_wv, w_o=d_wo, gain=d_gain, bias=d_bias)


def load_feature_batch(path) -> FeatureBatch:
    """Parse a feature batch file: mode, m, h, w, c, and flat row-major data."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected a JSON object")
    missing = {"mode", "m", "h", "w", "c", "data"} - set(doc)
    if missing:
        raise ParseError(f"{path}: missing keys {sorted(missing)}")
    mode = doc["mode"]
    if mode not in MODES:
        raise ParseError(f"{path}: mode must be one of {MODES}, got {mode!r}")
    sizes = {}
    for key in ("m", "h", "w", "c"):
        value = doc[key]
        if not isinstance(value, int) or value < 1:
            raise ParseError(f"{path}: {key} must be a positive integer")
        sizes[key] = value
    if mode == QUERY and (sizes["h"] != 1 or sizes["w"] != 1):
        raise ParseError(f"{path}: query batches require h == w == 1")
    data = doc["data"]
    expected = sizes["m"] * sizes["h"] * sizes["w"] * sizes["c"]
    if (
        not isinstance(data, list)
        or len(data) != expected
        or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in data)
    ):
        raise ParseError(f"{path}: data must be a number array of length {expected}")
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{path}: non-finite data value")
    if mode == PROPOSAL:
        blocks = arr.reshape(sizes["m"], sizes["h"], sizes["w"], sizes["c"])
    else:
        blocks = arr.reshape(sizes["m"], 1, sizes["c"])
    return FeatureBatch(mode=mode, blocks=blocks)


def save_feature_batch(batch: FeatureBatch, path) -> None:
    """Write a feature batch with round-trip exact floats; bytes are
    deterministic for a given batch."""
    doc = {
        "mode": batch.mode,
        "m": batch.m,
        "h": batch.h,
        "w": batch.w,
        "c": batch.c,
        "data": [float(x) for x in batch.blocks.reshape(-1)],
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, allow_nan=False))
        fh.write("\n")


def save_attention_params(params: AttentionParams, path) -> None:
    """Serialize attention parameters with round-trip exact floats."""
    doc = {
        "version": ATTENTION_PARAMS_VERSION,
        "heads": params.heads,
        "d_model": params.d_model,
        "c": params.c,
        "d": params.d,
        "w_q": [[[float(x) for x in row] for row in head] for head in params.w_q],
        "w_k": [[[float(x) for x in row] for row in head] for head in params.w_k],
        "w_v": [[[float(x) for x in row] for row in head] for head in params.w_v],
        "w_o": [[float(x) for x in row] for row in params.w_o],
        "gain": [float(x) for x in params.gain],
        "bias": [float(x) for x in params.bias],
        "eps": params.eps,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, allow_nan=False))
        fh.write("\n")


def load_attention_params(path) -> AttentionParams:
    """Parse an attention parameter file written by ``save_attention_params``."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected a JSON object")
    required = {"version", "heads", "d_model", "c", "d", "w_q", "w_k", "w_v", "w_o", "gain", "bias", "eps"}
    missing = required - set(doc)
    if missing:
        raise ParseError(f"{path}: missing keys {sorted(missing)}")
    if doc["version"] != ATTENTION_PARAMS_VERSION:
        raise ParseError(
            f"{path}: unsupported params version {doc['version']!r} "
            f"(supported: {ATTENTION_PARAMS_VERSION})"
        )
    try:
        return AttentionParams(
            heads=int(doc["heads"]),
            d_model=int(doc["d_model"]),
            w_q=np.asarray(doc["w_q"], dtype=np.float64),
            w_k=np.asarray(doc["w_k"], dtype=np.float64),
            w_v=np.asarray(doc["w_v"], dtype=np.float64),
            w_o=np.asarray(doc["w_o"], dtype=np.float64),
            gain=np.asarray(doc["gain"], dtype=np.float64),
            bias=np.asarray(doc["bias"], dtype=np.float64),
            eps=float(doc["eps"]),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed parameter arrays ({exc})") from exc
