"""Shared contextual encoder: embeddings + transformer stack, with exact gradients.

Token embeddings are added to learned absolute position embeddings and fed
through post-layer-norm transformer blocks (multi-head self-attention, then
a GELU feed-forward), one sentence at a time with no framing tokens and no
padding.  Forward and backward are written out in numpy so analytic
gradients can be checked against finite differences and training stays
bit-reproducible on CPU.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf

from .corpus import atomic_write
from .errors import FormatError
from .subtok import SubTokenization

__all__ = [
    "EncoderConfig",
    "EncoderParams",
    "init_params",
    "encode",
    "encode_with_cache",
    "encode_backward",
    "word_vectors",
    "word_vectors_backward",
    "save_checkpoint",
    "load_checkpoint",
    "gelu",
    "gelu_grad",
    "trunc_normal",
]

_LN_EPS = 1e-5
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 0  # 0 means "fill in from the trained vocabulary"
    max_positions: int = 512
    hidden_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 128
    dropout_rate: float = 0.0
    init_seed: int = 0

    def validate(self) -> None:
        if self.vocab_size < 1 or self.max_positions < 1:
            raise ValueError("vocab_size and max_positions must be positive")
        if self.n_layers < 0 or self.n_heads < 1 or self.ffn_dim < 1:
            raise ValueError("n_layers must be >= 0; n_heads and ffn_dim positive")
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError(
                f"hidden_dim={self.hidden_dim} not divisible by n_heads={self.n_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "EncoderConfig":
        return cls(**obj)


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, np.ndarray]

    def clone(self) -> "EncoderParams":
        return EncoderParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within two deviations."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x


def init_params(cfg: EncoderConfig) -> EncoderParams:
    """Random initialization: trunc-normal(0.02) weights, unit/zero layer norms."""
    cfg.validate()
    rng = np.random.default_rng(cfg.init_seed)
    d, f = cfg.hidden_dim, cfg.ffn_dim
    t: dict[str, np.ndarray] = {
        "tok_emb": trunc_normal(rng, (cfg.vocab_size, d)),
        "pos_emb": trunc_normal(rng, (cfg.max_positions, d)),
    }
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        for name in ("wq", "wk", "wv", "wo"):
            t[p + f"attn.{name}"] = trunc_normal(rng, (d, d))
        for name in ("bq", "bk", "bv", "bo"):
            t[p + f"attn.{name}"] = np.zeros(d)
        t[p + "ln1.g"] = np.ones(d)
        t[p + "ln1.b"] = np.zeros(d)
        t[p + "ffn.w1"] = trunc_normal(rng, (d, f))
        t[p + "ffn.b1"] = np.zeros(f)
        t[p + "ffn.w2"] = trunc_normal(rng, (f, d))
        t[p + "ffn.b2"] = np.zeros(d)
        t[p + "ln2.g"] = np.ones(d)
        t[p + "ln2.b"] = np.zeros(d)
    return EncoderParams(config=cfg, tensors=t)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


def _dropout(x, rate, mode, rng):
    if mode != "train" or rate <= 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode encoding with dropout needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def _layer_norm_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _layer_norm_backward(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _split_heads(x, n_heads):
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x):
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def _attention_forward(x, t, p, cfg):
    scale = 1.0 / np.sqrt(cfg.hidden_dim // cfg.n_heads)
    q = _split_heads(x @ t[p + "wq"] + t[p + "bq"], cfg.n_heads)
    k = _split_heads(x @ t[p + "wk"] + t[p + "bk"], cfg.n_heads)
    v = _split_heads(x @ t[p + "wv"] + t[p + "bv"], cfg.n_heads)
    scores = (q @ k.transpose(0, 2, 1)) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    probs = e / e.sum(axis=-1, keepdims=True)
    merged = _merge_heads(probs @ v)
    out = merged @ t[p + "wo"] + t[p + "bo"]
    return out, (x, q, k, v, probs, merged, scale)


def _attention_backward(dout, t, grads, p, cache):
    x, q, k, v, probs, merged, scale = cache
    grads[p + "wo"] += merged.T @ dout
    grads[p + "bo"] += dout.sum(axis=0)
    dctx = _split_heads(dout @ t[p + "wo"].T, q.shape[0])
    dprobs = dctx @ v.transpose(0, 2, 1)
    dv = probs.transpose(0, 2, 1) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dq = (dscores @ k) * scale
    dk = (dscores.transpose(0, 2, 1) @ q) * scale
    dx = np.zeros_like(x)
    for name, dh in (("wq", dq), ("wk", dk), ("wv", dv)):
        flat = _merge_heads(dh)
        grads[p + name] += x.T @ flat
        grads[p + "b" + name[1]] += flat.sum(axis=0)
        dx += flat @ t[p + name].T
    return dx


def _layer_forward(x, t, i, cfg, mode, rng):
    p = f"layers.{i}."
    attn, attn_cache = _attention_forward(x, t, p + "attn.", cfg)
    attn_d, mask1 = _dropout(attn, cfg.dropout_rate, mode, rng)
    x1, ln1_cache = _layer_norm_forward(x + attn_d, t[p + "ln1.g"], t[p + "ln1.b"])
    u = x1 @ t[p + "ffn.w1"] + t[p + "ffn.b1"]
    g = gelu(u)
    f = g @ t[p + "ffn.w2"] + t[p + "ffn.b2"]
    f_d, mask2 = _dropout(f, cfg.dropout_rate, mode, rng)
    x2, ln2_cache = _layer_norm_forward(x1 + f_d, t[p + "ln2.g"], t[p + "ln2.b"])
    cache = {
        "attn": attn_cache,
        "mask1": mask1,
        "ln1": ln1_cache,
        "x1": x1,
        "u": u,
        "g": g,
        "mask2": mask2,
        "ln2": ln2_cache,
    }
    return x2, cache


def _check_input(ids, cfg: EncoderConfig, name):
    ids = np.asarray(ids, dtype=np.int64)
    label = f" in {name}" if name else ""
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError(f"expected a non-empty 1-D id sequence{label}")
    if ids.size > cfg.max_positions:
        raise ValueError(
            f"sentence of {ids.size} sub-tokens exceeds max_positions={cfg.max_positions}{label}"
        )
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(f"sub-token id out of range for vocab_size={cfg.vocab_size}{label}")
    return ids


def encode_with_cache(ids, params: EncoderParams, mode: str = "eval", rng=None, name=None):
    """Forward pass returning both the contextual vectors and the backward cache."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = params.config
    t = params.tensors
    ids = _check_input(ids, cfg, name)
    x = t["tok_emb"][ids] + t["pos_emb"][: ids.size]
    cache = {"ids": ids, "layers": []}
    for i in range(cfg.n_layers):
        x, layer_cache = _layer_forward(x, t, i, cfg, mode, rng)
        cache["layers"].append(layer_cache)
    return x, cache


def encode(ids, params: EncoderParams, mode: str = "eval", rng=None, name=None) -> np.ndarray:
    """Contextual vectors, one row per sub-token ([n, hidden_dim])."""
    out, _cache = encode_with_cache(ids, params, mode, rng, name)
    return out


def zero_grads(params: EncoderParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def encode_backward(
    ids,
    params: EncoderParams,
    upstream: np.ndarray,
    *,
    cache=None,
    grads: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Parameter gradients of sum(encode(ids) * upstream); shapes mirror params.

    With no cache the forward is recomputed in eval mode; train-mode
    backward must reuse the cache from ``encode_with_cache`` so dropout
    masks match.  When ``grads`` is given, gradients accumulate into it.
    """
    cfg = params.config
    t = params.tensors
    if cache is None:
        _, cache = encode_with_cache(ids, params, "eval")
    ids = cache["ids"]
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (ids.size, cfg.hidden_dim):
        raise ValueError(
            f"upstream gradient shape {upstream.shape} != {(ids.size, cfg.hidden_dim)}"
        )
    if grads is None:
        grads = zero_grads(params)
    dx = upstream
    for i in reversed(range(cfg.n_layers)):
        p = f"layers.{i}."
        c = cache["layers"][i]
        dr2, dg2, db2 = _layer_norm_backward(dx, c["ln2"])
        grads[p + "ln2.g"] += dg2
        grads[p + "ln2.b"] += db2
        df = dr2 if c["mask2"] is None else dr2 * c["mask2"]
        grads[p + "ffn.w2"] += c["g"].T @ df
        grads[p + "ffn.b2"] += df.sum(axis=0)
        du = (df @ t[p + "ffn.w2"].T) * gelu_grad(c["u"])
        grads[p + "ffn.w1"] += c["x1"].T @ du
        grads[p + "ffn.b1"] += du.sum(axis=0)
        dx1 = dr2 + du @ t[p + "ffn.w1"].T
        dr1, dg1, db1 = _layer_norm_backward(dx1, c["ln1"])
        grads[p + "ln1.g"] += dg1
        grads[p + "ln1.b"] += db1
        dattn = dr1 if c["mask1"] is None else dr1 * c["mask1"]
        dx = dr1 + _attention_backward(dattn, t, grads, p + "attn.", c["attn"])
    np.add.at(grads["tok_emb"], ids, dx)
    grads["pos_emb"][: ids.size] += dx
    return grads


# ---------------------------------------------------------------------------
# First-sub-token word representations
# ---------------------------------------------------------------------------


def word_vectors(ctx: np.ndarray, align: SubTokenization) -> np.ndarray:
    """Row w is the contextual vector of word w's first sub-token."""
    if ctx.shape[0] != align.n_subtokens:
        raise ValueError(
            f"contextual rows ({ctx.shape[0]}) != alignment sub-tokens ({align.n_subtokens})"
        )
    return ctx[np.asarray(align.first_subtoken_index, dtype=np.int64)]


def word_vectors_backward(d_wordvecs: np.ndarray, align: SubTokenization) -> np.ndarray:
    """Scatter word-vector gradients back onto the sub-token rows."""
    if d_wordvecs.shape[0] != align.n_words:
        raise ValueError(
            f"gradient rows ({d_wordvecs.shape[0]}) != word count ({align.n_words})"
        )
    d_ctx = np.zeros((align.n_subtokens, d_wordvecs.shape[1]))
    d_ctx[np.asarray(align.first_subtoken_index, dtype=np.int64)] = d_wordvecs
    return d_ctx


# ---------------------------------------------------------------------------
# Checkpoint container: one .npz holding a JSON config blob + named tensors
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    """Self-describing container: "__config__" JSON string plus named float arrays."""
    with atomic_write(path, "wb") as fh:
        np.savez(fh, __config__=np.array(json.dumps(config)), **tensors)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as z:
            if "__config__" not in z.files:
                raise FormatError("checkpoint missing __config__ entry", path=str(path))
            config = json.loads(str(z["__config__"][()]))
            tensors = {k: z[k].copy() for k in z.files if k != "__config__"}
    except (OSError, ValueError) as exc:
        raise FormatError(f"unreadable checkpoint: {exc}", path=str(path)) from exc
    return config, tensors
