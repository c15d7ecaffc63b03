"""Motion cross-attention, conditioning shape ops and guidance helpers."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DimensionError, UsageError
from .numerics import Tensor
from .rope import RopeTable, apply_rope


@dataclass
class MotionAttentionParams:
    """Projections and norms of one motion attention block.

    Linear weights are ``(out, in)``: ``W_q z`` is ``linear(z, w_q)``.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    ln_q_w: Tensor
    ln_q_b: Tensor
    ln_k_w: Tensor
    ln_k_b: Tensor
    ln_v_w: Tensor
    ln_v_b: Tensor
    heads: int = 8

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name, t in self.named().items():
            want = (d, d) if name.startswith("w_") else (d,)
            if t.shape != want:
                raise DimensionError(f"{name} has shape {t.shape}, expected {want}")
            if not np.all(np.isfinite(t.data)):
                raise UsageError(f"{name} contains non-finite values")
        if self.heads < 1 or d % self.heads:
            raise UsageError(f"model dim {d} is not divisible by {self.heads} heads")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def named(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((k, getattr(self, k)) for k in
                           ("w_q", "w_k", "w_v", "ln_q_w", "ln_q_b", "ln_k_w", "ln_k_b", "ln_v_w", "ln_v_b"))

    @classmethod
    def init(cls, dim: int, heads: int = 8, seed: int = 0, dtype=None) -> "MotionAttentionParams":
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(dim)

        def p(a, name):
            return nx.parameter(np.asarray(a, dtype=dtype or nx.default_dtype()), name=name)

        w = {k: p(rng.uniform(-bound, bound, (dim, dim)), k) for k in ("w_q", "w_k", "w_v")}
        norms = {}
        for k in ("q", "k", "v"):
            norms[f"ln_{k}_w"] = p(np.ones(dim), f"ln_{k}_w")
            norms[f"ln_{k}_b"] = p(np.zeros(dim), f"ln_{k}_b")
        return cls(**w, **norms, heads=heads)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, d = x.shape
    return nx.transpose(nx.reshape(x, (n, heads, d // heads)), (1, 0, 2))


def motion_attention(z_vision, z_motion, params: MotionAttentionParams, vision_rope: RopeTable | None,
                     motion_rope: RopeTable | None, return_weights: bool = False):
    """Vision tokens attend to motion tokens; the result is added residually.

    ``Q = rope(LN(W_q z_v))``, ``K = rope(LN(W_k z_m))``, ``V = LN(W_v z_m)``
    with per-head rotations. A table of ``None`` means no rotation.
    """
    zv = z_vision if isinstance(z_vision, Tensor) else nx.Tensor(z_vision)
    zm = z_motion if isinstance(z_motion, Tensor) else nx.Tensor(z_motion)
    d, h = params.dim, params.heads
    if zv.ndim != 2 or zm.ndim != 2:
        raise DimensionError("token inputs must be (tokens, channels)")
    if zv.shape[1] != d or zm.shape[1] != d:
        raise UsageError(f"channel mismatch: vision {zv.shape[1]}, motion {zm.shape[1]}, block {d}; "
                         "pad motion tokens first")
    q = nx.layer_norm(nx.linear(zv, params.w_q), params.ln_q_w, params.ln_q_b)
    k = nx.layer_norm(nx.linear(zm, params.w_k), params.ln_k_w, params.ln_k_b)
    v = nx.layer_norm(nx.linear(zm, params.w_v), params.ln_v_w, params.ln_v_b)
    qh, kh, vh = _split_heads(q, h), _split_heads(k, h), _split_heads(v, h)
    if vision_rope is not None:
        qh = apply_rope(qh, vision_rope)
    if motion_rope is not None:
        kh = apply_rope(kh, motion_rope)
    logits = nx.mul(nx.matmul(qh, nx.transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(params.head_dim))
    weights = nx.softmax(logits, axis=-1)
    ctx = nx.matmul(weights, vh)
    ctx = nx.reshape(nx.transpose(ctx, (1, 0, 2)), (zv.shape[0], d))
    out = nx.add(zv, ctx)
    return (out, weights) if return_weights else out


def compose_vision_latents(z0, z_ref):
    """Concatenate ``z0`` (f, c, h, w) with ``z_ref`` (c, h, w) repeated per frame."""
    a = z0 if isinstance(z0, Tensor) else nx.Tensor(z0, dtype=np.asarray(z0).dtype)
    b = z_ref if isinstance(z_ref, Tensor) else nx.Tensor(z_ref, dtype=np.asarray(z_ref).dtype)
    if a.ndim != 4 or b.ndim != 3:
        raise UsageError(f"expected (f, c, h, w) and (c, h, w), got {a.shape} and {b.shape}")
    if a.shape[1:] != b.shape:
        raise UsageError(f"reference latent {b.shape} does not match frame latents {a.shape[1:]}")
    ref = nx.reshape(b, (1,) + b.shape)
    rep = nx.concat([ref] * a.shape[0], axis=0)
    out = nx.concat([a, rep], axis=1)
    return out if isinstance(z0, Tensor) else out.data


def pad_channels(tokens, target_dim: int = 5120):
    """Zero-extend the last axis to ``target_dim`` channels."""
    t = tokens if isinstance(tokens, Tensor) else nx.Tensor(tokens, dtype=np.asarray(tokens).dtype)
    src = t.shape[-1]
    if target_dim < src:
        raise UsageError(f"target dim {target_dim} is smaller than the token dim {src}")
    out = t if target_dim == src else nx.pad_zeros(t, [(0, 0)] * (t.ndim - 1) + [(0, target_dim - src)])
    return out if isinstance(tokens, Tensor) else out.data


def cfg_combine(eps_cond, eps_uncond, w: float):
    """``eps_u + w (eps_c - eps_u)``, evaluated so that ``w = 0`` and ``w = 1``
    return the inputs exactly."""
    a = np.asarray(eps_uncond)
    b = np.asarray(eps_cond)
    if a.shape != b.shape:
        raise UsageError(f"prediction shapes differ: {b.shape} vs {a.shape}")
    dt = np.result_type(a, b)
    w = dt.type(w)
    diff = b - a
    if w < 0.5:
        return a + w * diff
    return b - (dt.type(1) - w) * diff


@dataclass
class UncondMotionTokens:
    """Learnable stand-in for a motion token grid ``(f', joints, d)``."""

    values: Tensor
    trained: bool = False

    @classmethod
    def init(cls, shape, seed: int = 0, scale: float = 0.02) -> "UncondMotionTokens":
        rng = np.random.default_rng(seed)
        return cls(nx.parameter(rng.normal(scale=scale, size=tuple(shape)), name="uncond"))

    @property
    def shape(self):
        return self.values.shape


def maybe_drop_condition(tokens, uncond: UncondMotionTokens, p_drop: float = 0.2, rng_seed=0):
    """With probability ``p_drop`` return the unconditional tokens instead.

    Returns ``(tokens_or_uncond, dropped)``. The decision depends only on
    ``rng_seed``. Gradients reach ``uncond.values`` only through the
    substituted branch, since otherwise they are not part of the graph.
    """
    if not 0.0 <= p_drop <= 1.0:
        raise UsageError(f"p_drop must lie in [0, 1], got {p_drop}")
    shape = tokens.shape if hasattr(tokens, "shape") else np.shape(tokens)
    if tuple(shape) != tuple(uncond.shape):
        raise UsageError(f"token shape {tuple(shape)} does not match unconditional tokens {uncond.shape}")
    dropped = bool(np.random.default_rng(rng_seed).random() < p_drop)
    if dropped:
        uncond.trained = True
        return uncond.values, True
    return tokens, False
