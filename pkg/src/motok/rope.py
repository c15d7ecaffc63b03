"""Rotary positional encodings over one or more position axes.

Channel pairs ``(x[2i], x[2i+1])`` are rotated by ``m * theta_i`` with
``theta_i = 10000 ** (-2 i / dim)``. Multi-axis tables give each axis a
contiguous block of pairs: with head dim ``D`` and four axes
``(t, x, y, z)``, every axis runs a ``D/4``-channel encoding that fills
``D/8`` pairs, and the blocks are laid side by side.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import UsageError
from .numerics import Tensor

AXES_4D = ("t", "x", "y", "z")
BASE = 10000.0


def rope_1d(positions, dim: int, base: float = BASE) -> tuple[np.ndarray, np.ndarray]:
    """Cos/sin tables of shape ``(len(positions), dim // 2)``.

    Positions may be any real numbers.
    """
    if dim <= 0 or dim % 2:
        raise UsageError(f"rotary dim must be a positive even number, got {dim}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1)
    theta = base ** (-2.0 * np.arange(dim // 2) / dim)
    ang = pos[:, None] * theta[None, :]
    return np.cos(ang), np.sin(ang)


@dataclass(frozen=True)
class RopeTable:
    """Per-position rotation factors for one head layout.

    ``cos``/``sin`` are ``(positions, head_dim // 2)``; ``spans`` maps each
    axis name to its ``[start, stop)`` block of pair columns.
    """

    cos: np.ndarray
    sin: np.ndarray
    spans: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.cos, dtype=np.float64)
        s = np.asarray(self.sin, dtype=np.float64)
        if c.shape != s.shape or c.ndim != 2:
            raise UsageError(f"cos/sin tables must share a 2-D shape, got {c.shape} and {s.shape}")
        object.__setattr__(self, "cos", c)
        object.__setattr__(self, "sin", s)

    @property
    def positions(self) -> int:
        return self.cos.shape[0]

    @property
    def head_dim(self) -> int:
        return 2 * self.cos.shape[1]

    def span(self, axis: str) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.spans[axis]
        return self.cos[:, a:b], self.sin[:, a:b]

    def without(self, axis: str) -> "RopeTable":
        """Drop one axis block (pairs are re-packed without a gap)."""
        a, b = self.spans[axis]
        keep = np.r_[0:a, b:self.cos.shape[1]]
        spans, off = {}, 0
        for name, (s0, s1) in sorted(self.spans.items(), key=lambda kv: kv[1][0]):
            if name == axis:
                continue
            spans[name] = (off, off + s1 - s0)
            off += s1 - s0
        return RopeTable(self.cos[:, keep], self.sin[:, keep], spans)

    def permuted(self, order) -> "RopeTable":
        order = np.asarray(order)
        return RopeTable(self.cos[order], self.sin[order], dict(self.spans))

    @classmethod
    def identity(cls, positions: int, head_dim: int) -> "RopeTable":
        if head_dim % 2:
            raise UsageError("head_dim must be even")
        shape = (positions, head_dim // 2)
        return cls(np.ones(shape), np.zeros(shape), {"all": (0, head_dim // 2)})

    @classmethod
    def from_axes(cls, positions: dict, head_dim: int, axes=AXES_4D) -> "RopeTable":
        """One block per axis; every axis gets ``head_dim / len(axes)`` channels."""
        k = len(axes)
        if head_dim % k:
            raise UsageError(f"head_dim {head_dim} is not divisible by the {k} axes")
        sub = head_dim // k
        if sub % 2:
            raise UsageError(f"each axis needs an even channel count; head_dim {head_dim} gives {sub}")
        cols_c, cols_s, spans, off = [], [], {}, 0
        for name in axes:
            c, s = rope_1d(positions[name], sub)
            cols_c.append(c)
            cols_s.append(s)
            spans[name] = (off, off + c.shape[1])
            off += c.shape[1]
        return cls(np.concatenate(cols_c, axis=1), np.concatenate(cols_s, axis=1), spans)


def apply_rope(vec, table: RopeTable, position_index=None):
    """Rotate the last axis of ``vec`` (shape ``(..., positions, D)``).

    ``position_index`` selects table rows when the positions in ``vec`` are
    a subset or a reordering of the table. Accepts a Tensor (differentiable)
    or an ndarray.
    """
    c, s = table.cos, table.sin
    if position_index is not None:
        idx = np.asarray(position_index)
        c, s = c[idx], s[idx]
    is_tensor = isinstance(vec, Tensor)
    x = vec if is_tensor else nx.Tensor(np.asarray(vec), dtype=np.asarray(vec).dtype)
    if x.shape[-1] != 2 * c.shape[-1]:
        raise UsageError(f"vector dim {x.shape[-1]} does not match table head dim {2 * c.shape[-1]}")
    if x.ndim < 2 or x.shape[-2] != c.shape[0]:
        raise UsageError(f"vector has {x.shape[-2] if x.ndim >= 2 else 1} positions, table {c.shape[0]}")
    out = nx.rotate_pairs(x, c.astype(x.dtype), s.astype(x.dtype))
    return out if is_tensor else out.data


def centralized_joints(mean_joints: np.ndarray) -> np.ndarray:
    mj = np.asarray(mean_joints, dtype=np.float64)
    if mj.ndim != 2 or mj.shape[1] != 3:
        raise UsageError(f"mean joints must be (joints, 3), got {mj.shape}")
    return mj - mj.mean(axis=0, keepdims=True)


def motion_rope_4d(mean_joints: np.ndarray, latent_frames: int, head_dim: int,
                   spatial_scale: float = 10.0, axes=AXES_4D) -> RopeTable:
    """Table for ``latent_frames x joints`` motion tokens (frame-major order).

    Time positions are latent frame indices, spatial positions are the
    centralized dataset-wide mean joint coordinates times ``spatial_scale``.
    ``axes`` may name a subset of ``(t, x, y, z)``; dropped axes keep their
    channel block but rotate by zero (an ablation switch).
    """
    if head_dim % 4:
        raise UsageError(f"head_dim must be divisible by 4, got {head_dim}")
    unknown = set(axes) - set(AXES_4D)
    if unknown:
        raise UsageError(f"unknown rope axes {sorted(unknown)}")
    xyz = centralized_joints(mean_joints) * float(spatial_scale)
    j = xyz.shape[0]
    t = np.repeat(np.arange(latent_frames, dtype=np.float64), j)
    pos = {"t": t}
    for k, name in enumerate(("x", "y", "z")):
        pos[name] = np.tile(xyz[:, k], latent_frames)
    for name in AXES_4D:
        if name not in axes:
            pos[name] = np.zeros_like(t)
    return RopeTable.from_axes(pos, head_dim, AXES_4D)


def vision_rope_4d(frames: int, height: int, width: int, head_dim: int) -> RopeTable:
    """Table for a ``frames x height x width`` latent grid (row-major order) with
    depth fixed at zero."""
    if head_dim % 4:
        raise UsageError(f"head_dim must be divisible by 4, got {head_dim}")
    f, h, w = np.meshgrid(np.arange(frames), np.arange(height), np.arange(width), indexing="ij")
    pos = {"t": f.reshape(-1), "x": h.reshape(-1), "y": w.reshape(-1), "z": np.zeros(f.size)}
    return RopeTable.from_axes(pos, head_dim, AXES_4D)
