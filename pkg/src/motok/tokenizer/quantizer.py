"""Nearest-neighbour codebook with EMA updates and dead-code resets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numerics as nx
from ..errors import DimensionError, UsageError
from ..numerics import Tensor


@dataclass
class Codebook:
    """Code vectors plus the EMA accumulators that define them.

    ``usage_history`` is a ring buffer with one row of per-code assignment
    counts per update step; ``usage_count`` sums it, so a code is counted
    as used when it was assigned at least once in the last ``window`` steps.
    """

    codes: np.ndarray
    ema_cluster_size: np.ndarray
    ema_embed_sum: np.ndarray
    usage_history: np.ndarray
    step: int = 0
    eps: float = 1e-5
    total_usage: np.ndarray | None = None

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes, dtype=np.float32)
        self.ema_cluster_size = np.ascontiguousarray(self.ema_cluster_size, dtype=np.float32)
        self.ema_embed_sum = np.ascontiguousarray(self.ema_embed_sum, dtype=np.float32)
        self.usage_history = np.ascontiguousarray(self.usage_history, dtype=np.int32)
        s, d = self.codes.shape
        if self.ema_cluster_size.shape != (s,) or self.ema_embed_sum.shape != (s, d):
            raise DimensionError("codebook accumulators do not match the code matrix")
        if self.usage_history.ndim != 2 or self.usage_history.shape[1] != s:
            raise DimensionError("usage history must be (window, codebook_size)")
        if self.total_usage is None:
            self.total_usage = np.zeros(s, np.int64)
        self.total_usage = np.ascontiguousarray(self.total_usage, dtype=np.int64)

    @classmethod
    def init(cls, size: int, dim: int, seed: int = 0, window: int = 200, eps: float = 1e-5) -> "Codebook":
        if size < 2 or dim < 1:
            raise UsageError("codebook needs size >= 2 and dim >= 1")
        rng = np.random.default_rng(seed)
        codes = rng.uniform(-1.0 / size, 1.0 / size, size=(size, dim)).astype(np.float32)
        return cls(codes, np.ones(size, np.float32), codes.copy(), np.zeros((window, size), np.int32), 0, eps)

    @classmethod
    def from_codes(cls, codes: np.ndarray, window: int = 200, eps: float = 1e-5) -> "Codebook":
        codes = np.asarray(codes, dtype=np.float32)
        s = codes.shape[0]
        return cls(codes.copy(), np.ones(s, np.float32), codes.copy(), np.zeros((window, s), np.int32), 0, eps)

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    @property
    def window(self) -> int:
        return self.usage_history.shape[0]

    @property
    def usage_count(self) -> np.ndarray:
        return self.usage_history.sum(axis=0, dtype=np.int64)

    def copy(self) -> "Codebook":
        return Codebook(self.codes.copy(), self.ema_cluster_size.copy(), self.ema_embed_sum.copy(),
                        self.usage_history.copy(), self.step, self.eps, self.total_usage.copy())

    def renormalized(self) -> np.ndarray:
        return self.ema_embed_sum / np.maximum(self.ema_cluster_size, np.float32(self.eps))[:, None]


def nearest_codes(latents: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Index of the closest code (L2) for each row of ``latents``.

    Distances are evaluated in float64 as ``|c|^2 - 2 e.c`` (the ``|e|^2``
    term is constant per row); ``argmin`` returns the lowest index on ties.
    """
    e = np.asarray(latents, dtype=np.float64)
    c = np.asarray(codes, dtype=np.float64)
    if e.ndim != 2 or c.ndim != 2 or e.shape[1] != c.shape[1]:
        raise DimensionError(f"latents {e.shape} and codes {c.shape} disagree on the code dimension")
    dist = (c * c).sum(axis=1)[None, :] - 2.0 * (e @ c.T)
    return np.argmin(dist, axis=1)


@dataclass
class TokenGrid:
    """Code indices ``(f', joints)`` and the matching code vectors."""

    indices: np.ndarray
    embedded: np.ndarray
    frames: int  # input frames this grid decodes back to

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.embedded = np.asarray(self.embedded, dtype=np.float32)
        if self.indices.ndim != 2 or self.embedded.shape[:2] != self.indices.shape:
            raise DimensionError("token indices and embedded codes disagree in shape")

    @property
    def count(self) -> int:
        return int(self.indices.size)

    @classmethod
    def from_indices(cls, indices: np.ndarray, book: Codebook, frames: int) -> "TokenGrid":
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= book.size):
            raise UsageError(f"token index outside [0, {book.size})")
        return cls(idx, book.codes[idx], frames)


def quantize_tensor(latents: Tensor, book: Codebook) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Quantize ``(N, d, f', J)`` latents.

    Returns the straight-through output (forward value equal to the
    selected codes, gradient routed to ``latents``), the indices
    ``(N, f', J)`` and the selected codes in latent layout.
    """
    n, d, fl, j = latents.shape
    if d != book.dim:
        raise DimensionError(f"latent dim {d} != code dim {book.dim}")
    flat = latents.data.transpose(0, 2, 3, 1).reshape(-1, d)
    idx = nearest_codes(flat, book.codes)
    sel = book.codes[idx].reshape(n, fl, j, d).transpose(0, 3, 1, 2)
    sel = np.ascontiguousarray(sel)
    return nx.straight_through(latents, sel), idx.reshape(n, fl, j), sel


def quantize(latents, book: Codebook) -> TokenGrid:
    """Quantize a :class:`LatentGrid` (or ``(f', J, d)`` array)."""
    values = np.asarray(getattr(latents, "values", latents), dtype=np.float32)
    frames = getattr(latents, "frames", 4 * (values.shape[0] - 1) + 1)
    fl, j, d = values.shape
    if d != book.dim:
        raise DimensionError(f"latent dim {d} != code dim {book.dim}")
    idx = nearest_codes(values.reshape(-1, d), book.codes).reshape(fl, j)
    return TokenGrid(idx, book.codes[idx], frames)


def ema_update(book: Codebook, latents: np.ndarray, indices: np.ndarray, decay: float) -> Codebook:
    """One EMA step from the latents assigned in the current batch (in place).

    ``decay`` may be 0, which moves every assigned code to the mean of its
    latents. Codes with no assignment keep their accumulators' decayed
    ratio, which leaves the code vector itself unchanged.
    """
    e = np.asarray(latents, dtype=np.float64).reshape(-1, book.dim)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if e.shape[0] != idx.shape[0]:
        raise DimensionError("one index per latent row is required")
    s = book.size
    counts = np.bincount(idx, minlength=s)
    sums = np.zeros((s, book.dim))
    np.add.at(sums, idx, e)
    lam = float(decay)
    used = counts > 0
    size = book.ema_cluster_size.astype(np.float64)
    embed = book.ema_embed_sum.astype(np.float64)
    size = np.where(used, lam * size + (1.0 - lam) * counts, size)
    embed = np.where(used[:, None], lam * embed + (1.0 - lam) * sums, embed)
    # Unassigned codes skip the decay entirely: shrinking both accumulators
    # by the same factor keeps their ratio in exact arithmetic but not after
    # float32 rounding, and the floor ``eps`` would eventually bite.
    book.ema_cluster_size = size.astype(np.float32)
    book.ema_embed_sum = embed.astype(np.float32)
    book.codes = book.renormalized().astype(np.float32)
    book.usage_history[book.step % book.window] = counts.astype(np.int32)
    book.total_usage += counts
    book.step += 1
    return book


def dead_codes(book: Codebook, floor: int = 1) -> np.ndarray:
    return np.flatnonzero(book.usage_count < floor)


def reset_dead_codes(book: Codebook, recent_latents: np.ndarray, rng_seed, floor: int = 1,
                     jitter: float = 1e-3) -> int:
    """Replace codes used fewer than ``floor`` times in the usage window.

    Each dead code becomes a randomly drawn latent from ``recent_latents``
    plus a perturbation of L2 norm at most ``jitter``. Sampling is without
    replacement unless the batch has fewer rows than dead codes. The reset
    code gets ``floor`` grace assignments so it survives one full window.
    Returns the number of codes reset.
    """
    dead = dead_codes(book, floor)
    if dead.size == 0:
        return 0
    e = np.asarray(recent_latents, dtype=np.float32).reshape(-1, book.dim)
    if e.shape[0] == 0:
        raise UsageError("reset needs at least one recent latent")
    rng = np.random.default_rng(rng_seed)
    pick = rng.choice(e.shape[0], size=dead.size, replace=e.shape[0] < dead.size)
    noise = rng.standard_normal((dead.size, book.dim))
    norms = np.linalg.norm(noise, axis=1, keepdims=True)
    radius = jitter * rng.uniform(0.0, 1.0, size=(dead.size, 1))
    noise = noise / np.maximum(norms, 1e-12) * radius
    new = (e[pick].astype(np.float64) + noise).astype(np.float32)
    book.codes[dead] = new
    book.ema_embed_sum[dead] = new
    book.ema_cluster_size[dead] = 1.0
    book.usage_history[:, dead] = 0
    book.usage_history[(book.step - 1) % book.window, dead] = max(int(floor), 1)
    return int(dead.size)
