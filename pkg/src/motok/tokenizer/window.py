"""Sliding-window tokenization for long sequences."""
from __future__ import annotations

import numpy as np

from .. import numerics as nx
from ..motion.data import DifferentialMotion
from .config import latent_frames
from .model import LatentGrid, MotionTokenizer, motion_to_batch
from .quantizer import Codebook, TokenGrid, quantize


def window_spans(n_latent: int, window: int = 8) -> list[tuple[int, int]]:
    """Inclusive latent-frame spans ``[a, b]`` covering ``0..n_latent-1``.

    Consecutive spans share exactly one latent frame. A sequence with at
    most ``window + 1`` latent frames is a single span.
    """
    if n_latent <= window + 1:
        return [(0, n_latent - 1)]
    spans = []
    a = 0
    while a < n_latent - 1:
        b = min(a + window, n_latent - 1)
        spans.append((a, b))
        a = b
    return spans


def encode_windowed(diff: DifferentialMotion, model: MotionTokenizer, window: int | None = None,
                    context: int | None = None) -> LatentGrid:
    """Encode span by span and average latents on shared frames.

    Span ``[a, b]`` is encoded from input frames ``4(a - c) .. 4(b + c)``
    where ``c`` is the ``context`` halo in latent frames (clipped at the
    sequence ends); only latent frames ``a .. b`` are kept. With ``c = 0``
    the first latent frame of a span is computed from an un-pooled frame,
    exactly as frame 0 is for a whole sequence.
    """
    window = model.cfg.window if window is None else window
    context = model.cfg.window_context if context is None else context
    x = motion_to_batch(diff, model.cfg)
    n_lat = latent_frames(x.shape[2])
    acc = np.zeros((n_lat, x.shape[3], model.cfg.code_dim), np.float64)
    hits = np.zeros(n_lat, np.int64)
    with nx.no_grad():
        for a, b in window_spans(n_lat, window):
            lo, hi = max(0, a - context), min(n_lat - 1, b + context)
            z = model.encode_tensor(nx.Tensor(np.ascontiguousarray(x[:, :, 4 * lo:4 * hi + 1])))
            acc[a:b + 1] += z.data[0, :, a - lo:b - lo + 1].transpose(1, 2, 0)
            hits[a:b + 1] += 1
    lat = (acc / hits[:, None, None]).astype(np.float32)
    return LatentGrid(lat, diff.frames)


def tokenize_windowed(diff: DifferentialMotion, model: MotionTokenizer, book: Codebook,
                      window: int | None = None, context: int | None = None) -> TokenGrid:
    return quantize(encode_windowed(diff, model, window, context), book)
