"""Codebook usage statistics, code similarity and reconstruction error.

Usage categories compare a code's assignment frequency with the uniform
rate ``1/s``: a code is *underutilized* below 1% of that rate, *active*
between 1% and 15% of it, and *frequent* above 15%. The alternative
reading (share of all assignments: <1%, 1-15%, >15%) is reported next to
it as ``categories_share``.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .motion.data import DatasetStats, MotionSequence, to_differential
from .tokenizer.quantizer import Codebook
from .tokenizer.window import tokenize_windowed

LOW, HIGH = 0.01, 0.15
CATEGORIES = ("underutilized", "active", "frequent")


def categorize(values: np.ndarray, low: float = LOW, high: float = HIGH) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.where(v < low, 0, np.where(v <= high, 1, 2))


def _fractions(cats: np.ndarray) -> dict:
    n = cats.size
    return {name: float((cats == i).sum() / n) for i, name in enumerate(CATEGORIES)}


@dataclass
class CodebookReport:
    counts: np.ndarray
    frequencies: np.ndarray
    categories: dict
    categories_share: dict
    total_tokens: int
    corpus: str = ""
    cosine_edges: np.ndarray | None = None
    cosine_counts: np.ndarray | None = None
    zero_norm_codes: int = 0
    never_used: int = field(init=False)

    def __post_init__(self):
        self.never_used = int((self.counts == 0).sum())

    @property
    def size(self) -> int:
        return self.counts.size

    def per_code_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("code", "count", "frequency", "relative_to_uniform", "category"))
        rel = self.frequencies * self.size
        cats = categorize(rel)
        for i in range(self.size):
            w.writerow((i, int(self.counts[i]), repr(float(self.frequencies[i])), repr(float(rel[i])), CATEGORIES[cats[i]]))
        return buf.getvalue()

    def cosine_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("bin_low", "bin_high", "count"))
        if self.cosine_counts is not None:
            for lo, hi, c in zip(self.cosine_edges[:-1], self.cosine_edges[1:], self.cosine_counts):
                w.writerow((repr(float(lo)), repr(float(hi)), int(c)))
        return buf.getvalue()

    def summary(self) -> dict:
        out = {
            "codebook_size": self.size,
            "total_tokens": self.total_tokens,
            "corpus": self.corpus,
            "thresholds": "frequency relative to the uniform rate 1/s: underutilized < 0.01, "
                          "active 0.01..0.15, frequent > 0.15; categories_share uses the raw "
                          "share of all assignments with the same cut points",
            "categories": self.categories,
            "categories_share": self.categories_share,
            "never_used": self.never_used,
            "zero_norm_codes": self.zero_norm_codes,
        }
        if self.cosine_counts is not None:
            out["cosine_mode"] = cosine_mode(self.cosine_edges, self.cosine_counts)
            out["cosine_pairs"] = int(self.cosine_counts.sum())
        return out

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=1, sort_keys=True)


def usage_from_indices(indices, size: int, corpus: str = "") -> CodebookReport:
    """Report built from token index arrays (any shapes)."""
    arrays = [np.asarray(a).reshape(-1) for a in indices]
    if not arrays or sum(a.size for a in arrays) == 0:
        raise UsageError("usage statistics need at least one token")
    flat = np.concatenate(arrays)
    if flat.min() < 0 or flat.max() >= size:
        raise UsageError(f"token index outside [0, {size})")
    counts = np.bincount(flat, minlength=size)
    freq = counts / counts.sum()
    return CodebookReport(
        counts=counts,
        frequencies=freq,
        categories=_fractions(categorize(freq * size)),
        categories_share=_fractions(categorize(freq)),
        total_tokens=int(flat.size),
        corpus=corpus,
    )


def usage_histogram(book: Codebook, eval_corpus, model, stats: DatasetStats, corpus: str = "") -> CodebookReport:
    """Tokenize every sequence of ``eval_corpus`` and count code assignments."""
    eval_corpus = list(eval_corpus)
    if not eval_corpus:
        raise UsageError("evaluation corpus is empty")
    idx = []
    for seq in eval_corpus:
        diff = to_differential(seq, stats, model.cfg.differential)
        if diff.values.shape[2] != model.cfg.input_channels:
            diff = diff.with_values(diff.values[:, :, :model.cfg.input_channels])
        idx.append(tokenize_windowed(diff, model, book).indices)
    desc = corpus or f"{len(eval_corpus)} sequences, frames {sorted({s.frames for s in eval_corpus})}"
    return usage_from_indices(idx, book.size, desc)


def pairwise_cosine(book, bins: int = 40, block: int = 1024):
    """Histogram over ``[-1, 1]`` of cosine similarity for all unordered code pairs.

    Pairs involving a zero-norm code are excluded; the number of such codes
    is returned as the third element. Returns ``(edges, counts, n_zero)``.
    """
    codes = np.asarray(getattr(book, "codes", book), dtype=np.float64)
    s = codes.shape[0]
    if s < 2:
        raise UsageError("pairwise cosine needs at least two codes")
    norms = np.linalg.norm(codes, axis=1)
    keep = norms > 0
    unit = codes[keep] / norms[keep, None]
    n = unit.shape[0]
    edges = np.linspace(-1.0, 1.0, bins + 1)
    counts = np.zeros(bins, np.int64)
    for a in range(0, n, block):
        sims = np.clip(unit[a:a + block] @ unit.T, -1.0, 1.0)
        rows = np.arange(a, min(a + block, n))
        mask = np.arange(n)[None, :] > rows[:, None]
        counts += np.histogram(sims[mask], bins=edges)[0]
    return edges, counts, int((~keep).sum())


def cosine_mode(edges: np.ndarray, counts: np.ndarray) -> float:
    """Centre of the most populated histogram bin."""
    i = int(np.argmax(counts))
    return float(0.5 * (edges[i] + edges[i + 1]))


def recon_metrics(original: MotionSequence, reconstructed: MotionSequence, stats: DatasetStats) -> dict:
    """MPJPE in meters, mean absolute error in normalised units and per-joint
    mean position error."""
    a = np.asarray(original.coords, dtype=np.float64)
    b = np.asarray(reconstructed.coords, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"sequence shapes differ: {a.shape} vs {b.shape}")
    dist = np.linalg.norm(a - b, axis=-1)
    return {
        "mpjpe": float(dist.mean()),
        "l1": float((np.abs(a - b) / stats.std).mean()),
        "per_joint": dist.mean(axis=0),
    }


def evaluate_reconstruction(model, book: Codebook | None, stats: DatasetStats, corpus,
                            windowed: bool = True) -> dict:
    """Encode, quantize (when ``book`` is given) and decode every sequence.

    Returns the mean MPJPE and L1 over sequences together with the
    per-sequence values. ``windowed`` selects the sliding-window encoder,
    which is the path the command line tools use.
    """
    from .motion.data import from_differential
    from .tokenizer.model import decode, encode
    from .tokenizer.quantizer import quantize
    from .tokenizer.window import encode_windowed

    corpus = list(corpus)
    if not corpus:
        raise UsageError("evaluation corpus is empty")
    mpjpe, l1 = [], []
    for seq in corpus:
        diff = to_differential(seq, stats, model.cfg.differential)
        if diff.values.shape[2] != model.cfg.input_channels:
            diff = diff.with_values(diff.values[:, :, :model.cfg.input_channels])
        lat = (encode_windowed(diff, model) if windowed else encode(diff, model)).values
        if book is not None and model.cfg.quantize:
            lat = quantize(lat, book).embedded
        out = decode(lat, model, frames=diff.frames, first_frame=diff.first_frame, stats_ref=stats.stats_id)
        m = recon_metrics(seq, from_differential(out, stats), stats)
        mpjpe.append(m["mpjpe"])
        l1.append(m["l1"])
    return {"mpjpe": float(np.mean(mpjpe)), "l1": float(np.mean(l1)),
            "per_sequence_mpjpe": np.array(mpjpe), "per_sequence_l1": np.array(l1)}
