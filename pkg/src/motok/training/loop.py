"""Tokenizer training loop."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import numerics as nx
from ..errors import NumericError, UsageError
from ..motion.data import DatasetStats, MotionSequence, augment, compute_stats, to_differential
from ..motion.synthetic import VALID_FRAMES
from ..tokenizer.checkpoint import Checkpoint, save_checkpoint
from ..tokenizer.config import TokenizerConfig
from ..tokenizer.loss import vq_loss
from ..tokenizer.model import MotionTokenizer
from ..tokenizer.quantizer import Codebook, ema_update, quantize_tensor, reset_dead_codes
from .optim import AdamW

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("step", "recon", "commit", "perplexity", "active_fraction")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 10_000
    lr_phase1: float = 1e-4
    lr_phase2: float = 1e-5
    phase1_fraction: float = 2.0 / 3.0
    betas: tuple[float, float] = (0.9, 0.99)
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    batch_size: int = 4
    batch_frames: int | None = None  # if set, batch = max(1, batch_frames // f)
    seed: int = 0
    frame_lengths: tuple[int, ...] = VALID_FRAMES
    strides: tuple[int, ...] = (1, 2)
    augment_ratio: float = 0.1
    reset_codes: bool = True
    no_quantize: bool = False
    no_differential: bool = False
    quant_3d: bool = False
    checkpoint_every: int = 0
    divergence: float = 1e4

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "frame_lengths", tuple(int(f) for f in self.frame_lengths))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if self.lr_phase1 <= 0 or self.lr_phase2 <= 0:
            raise UsageError("learning rates must be positive")
        if self.batch_size < 1 or (self.batch_frames is not None and self.batch_frames < 1):
            raise UsageError("batch size must be >= 1")
        if self.steps < 0:
            raise UsageError("steps must be >= 0")
        if not self.frame_lengths or min(self.frame_lengths) < 2:
            raise UsageError("frame_lengths must be non-empty and >= 2")
        if not self.strides or min(self.strides) < 1:
            raise UsageError("strides must be >= 1")
        if not 0.0 < self.phase1_fraction <= 1.0:
            raise UsageError("phase1_fraction must lie in (0, 1]")

    @classmethod
    def desk(cls, **kw) -> "TrainConfig":
        base = dict(lr_phase1=5e-4, lr_phase2=5e-5, batch_frames=396)
        base.update(kw)
        return cls(**base)

    def lr_at(self, step: int) -> float:
        return self.lr_phase1 if step < round(self.steps * self.phase1_fraction) else self.lr_phase2

    def tokenizer_config(self, cfg: TokenizerConfig) -> TokenizerConfig:
        """Apply the ablation flags to a tokenizer configuration."""
        return cfg.with_(
            quantize=cfg.quantize and not self.no_quantize,
            differential=cfg.differential and not self.no_differential,
            input_channels=2 if self.quant_3d else cfg.input_channels,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)
    wall_time: float = 0.0
    resets: int = 0

    def add(self, step, recon, commit, perplexity, active_fraction):
        self.rows.append((int(step), float(recon), float(commit), float(perplexity), float(active_fraction)))

    def column(self, name: str) -> np.ndarray:
        return np.array([r[REPORT_COLUMNS.index(name)] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r[0]] + [repr(v) for v in r[1:]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    def tail_mean(self, name: str, n: int = 200) -> float:
        col = self.column(name)
        return float(col[-n:].mean()) if col.size else float("nan")


@dataclass
class TrainResult:
    model: MotionTokenizer
    codebook: Codebook
    optimizer: AdamW
    report: TrainReport
    stats: DatasetStats
    train_config: TrainConfig
    step: int
    checkpoint_sha256: str | None = None

    def meta(self) -> dict:
        return {"step": self.step, "adam_t": self.optimizer.t, "train_config": self.train_config.to_dict()}

    def save(self, path) -> str:
        extras = self.optimizer.state_arrays()
        self.checkpoint_sha256 = save_checkpoint(path, self.model, self.codebook, self.stats, self.meta(), extras)
        return self.checkpoint_sha256


def perplexity(indices: np.ndarray, size: int) -> float:
    counts = np.bincount(np.asarray(indices).reshape(-1), minlength=size).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(np.exp(-(p * np.log(p)).sum()))


def sample_batch(corpus, stats: DatasetStats, tc: TrainConfig, step: int, input_channels: int,
                 differential: bool) -> np.ndarray:
    """Deterministic batch for ``step``: one crop length for the whole batch."""
    rng = np.random.default_rng([tc.seed, step])
    longest = max(s.frames for s in corpus)
    lengths = [f for f in tc.frame_lengths if f <= longest]
    if not lengths:
        raise UsageError(f"no configured frame length fits the corpus (longest sequence {longest})")
    f = int(lengths[rng.integers(len(lengths))])
    strides = [s for s in tc.strides if (f - 1) * s + 1 <= longest]
    stride = int(strides[rng.integers(len(strides))])
    span = (f - 1) * stride + 1
    bs = tc.batch_size if tc.batch_frames is None else max(1, tc.batch_frames // f)
    eligible = [i for i, s in enumerate(corpus) if s.frames >= span]
    out = np.empty((bs, input_channels, f, 24), np.float32)
    for b in range(bs):
        seq = corpus[eligible[rng.integers(len(eligible))]]
        start = int(rng.integers(seq.frames - span + 1))
        diff = to_differential(seq.subsample(start, f, stride), stats, differential)
        if tc.augment_ratio > 0:
            diff = augment(diff, int(rng.integers(2**63 - 1)), tc.augment_ratio)
        out[b] = diff.values[:, :, :input_channels].transpose(2, 0, 1)
    return out


def train_step(model: MotionTokenizer, book: Codebook, opt: AdamW, x: np.ndarray, tc: TrainConfig,
               step: int) -> tuple[float, float, float, np.ndarray | None, int]:
    """One optimisation step. Returns (total, recon, commit, indices, resets)."""
    cfg = model.cfg
    for p in model.params.values():
        p.zero_grad()
    xt = nx.Tensor(x)
    z = model.encode_tensor(xt)
    idx = None
    if cfg.quantize:
        zq, idx, sel = quantize_tensor(z, book)
        parts = vq_loss(xt, model.decode_tensor(zq), z, sel, cfg.beta)
    else:
        parts = vq_loss(xt, model.decode_tensor(z), None, None, cfg.beta)
    total, recon, commit = parts.values()
    if not math.isfinite(total) or total > tc.divergence:
        raise NumericError(f"training diverged at step {step}: loss {total}")
    parts.total.backward()
    opt.step(model.params, {k: p.grad for k, p in model.params.items()}, tc.lr_at(step))
    resets = 0
    if cfg.quantize:
        flat = z.data.transpose(0, 2, 3, 1).reshape(-1, cfg.code_dim)
        ema_update(book, flat, idx, cfg.ema_decay)
        if tc.reset_codes and book.step % cfg.reset_interval == 0:
            resets = reset_dead_codes(book, flat, [tc.seed, step, 1], cfg.reset_usage_floor, cfg.reset_jitter)
    return total, recon, commit, idx, resets


def train_tokenizer(corpus, cfg: TokenizerConfig, tc: TrainConfig, stats: DatasetStats | None = None,
                    resume: Checkpoint | None = None, checkpoint_path=None, stop_at: int | None = None,
                    progress: bool = False) -> TrainResult:
    """Train from scratch, or continue from ``resume`` up to ``tc.steps``.

    Every source of randomness is derived from ``(tc.seed, step)``, so a
    resumed run reproduces the uninterrupted one bit for bit. ``stop_at``
    ends the loop early (used to produce mid-run checkpoints).
    """
    corpus = list(corpus)
    if not corpus:
        raise UsageError("training corpus is empty")
    if any(not isinstance(s, MotionSequence) for s in corpus):
        raise UsageError("corpus must contain MotionSequence objects")
    if resume is not None:
        model = resume.model()
        book = resume.codebook.copy()
        stats = resume.stats if resume.stats is not None else stats
        start = int(resume.meta.get("step", 0))
        opt = AdamW(tc.lr_phase1, tc.betas, tc.adam_eps, tc.weight_decay)
        opt.load_state(resume.meta.get("adam_t", 0), resume.extras)
        cfg = model.cfg
    else:
        cfg = tc.tokenizer_config(cfg)
        model = MotionTokenizer.init(cfg, tc.seed)
        book = Codebook.init(cfg.codebook_size, cfg.code_dim, tc.seed + 1, cfg.usage_window, cfg.ema_eps)
        opt = AdamW(tc.lr_phase1, tc.betas, tc.adam_eps, tc.weight_decay)
        start = 0
    if stats is None:
        stats = compute_stats(corpus)
    report = TrainReport()
    end = tc.steps if stop_at is None else min(stop_at, tc.steps)
    t0 = time.perf_counter()
    result = TrainResult(model, book, opt, report, stats, tc, start)
    for step in range(start, end):
        x = sample_batch(corpus, stats, tc, step, cfg.input_channels, cfg.differential)
        total, recon, commit, idx, resets = train_step(model, book, opt, x, tc, step)
        report.resets += resets
        ppl = perplexity(idx, cfg.codebook_size) if idx is not None else float(cfg.codebook_size)
        active = float((book.usage_count > 0).mean()) if cfg.quantize else 1.0
        report.add(step, recon, commit, ppl, active)
        result.step = step + 1
        if progress and (step + 1) % 500 == 0:
            log.info("step %d recon %.4f commit %.4f ppl %.1f active %.3f", step + 1, recon, commit, ppl, active)
        if checkpoint_path is not None and tc.checkpoint_every and (step + 1) % tc.checkpoint_every == 0:
            result.save(checkpoint_path)
    report.wall_time = time.perf_counter() - t0
    if checkpoint_path is not None:
        result.save(checkpoint_path)
    return result


def dumps_config(tc: TrainConfig) -> str:
    return json.dumps(tc.to_dict(), sort_keys=True)
