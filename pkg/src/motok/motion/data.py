"""Motion sequences, dataset statistics and the differential representation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import UsageError

NUM_JOINTS = 24
STD_FLOOR = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MotionSequence:
    """World-space joint coordinates, shape ``(frames, 24, 3)`` in meters.

    Root translation is already included, so the pelvis track (joint 0)
    carries the global trajectory.
    """

    coords: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float32)
        if c.ndim != 3 or c.shape[2] != 3:
            raise UsageError(f"motion coords must be (frames, joints, 3), got {c.shape}")
        if c.shape[1] != NUM_JOINTS:
            raise UsageError(f"motion sequences have {NUM_JOINTS} joints, got {c.shape[1]}")
        if c.shape[0] < 2:
            raise UsageError(f"motion sequences need at least 2 frames, got {c.shape[0]}")
        if not np.all(np.isfinite(c)):
            raise UsageError("motion coords contain non-finite values")
        object.__setattr__(self, "coords", _frozen(c))
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def frames(self) -> int:
        return self.coords.shape[0]

    @property
    def joints(self) -> int:
        return self.coords.shape[1]

    def root_trajectory(self) -> np.ndarray:
        return self.coords[:, 0, :]

    def translated(self, offset) -> "MotionSequence":
        return MotionSequence(self.coords + np.asarray(offset, dtype=np.float32), self.fps)

    def subsample(self, start: int, length: int, stride: int = 1) -> "MotionSequence":
        stop = start + (length - 1) * stride + 1
        if start < 0 or stop > self.frames:
            raise UsageError(f"crop [{start}:{stop}:{stride}] outside a {self.frames}-frame sequence")
        return MotionSequence(self.coords[start:stop:stride], self.fps / stride)


@dataclass(frozen=True)
class DatasetStats:
    """Normalisation statistics.

    ``mean``/``std`` have shape ``(3,)`` for per-axis normalisation or
    ``()`` for a single scalar; ``mean_joints`` is the per-joint average
    position over every frame of every training sequence.
    """

    mean: np.ndarray
    std: np.ndarray
    mean_joints: np.ndarray
    mode: str = "per_axis"

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        mj = np.asarray(self.mean_joints, dtype=np.float64)
        expected = (3,) if self.mode == "per_axis" else ()
        if self.mode not in ("per_axis", "scalar"):
            raise UsageError(f"unknown normalisation mode {self.mode!r}")
        if mean.shape != expected or std.shape != expected:
            raise UsageError(f"{self.mode} stats need mean/std of shape {expected}")
        if np.any(std <= 0):
            raise UsageError("std components must be positive")
        if mj.shape != (NUM_JOINTS, 3):
            raise UsageError(f"mean_joints must be ({NUM_JOINTS}, 3), got {mj.shape}")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "std", _frozen(std))
        object.__setattr__(self, "mean_joints", _frozen(mj))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "mean_joints": self.mean_joints.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetStats":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]), np.asarray(d["mean_joints"]), d.get("mode", "per_axis"))

    @property
    def stats_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def normalize(self, coords: np.ndarray) -> np.ndarray:
        return (np.asarray(coords, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


@dataclass(frozen=True)
class DifferentialMotion:
    """Normalised coordinates with the first frame subtracted.

    ``values[0]`` is exactly zero. ``first_frame`` keeps the normalised
    absolute first pose so the sequence can be mapped back to world space.
    With ``differential=False`` (ablation) ``values`` are the plain
    normalised coordinates and ``first_frame`` is all zeros.
    """

    values: np.ndarray
    first_frame: np.ndarray
    stats_ref: str
    differential: bool = True
    fps: float = 30.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        ff = np.asarray(self.first_frame, dtype=np.float32)
        if v.ndim != 3 or v.shape[1] != NUM_JOINTS:
            raise UsageError(f"differential values must be (frames, {NUM_JOINTS}, c), got {v.shape}")
        if ff.shape != (NUM_JOINTS, 3):
            raise UsageError(f"first_frame must be ({NUM_JOINTS}, 3), got {ff.shape}")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "first_frame", _frozen(ff))

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    def with_values(self, values: np.ndarray) -> "DifferentialMotion":
        return DifferentialMotion(values, self.first_frame, self.stats_ref, self.differential, self.fps)


def compute_stats(corpus: Sequence[MotionSequence], mode: str = "per_axis") -> DatasetStats:
    """Global mean/std of all coordinate values plus per-joint mean positions.

    Two passes in float64 with a fixed summation order, so the result does
    not depend on how the corpus was assembled beyond its contents.
    """
    if len(corpus) == 0:
        raise UsageError("compute_stats needs a non-empty corpus")
    n_frames = 0
    joint_sum = np.zeros((NUM_JOINTS, 3))
    for seq in corpus:
        c = seq.coords.astype(np.float64)
        joint_sum += c.sum(axis=0)
        n_frames += c.shape[0]
    mean_joints = joint_sum / n_frames
    if mode == "per_axis":
        mean = mean_joints.mean(axis=0)
    elif mode == "scalar":
        mean = np.asarray(mean_joints.mean())
    else:
        raise UsageError(f"unknown normalisation mode {mode!r}")
    sq = np.zeros(3) if mode == "per_axis" else 0.0
    for seq in corpus:
        dev = seq.coords.astype(np.float64) - mean
        sq = sq + ((dev * dev).sum(axis=(0, 1)) if mode == "per_axis" else (dev * dev).sum())
    count = n_frames * NUM_JOINTS * (1 if mode == "per_axis" else 3)
    std = np.maximum(np.sqrt(np.asarray(sq) / count), STD_FLOOR)
    return DatasetStats(mean, std, mean_joints, mode)


def to_differential(seq: MotionSequence, stats: DatasetStats, differential: bool = True) -> DifferentialMotion:
    """Normalise ``seq`` and subtract its first frame.

    ``values[t] = (x[t] - x[0]) / std``, which equals
    ``normalize(x[t]) - normalize(x[0])`` while staying exactly invariant
    to any translation that is representable without rounding.
    """
    c = seq.coords.astype(np.float64)
    if differential:
        values = (c - c[0]) / stats.std
        first = stats.normalize(c[0])
    else:
        values = stats.normalize(c)
        first = np.zeros((NUM_JOINTS, 3))
    values = values.astype(np.float32)
    if differential:
        values[0] = 0.0
    return DifferentialMotion(values, first, stats.stats_id, differential, seq.fps)


def from_differential(diff: DifferentialMotion, stats: DatasetStats) -> MotionSequence:
    if diff.stats_ref != stats.stats_id:
        raise UsageError(f"differential motion was built with stats {diff.stats_ref}, got {stats.stats_id}")
    v = diff.values.astype(np.float64)
    if v.shape[2] != 3:
        raise UsageError(f"cannot map {v.shape[2]}-channel values back to 3D coordinates")
    norm = v + diff.first_frame.astype(np.float64)
    return MotionSequence(stats.denormalize(norm).astype(np.float32), diff.fps)


def augment(diff: DifferentialMotion, rng_seed: int, max_ratio: float = 0.1) -> DifferentialMotion:
    """Random global scale in ``[1-r, 1+r]`` and per-axis shift in ``[-r, r]``
    (normalised units), then frame 0 is re-zeroed for differential input.

    In differential mode the re-zeroing cancels the shift, so only the
    scale survives; the shift matters for the absolute-coordinate ablation.
    """
    if not 0.0 <= max_ratio < 1.0:
        raise UsageError(f"max_ratio must lie in [0, 1), got {max_ratio}")
    rng = np.random.default_rng(rng_seed)
    scale = rng.uniform(1.0 - max_ratio, 1.0 + max_ratio)
    shift = rng.uniform(-max_ratio, max_ratio, size=diff.values.shape[2])
    v = diff.values.astype(np.float64) * scale + shift
    if diff.differential:
        v = v - v[0]
    out = v.astype(np.float32)
    if diff.differential:
        out[0] = 0.0
    return diff.with_values(out)
