"""MSEQ motion files and JSON statistics files.

MSEQ layout (little-endian)::

    magic  "MSEQ"         4 bytes
    version u16 = 1
    frames  u32
    joints  u16 = 24
    fps     f32
    payload f32[frames][joints][3]
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from ..errors import FormatError, UsageError
from .data import NUM_JOINTS, DatasetStats, MotionSequence

MSEQ_MAGIC = b"MSEQ"
MSEQ_VERSION = 1
_HEADER = struct.Struct("<4sHIHf")


def encode_motion(seq: MotionSequence) -> bytes:
    header = _HEADER.pack(MSEQ_MAGIC, MSEQ_VERSION, seq.frames, seq.joints, seq.fps)
    return header + seq.coords.astype("<f4").tobytes()


def decode_motion(buf: bytes) -> MotionSequence:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated MSEQ header: {len(buf)} of {_HEADER.size} bytes", offset=len(buf))
    magic, version, frames, joints, fps = _HEADER.unpack_from(buf, 0)
    if magic != MSEQ_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MSEQ_MAGIC!r}", offset=0)
    if version != MSEQ_VERSION:
        raise FormatError(f"unsupported MSEQ version {version}", offset=4)
    if joints != NUM_JOINTS:
        raise FormatError(f"MSEQ joint count {joints}, expected {NUM_JOINTS}", offset=10)
    if frames < 2:
        raise FormatError(f"MSEQ frame count {frames} < 2", offset=6)
    need = frames * joints * 3 * 4
    have = len(buf) - _HEADER.size
    if have < need:
        raise FormatError(f"truncated MSEQ payload: {have} of {need} bytes", offset=len(buf))
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after MSEQ payload", offset=_HEADER.size + need)
    coords = np.frombuffer(buf, dtype="<f4", count=frames * joints * 3, offset=_HEADER.size)
    coords = coords.reshape(frames, joints, 3).astype(np.float32)
    if not np.all(np.isfinite(coords)):
        bad = int(np.argmax(~np.isfinite(coords.reshape(-1))))
        raise FormatError("non-finite coordinate in MSEQ payload", offset=_HEADER.size + 4 * bad)
    return MotionSequence(coords, fps)


def write_motion(path: str | os.PathLike, seq: MotionSequence) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_motion(seq))


def read_motion(path: str | os.PathLike) -> MotionSequence:
    with open(path, "rb") as fh:
        return decode_motion(fh.read())


def write_stats(path: str | os.PathLike, stats: DatasetStats) -> None:
    doc = {"format": "motok-stats", "version": 1, "id": stats.stats_id, **stats.to_dict()}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_stats(path: str | os.PathLike) -> DatasetStats:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"stats file is not valid JSON: {exc.msg}", offset=exc.pos) from None
    if doc.get("format") != "motok-stats":
        raise FormatError("not a motok stats file", offset=0)
    try:
        stats = DatasetStats.from_dict(doc)
    except (KeyError, UsageError) as exc:
        raise FormatError(f"invalid stats file: {exc}") from None
    if "id" in doc and doc["id"] != stats.stats_id:
        raise FormatError(f"stats id {doc['id']} does not match contents ({stats.stats_id})")
    return stats
