"""Binary checkpoint (``4DMT``) and token (``MTOK``) files.

All integers and floats are little-endian.

Checkpoint::

    magic "4DMT" | version u16
    config      u32 length + UTF-8 JSON (TokenizerConfig)
    stats       u32 length + UTF-8 JSON (may be empty)
    meta        u32 length + UTF-8 JSON (training state, may be empty)
    params      u32 count, then per tensor: u16 name length, name,
                u8 ndim, u32 dims, f32 data
    codebook    u32 size, u32 dim, u64 step, u32 window, f32 eps,
                f32 codes, f32 ema_cluster_size, f32 ema_embed_sum,
                i32 usage_history, i64 total_usage
    extras      same layout as params (optimizer moments, unconditional
                tokens, ...)

Token file::

    magic "MTOK" | version u16 | f' u32 | joints u16 | frames u32
    checkpoint sha256 (32 raw bytes) | has_first_frame u8
    indices u32[f'][joints] | first_frame f32[24][3] when flagged
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .. import numerics as nx
from ..errors import FormatError
from ..motion.data import NUM_JOINTS, DatasetStats
from .config import TokenizerConfig
from .model import MotionTokenizer
from .quantizer import Codebook

CKPT_MAGIC = b"4DMT"
CKPT_VERSION = 1
TOKEN_MAGIC = b"MTOK"
TOKEN_VERSION = 1


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}", offset=len(self.buf))
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        st = struct.Struct("<" + fmt)
        return st.unpack(self.take(st.size, what))

    def array(self, dtype: str, shape, what: str) -> np.ndarray:
        count = int(np.prod(shape)) if len(shape) else 1
        raw = self.take(count * np.dtype(dtype).itemsize, what)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    def text(self, what: str) -> str:
        (n,) = self.unpack("I", what)
        start = self.pos
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid UTF-8", offset=start) from None


def _text(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _tensors(named) -> bytes:
    out = [struct.pack("<I", len(named))]
    for name, arr in named.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape) + a.tobytes())
    return b"".join(out)


def _read_tensors(r: _Reader, what: str) -> "OrderedDict[str, np.ndarray]":
    (count,) = r.unpack("I", f"{what} count")
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (nlen,) = r.unpack("H", f"{what} name length")
        name = r.take(nlen, f"{what} name").decode("utf-8", errors="replace")
        (ndim,) = r.unpack("B", f"{name} rank")
        shape = r.unpack(f"{ndim}I", f"{name} shape") if ndim else ()
        out[name] = r.array("<f4", shape, name).astype(np.float32)
    return out


@dataclass
class Checkpoint:
    config: TokenizerConfig
    params: "OrderedDict[str, np.ndarray]"
    codebook: Codebook
    stats: DatasetStats | None = None
    meta: dict = field(default_factory=dict)
    extras: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    sha256: str = ""

    def model(self) -> MotionTokenizer:
        params = OrderedDict((k, nx.parameter(v.copy(), name=k)) for k, v in self.params.items())
        return MotionTokenizer(self.config, params)


def encode_checkpoint(cfg: TokenizerConfig, params, book: Codebook, stats: DatasetStats | None = None,
                      meta: dict | None = None, extras=None) -> bytes:
    arrays = OrderedDict((k, v.data if hasattr(v, "data") and not isinstance(v, np.ndarray) else v)
                         for k, v in params.items())
    parts = [
        CKPT_MAGIC, struct.pack("<H", CKPT_VERSION),
        _text(cfg.to_json()),
        _text(json.dumps(stats.to_dict(), sort_keys=True) if stats is not None else ""),
        _text(json.dumps(meta or {}, sort_keys=True)),
        _tensors(arrays),
        struct.pack("<IIQIf", book.size, book.dim, book.step, book.window, book.eps),
        np.ascontiguousarray(book.codes, "<f4").tobytes(),
        np.ascontiguousarray(book.ema_cluster_size, "<f4").tobytes(),
        np.ascontiguousarray(book.ema_embed_sum, "<f4").tobytes(),
        np.ascontiguousarray(book.usage_history, "<i4").tobytes(),
        np.ascontiguousarray(book.total_usage, "<i8").tobytes(),
        _tensors(OrderedDict(extras or {})),
    ]
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}, expected {CKPT_MAGIC!r}", offset=0)
    (version,) = r.unpack("H", "version")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    cfg_pos = r.pos
    try:
        cfg = TokenizerConfig.from_json(r.text("config"))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"invalid tokenizer config: {exc}", offset=cfg_pos) from None
    stats_text = r.text("stats")
    stats = DatasetStats.from_dict(json.loads(stats_text)) if stats_text else None
    meta = json.loads(r.text("meta") or "{}")
    params = _read_tensors(r, "params")
    size, dim, step, window, eps = r.unpack("IIQIf", "codebook header")
    if size != cfg.codebook_size or dim != cfg.code_dim:
        raise FormatError(f"codebook {size}x{dim} disagrees with config {cfg.codebook_size}x{cfg.code_dim}")
    book = Codebook(
        r.array("<f4", (size, dim), "codes"),
        r.array("<f4", (size,), "ema_cluster_size"),
        r.array("<f4", (size, dim), "ema_embed_sum"),
        r.array("<i4", (window, size), "usage_history"),
        int(step), float(eps),
        r.array("<i8", (size,), "total_usage"),
    )
    extras = _read_tensors(r, "extras")
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after checkpoint", offset=r.pos)
    expected = MotionTokenizer.init(cfg, 0).params
    if list(expected) != list(params) or any(expected[k].shape != params[k].shape for k in params):
        raise FormatError("checkpoint parameters do not match the architecture in its config")
    return Checkpoint(cfg, params, book, stats, meta, extras, hashlib.sha256(buf).hexdigest())


def save_checkpoint(path, model: MotionTokenizer, book: Codebook, stats: DatasetStats | None = None,
                    meta: dict | None = None, extras=None) -> str:
    """Write a checkpoint atomically; returns its sha256."""
    buf = encode_checkpoint(model.cfg, model.params, book, stats, meta, extras)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf)
    os.replace(tmp, path)
    return hashlib.sha256(buf).hexdigest()


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


# ---------------------------------------------------------------- tokens

_TOK_HEADER = struct.Struct("<4sHIHI32sB")


@dataclass
class TokenFile:
    indices: np.ndarray  # (f', joints) integers
    frames: int
    checkpoint_sha256: str
    first_frame: np.ndarray | None = None


def encode_tokens(tok: TokenFile) -> bytes:
    idx = np.asarray(tok.indices)
    if idx.ndim != 2:
        raise FormatError("token indices must be 2-D")
    digest = bytes.fromhex(tok.checkpoint_sha256) if tok.checkpoint_sha256 else bytes(32)
    has_ff = tok.first_frame is not None
    head = _TOK_HEADER.pack(TOKEN_MAGIC, TOKEN_VERSION, idx.shape[0], idx.shape[1], tok.frames, digest, int(has_ff))
    body = np.ascontiguousarray(idx, "<u4").tobytes()
    if has_ff:
        body += np.ascontiguousarray(tok.first_frame, "<f4").tobytes()
    return head + body


def decode_tokens(buf: bytes) -> TokenFile:
    if len(buf) < _TOK_HEADER.size:
        raise FormatError(f"truncated MTOK header: {len(buf)} of {_TOK_HEADER.size} bytes", offset=len(buf))
    magic, version, fl, j, frames, digest, has_ff = _TOK_HEADER.unpack_from(buf, 0)
    if magic != TOKEN_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {TOKEN_MAGIC!r}", offset=0)
    if version != TOKEN_VERSION:
        raise FormatError(f"unsupported MTOK version {version}", offset=4)
    if j != NUM_JOINTS:
        raise FormatError(f"MTOK joint count {j}, expected {NUM_JOINTS}", offset=10)
    need = fl * j * 4 + (NUM_JOINTS * 3 * 4 if has_ff else 0)
    have = len(buf) - _TOK_HEADER.size
    if have != need:
        raise FormatError(f"MTOK payload is {have} bytes, expected {need}", offset=min(len(buf), _TOK_HEADER.size + need))
    off = _TOK_HEADER.size
    idx = np.frombuffer(buf, "<u4", fl * j, off).reshape(fl, j).astype(np.int64)
    ff = None
    if has_ff:
        ff = np.frombuffer(buf, "<f4", NUM_JOINTS * 3, off + fl * j * 4).reshape(NUM_JOINTS, 3).copy()
    return TokenFile(idx, int(frames), digest.hex() if any(digest) else "", ff)


def write_tokens(path, tok: TokenFile) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tokens(tok))


def read_tokens(path) -> TokenFile:
    with open(path, "rb") as fh:
        return decode_tokens(fh.read())
