"""Convolutional encoder/decoder over the (frame, joint) grid.

Activations use NCHW layout with ``H = frames`` and ``W = joints``, so a
batch of differential motions is ``(N, channels, frames, 24)``. Temporal
pooling keeps frame 0 out of the pooling windows: the first frame is split
off, the remaining ``f - 1`` frames are pooled, and the two are concatenated
back together. The decoder mirrors this with nearest-neighbour upsampling.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .. import numerics as nx
from ..errors import DimensionError, UsageError
from ..motion.data import NUM_JOINTS, DifferentialMotion
from ..numerics import Tensor
from .config import TokenizerConfig, latent_frames, padded_frames


@dataclass
class LatentGrid:
    """Continuous latents, shape ``(f', joints, d)``."""

    values: np.ndarray
    frames: int  # input frame count before any padding

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise UsageError(f"latent grid must be (f', joints, d), got {v.shape}")
        self.values = v

    @property
    def latent_frames(self) -> int:
        return self.values.shape[0]


def _conv_init(rng, cout, cin, kh, kw, bias: bool):
    bound = 1.0 / np.sqrt(cin * kh * kw)
    w = rng.uniform(-bound, bound, size=(cout, cin, kh, kw)).astype(np.float32)
    b = np.zeros(cout, np.float32) if bias else None
    return w, b


def _groups(channels: int, groups: int) -> int:
    g = min(groups, channels)
    while channels % g:
        g -= 1
    return g


class MotionTokenizer:
    """Parameters plus forward passes of the encoder and decoder.

    ``params`` is an ordered name -> Tensor mapping; every entry is a leaf
    that requires grad. The codebook is kept separately (EMA-only).
    """

    def __init__(self, cfg: TokenizerConfig, params: "OrderedDict[str, Tensor]"):
        self.cfg = cfg
        self.params = params

    # ----------------------------------------------------------------- init
    @classmethod
    def init(cls, cfg: TokenizerConfig, seed: int = 0) -> "MotionTokenizer":
        rng = np.random.default_rng(seed)
        raw: "OrderedDict[str, np.ndarray]" = OrderedDict()

        def conv(name, cout, cin, k):
            w, b = _conv_init(rng, cout, cin, k, k, cfg.conv_bias)
            raw[f"{name}.w"] = w
            if b is not None:
                raw[f"{name}.b"] = b

        def norm(name, c):
            if cfg.norm == "none":
                return
            raw[f"{name}.w"] = np.ones(c, np.float32)
            raw[f"{name}.b"] = np.zeros(c, np.float32)

        def resblock(name, cin, cout):
            norm(f"{name}.norm1", cin)
            conv(f"{name}.conv1", cout, cin, 3)
            norm(f"{name}.norm2", cout)
            conv(f"{name}.conv2", cout, cout, 3)
            if cin != cout:
                conv(f"{name}.skip", cout, cin, 1)

        ch = cfg.channels
        conv("enc.conv_in", ch[0], cfg.input_channels, 3)
        prev = ch[0]
        for i, c in enumerate(ch):
            resblock(f"enc.stage{i}", prev, c)
            prev = c
        if cfg.out_norm:
            norm("enc.norm_out", prev)
        conv("enc.conv_out", cfg.code_dim, prev, 1)

        dch = ch[::-1]
        conv("dec.conv_in", dch[0], cfg.code_dim, 3)
        prev = dch[0]
        for i, c in enumerate(dch):
            resblock(f"dec.stage{i}", prev, c)
            prev = c
        if cfg.out_norm:
            norm("dec.norm_out", prev)
        conv("dec.conv_out", cfg.input_channels, prev, 3)

        params = OrderedDict((k, nx.parameter(v, name=k)) for k, v in raw.items())
        return cls(cfg, params)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    # -------------------------------------------------------------- blocks
    def _act(self, x: Tensor) -> Tensor:
        if self.cfg.activation == "silu":
            return nx.silu(x)
        return nx.relu(x)

    def _conv(self, name: str, x: Tensor, k: int, dilation=(1, 1)) -> Tensor:
        p = self.params
        pad = ((k // 2) * dilation[0], (k // 2) * dilation[1])
        return nx.conv2d(x, p[f"{name}.w"], p.get(f"{name}.b"), dilation=dilation, padding=pad)

    def _norm(self, name: str, x: Tensor) -> Tensor:
        kind = self.cfg.norm
        if kind == "none" or f"{name}.w" not in self.params:
            return x
        w, b = self.params[f"{name}.w"], self.params[f"{name}.b"]
        if kind == "layer":
            # Per-position channel norm: local, but blind to per-position scale.
            return nx.layer_norm(x, w, b, axis=1)
        n, c, h, wd = x.shape
        g = _groups(c, self.cfg.norm_groups)
        xn = nx.layer_norm(nx.reshape(x, (n, g, (c // g) * h * wd)), axis=-1)
        xn = nx.reshape(xn, (n, c, h, wd))
        return nx.add(nx.mul(xn, nx.reshape(w, (1, c, 1, 1))), nx.reshape(b, (1, c, 1, 1)))

    def _resblock(self, name: str, x: Tensor, dilation: int) -> Tensor:
        h = self._conv(f"{name}.conv1", self._act(self._norm(f"{name}.norm1", x)), 3, (dilation, 1))
        h = self._conv(f"{name}.conv2", self._act(self._norm(f"{name}.norm2", h)), 3, (dilation, 1))
        skip = self._conv(f"{name}.skip", x, 1) if f"{name}.skip.w" in self.params else x
        return nx.add(h, skip)

    @staticmethod
    def _down(x: Tensor, factor: int) -> Tensor:
        if factor == 1:
            return x
        head = nx.getitem(x, (slice(None), slice(None), slice(0, 1)))
        tail = nx.getitem(x, (slice(None), slice(None), slice(1, None)))
        return nx.concat([head, nx.avg_pool2d(tail, (factor, 1))], axis=2)

    @staticmethod
    def _up(x: Tensor, factor: int) -> Tensor:
        if factor == 1:
            return x
        head = nx.getitem(x, (slice(None), slice(None), slice(0, 1)))
        tail = nx.getitem(x, (slice(None), slice(None), slice(1, None)))
        return nx.concat([head, nx.nearest_upsample(tail, (factor, 1))], axis=2)

    # ------------------------------------------------------------- forward
    def encode_tensor(self, x: Tensor) -> Tensor:
        """``(N, C, f, 24)`` with ``(f - 1) % 4 == 0`` -> ``(N, d, f', 24)``."""
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.input_channels or x.shape[3] != NUM_JOINTS:
            raise DimensionError(f"encoder expects (N, {cfg.input_channels}, f, {NUM_JOINTS}), got {x.shape}")
        if (x.shape[2] - 1) % 4:
            raise DimensionError(f"encoder expects (f - 1) % 4 == 0, got f={x.shape[2]}")
        h = self._conv("enc.conv_in", x, 3)
        for i, (fd, dil) in enumerate(zip(cfg.frame_down, cfg.dilations)):
            h = self._resblock(f"enc.stage{i}", h, dil)
            h = self._down(h, fd)
        h = self._act(self._norm("enc.norm_out", h))
        return self._conv("enc.conv_out", h, 1)

    def decode_tensor(self, z: Tensor) -> Tensor:
        """``(N, d, f', 24)`` -> ``(N, C, 4 (f' - 1) + 1, 24)``."""
        cfg = self.cfg
        if z.ndim != 4 or z.shape[1] != cfg.code_dim or z.shape[3] != NUM_JOINTS:
            raise DimensionError(f"decoder expects (N, {cfg.code_dim}, f', {NUM_JOINTS}), got {z.shape}")
        h = self._conv("dec.conv_in", z, 3)
        ups = cfg.frame_down[::-1]
        dils = cfg.dilations[::-1]
        for i, (fu, dil) in enumerate(zip(ups, dils)):
            h = self._up(h, fu)
            h = self._resblock(f"dec.stage{i}", h, dil)
        h = self._act(self._norm("dec.norm_out", h))
        return self._conv("dec.conv_out", h, 3)


def reflect_pad_frames(values: np.ndarray, target: int) -> np.ndarray:
    """Extend ``(f, ...)`` to ``target`` frames by reflecting the tail."""
    f = values.shape[0]
    if target == f:
        return values
    idx = np.arange(f, target)
    period = 2 * (f - 1)
    m = idx % period
    src = np.where(m < f, m, period - m)
    return np.concatenate([values, values[src]], axis=0)


def motion_to_batch(diff: DifferentialMotion, cfg: TokenizerConfig) -> np.ndarray:
    """Differential motion -> padded ``(1, C, f_pad, 24)`` encoder input."""
    v = diff.values
    if v.shape[2] != cfg.input_channels:
        raise DimensionError(f"motion has {v.shape[2]} channels, tokenizer expects {cfg.input_channels}")
    if diff.frames < 2:
        raise UsageError("need at least 2 frames")
    v = reflect_pad_frames(v, padded_frames(diff.frames))
    return np.ascontiguousarray(v.transpose(2, 0, 1)[None])


def encode(diff: DifferentialMotion, model: MotionTokenizer) -> LatentGrid:
    """Encode a whole sequence in one pass (no grad)."""
    x = nx.Tensor(motion_to_batch(diff, model.cfg))
    with nx.no_grad():
        z = model.encode_tensor(x)
    lat = z.data[0].transpose(1, 2, 0)
    assert lat.shape[0] == latent_frames(padded_frames(diff.frames))
    return LatentGrid(lat, diff.frames)


def decode(latents: np.ndarray, model: MotionTokenizer, frames: int | None = None,
           first_frame: np.ndarray | None = None, stats_ref: str = "",
           differential: bool | None = None, fps: float = 30.0) -> DifferentialMotion:
    """Decode ``(f', 24, d)`` latents or code vectors into motion.

    The output has ``4 (f' - 1) + 1`` frames, cropped to ``frames`` when
    given. Two-channel models get a zero z channel appended so the result
    maps back to 3D coordinates.
    """
    lat = np.asarray(getattr(latents, "values", getattr(latents, "embedded", latents)), dtype=np.float32)
    if lat.ndim != 3 or lat.shape[1] != NUM_JOINTS or lat.shape[2] != model.cfg.code_dim:
        raise DimensionError(f"decode expects (f', {NUM_JOINTS}, {model.cfg.code_dim}), got {lat.shape}")
    z = nx.Tensor(np.ascontiguousarray(lat.transpose(2, 0, 1)[None]))
    with nx.no_grad():
        out = model.decode_tensor(z).data[0].transpose(1, 2, 0)
    if frames is not None:
        if frames > out.shape[0]:
            raise UsageError(f"cannot crop {out.shape[0]} decoded frames to {frames}")
        out = out[:frames]
    if out.shape[2] == 2:
        out = np.concatenate([out, np.zeros(out.shape[:2] + (1,), np.float32)], axis=2)
    if first_frame is None:
        first_frame = np.zeros((NUM_JOINTS, 3), np.float32)
    if differential is None:
        differential = model.cfg.differential
    return DifferentialMotion(out, first_frame, stats_ref, differential, fps)
