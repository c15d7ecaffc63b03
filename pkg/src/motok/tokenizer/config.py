from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from ..errors import UsageError


@dataclass(frozen=True)
class TokenizerConfig:
    """Architecture and quantizer hyper-parameters.

    ``full()`` is the full-size configuration; ``desk()`` keeps every code
    path at a size that trains on one CPU core; ``tiny()`` exists for
    finite-difference checks.
    """

    channels: tuple[int, ...] = (32, 128, 512)
    frame_down: tuple[int, ...] = (2, 2, 1)
    joint_down: tuple[int, ...] = (1, 1, 1)
    dilations: tuple[int, ...] = (1, 2, 4)
    code_dim: int = 3072
    codebook_size: int = 8192
    input_channels: int = 3
    beta: float = 0.25
    ema_decay: float = 0.99
    ema_eps: float = 1e-5
    reset_interval: int = 20
    reset_usage_floor: int = 1
    usage_window: int = 200
    reset_jitter: float = 1e-3
    window: int = 8
    window_context: int = 8
    conv_bias: bool = True
    activation: str = "silu"
    norm: str = "group"
    norm_groups: int = 8
    out_norm: bool = False
    quantize: bool = True
    differential: bool = True

    def __post_init__(self):
        for name in ("channels", "frame_down", "joint_down", "dilations"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        n = len(self.channels)
        if not (len(self.frame_down) == len(self.joint_down) == len(self.dilations) == n):
            raise UsageError("channels, frame_down, joint_down and dilations need equal lengths")
        if int(np.prod(self.frame_down)) != 4:
            raise UsageError(f"frame downsampling must total 4, got {self.frame_down}")
        if any(v != 1 for v in self.joint_down):
            # Joint pooling would break the one-token-per-joint grid the rest of the pipeline assumes.
            raise UsageError("joint downsampling other than 1 is not supported")
        if self.code_dim <= 0 or self.codebook_size <= 1:
            raise UsageError("code_dim must be > 0 and codebook_size > 1")
        if self.beta < 0:
            raise UsageError("beta must be >= 0")
        if not 0.0 < self.ema_decay < 1.0:
            raise UsageError("ema_decay must lie in (0, 1)")
        if self.input_channels not in (2, 3):
            raise UsageError("input_channels must be 3, or 2 for the z-dropped ablation")
        if self.window < 1 or self.reset_interval < 1 or self.usage_window < 1:
            raise UsageError("window, reset_interval and usage_window must be >= 1")
        if self.window_context < 0:
            raise UsageError("window_context must be >= 0")
        if self.norm not in ("group", "layer", "none"):
            raise UsageError(f"unknown norm {self.norm!r}")
        if self.activation not in ("silu", "relu"):
            raise UsageError(f"unknown activation {self.activation!r}")

    @classmethod
    def full(cls, **kw) -> "TokenizerConfig":
        return cls(**kw)

    @classmethod
    def desk(cls, **kw) -> "TokenizerConfig":
        base = dict(channels=(16, 32, 64), code_dim=128, codebook_size=512)
        base.update(kw)
        return cls(**base)

    @classmethod
    def tiny(cls, **kw) -> "TokenizerConfig":
        base = dict(channels=(4, 4, 8), code_dim=8, codebook_size=16)
        base.update(kw)
        return cls(**base)

    @classmethod
    def preset(cls, name: str, **kw) -> "TokenizerConfig":
        try:
            return {"full": cls.full, "desk": cls.desk, "tiny": cls.tiny}[name](**kw)
        except KeyError:
            raise UsageError(f"unknown tokenizer preset {name!r}") from None

    def with_(self, **kw) -> "TokenizerConfig":
        return replace(self, **kw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TokenizerConfig":
        d = json.loads(text)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown tokenizer config keys: {sorted(unknown)}")
        return cls(**d)


def latent_frames(frames: int) -> int:
    """Latent frame count for ``frames`` input frames (first frame kept)."""
    if frames < 1:
        raise UsageError("frames must be >= 1")
    return 1 + (frames - 1) // 4


def padded_frames(frames: int) -> int:
    """Smallest length >= ``frames`` with ``(length - 1) % 4 == 0``."""
    return frames + (-(frames - 1)) % 4


def token_count(frames: int, joints: int = 24) -> int:
    return latent_frames(padded_frames(frames)) * joints

