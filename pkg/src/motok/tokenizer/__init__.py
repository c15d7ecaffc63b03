"""Vector-quantized motion autoencoder."""
from .config import TokenizerConfig, latent_frames, padded_frames, token_count
from .model import LatentGrid, MotionTokenizer, decode, encode, motion_to_batch, reflect_pad_frames
from .quantizer import (
    Codebook,
    TokenGrid,
    dead_codes,
    ema_update,
    nearest_codes,
    quantize,
    quantize_tensor,
    reset_dead_codes,
)
from .loss import LossParts, vq_loss
from .window import encode_windowed, tokenize_windowed, window_spans
from .checkpoint import (
    Checkpoint,
    TokenFile,
    decode_checkpoint,
    decode_tokens,
    encode_checkpoint,
    encode_tokens,
    load_checkpoint,
    read_tokens,
    save_checkpoint,
    write_tokens,
)

__all__ = [
    "TokenizerConfig", "latent_frames", "padded_frames", "token_count",
    "LatentGrid", "MotionTokenizer", "decode", "encode", "motion_to_batch", "reflect_pad_frames",
    "Codebook", "TokenGrid", "dead_codes", "ema_update", "nearest_codes", "quantize",
    "quantize_tensor", "reset_dead_codes", "LossParts", "vq_loss",
    "encode_windowed", "tokenize_windowed", "window_spans",
    "Checkpoint", "TokenFile", "decode_checkpoint", "decode_tokens", "encode_checkpoint",
    "encode_tokens", "load_checkpoint", "read_tokens", "save_checkpoint", "write_tokens",
]
