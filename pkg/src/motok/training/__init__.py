"""Optimisation loop and verification harness for the tokenizer."""
from .optim import AdamW, adamw_step
from .loop import (
    REPORT_COLUMNS,
    TrainConfig,
    TrainReport,
    TrainResult,
    perplexity,
    sample_batch,
    train_step,
    train_tokenizer,
)

__all__ = [
    "AdamW", "adamw_step", "REPORT_COLUMNS", "TrainConfig", "TrainReport", "TrainResult",
    "perplexity", "sample_batch", "train_step", "train_tokenizer",
]
