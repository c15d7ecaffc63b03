"""Motion sequences: data model, normalisation, synthesis and file I/O."""
from .data import (
    NUM_JOINTS,
    DatasetStats,
    DifferentialMotion,
    MotionSequence,
    augment,
    compute_stats,
    from_differential,
    to_differential,
)
from .io import decode_motion, encode_motion, read_motion, read_stats, write_motion, write_stats
from .synthetic import FAMILIES, VALID_FRAMES, bone_lengths, gen_synthetic

__all__ = [
    "NUM_JOINTS", "DatasetStats", "DifferentialMotion", "MotionSequence", "augment",
    "compute_stats", "from_differential", "to_differential", "decode_motion", "encode_motion", "read_motion", "read_stats",
    "write_motion", "write_stats", "FAMILIES", "VALID_FRAMES", "bone_lengths", "gen_synthetic",
]
