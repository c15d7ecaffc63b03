"""Procedural 24-joint motion generator.

Sequences are produced by forward kinematics over a fixed SMPL-like bone
tree (y up, body facing +z, +x towards the body's left), so bone lengths are
constant by construction. Joint angles follow sinusoidal phase patterns per
motion family and the root follows a smooth trajectory.
"""
from __future__ import annotations

import numpy as np

from ..errors import UsageError
from .data import NUM_JOINTS, MotionSequence

VALID_FRAMES = (33, 49, 81, 97, 129)
FAMILIES = ("walk", "wave", "spin", "jump")

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
)
PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21])
# Offset of each joint from its parent in the rest pose (meters).
OFFSETS = np.array([
    [0.0, 0.93, 0.0],
    [0.06, -0.09, 0.0], [-0.06, -0.09, 0.0], [0.0, 0.11, -0.02],
    [0.04, -0.38, 0.0], [-0.04, -0.38, 0.0], [0.0, 0.13, 0.0],
    [-0.01, -0.40, -0.04], [0.01, -0.40, -0.04], [0.0, 0.05, 0.02],
    [0.02, -0.06, 0.12], [-0.02, -0.06, 0.12], [0.0, 0.21, -0.03],
    [0.08, 0.12, -0.01], [-0.08, 0.12, -0.01], [0.0, 0.09, 0.05],
    [0.12, 0.04, -0.02], [-0.12, 0.04, -0.02],
    [0.26, 0.0, -0.02], [-0.26, 0.0, -0.02],
    [0.25, 0.0, 0.0], [-0.25, 0.0, 0.0],
    [0.08, -0.01, -0.01], [-0.08, -0.01, -0.01],
])
J = {name: i for i, name in enumerate(JOINT_NAMES)}


def bone_lengths(coords: np.ndarray) -> np.ndarray:
    """Per-frame parent-child distances, shape ``(frames, 23)``."""
    c = np.asarray(coords, dtype=np.float64)
    return np.linalg.norm(c[:, 1:] - c[:, PARENTS[1:]], axis=-1)


def _rot(axis: str, angle: np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    o, z = np.ones_like(angle), np.zeros_like(angle)
    if axis == "x":
        m = [[o, z, z], [z, c, -s], [z, s, c]]
    elif axis == "y":
        m = [[c, z, s], [z, o, z], [-s, z, c]]
    else:
        m = [[c, -s, z], [s, c, z], [z, z, o]]
    return np.moveaxis(np.array(m), (0, 1), (-2, -1))


class _Pose:
    """Accumulates local joint rotations for ``f`` frames."""

    def __init__(self, f: int):
        self.local = np.broadcast_to(np.eye(3), (NUM_JOINTS, f, 3, 3)).copy()

    def turn(self, joint: str, axis: str, angle) -> None:
        j = J[joint]
        angle = np.broadcast_to(np.asarray(angle, dtype=np.float64), self.local.shape[1:2])
        self.local[j] = _rot(axis, angle) @ self.local[j]


def forward_kinematics(local: np.ndarray, root_pos: np.ndarray, root_yaw: np.ndarray) -> np.ndarray:
    f = root_pos.shape[0]
    glob = np.empty_like(local)
    pos = np.empty((NUM_JOINTS, f, 3))
    glob[0] = _rot("y", root_yaw) @ local[0]
    pos[0] = root_pos
    for j in range(1, NUM_JOINTS):
        p = PARENTS[j]
        glob[j] = glob[p] @ local[j]
        pos[j] = pos[p] + glob[p] @ OFFSETS[j]
    return pos.transpose(1, 0, 2)


def _arms_down(pose: _Pose, rng) -> None:
    drop = rng.uniform(1.1, 1.3)
    pose.turn("left_shoulder", "z", -drop)
    pose.turn("right_shoulder", "z", drop)


def _walk(f, t, rng):
    pose = _Pose(f)
    _arms_down(pose, rng)
    freq = rng.uniform(0.8, 1.1)
    phase = 2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi)
    hip, knee, arm = rng.uniform(0.35, 0.55), rng.uniform(0.5, 0.9), rng.uniform(0.2, 0.45)
    s = np.sin(phase)
    pose.turn("left_hip", "x", -hip * s)
    pose.turn("right_hip", "x", hip * s)
    pose.turn("left_knee", "x", knee * 0.5 * (1 - np.cos(phase)))
    pose.turn("right_knee", "x", knee * 0.5 * (1 + np.cos(phase)))
    pose.turn("left_shoulder", "x", arm * s)
    pose.turn("right_shoulder", "x", -arm * s)
    pose.turn("left_elbow", "y", 0.3 + 0.1 * s)
    pose.turn("right_elbow", "y", -0.3 + 0.1 * s)
    pose.turn("spine2", "y", 0.08 * s)
    yaw0 = rng.uniform(-np.pi, np.pi)
    speed = rng.uniform(0.6, 1.1)
    heading = np.array([np.sin(yaw0), 0.0, np.cos(yaw0)])
    lateral = np.array([np.cos(yaw0), 0.0, -np.sin(yaw0)])
    dist = speed * (t + 0.1 / (4 * np.pi * freq) * (1 - np.cos(4 * np.pi * freq * t)))
    start = np.array([rng.uniform(-0.5, 0.5), 0.0, rng.uniform(-0.5, 0.5)])
    root = start + OFFSETS[0] + dist[:, None] * heading + 0.02 * np.sin(phase)[:, None] * lateral
    root[:, 1] += 0.015 * np.cos(2 * phase)
    return pose, root, np.full(f, yaw0)


def _wave(f, t, rng):
    pose = _Pose(f)
    _arms_down(pose, rng)
    side, other = ("left", "right") if rng.random() < 0.5 else ("right", "left")
    sign = 1.0 if side == "left" else -1.0
    freq = rng.uniform(1.0, 2.0)
    phase = 2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi)
    lift = rng.uniform(1.9, 2.5)
    pose.turn(f"{side}_shoulder", "z", sign * lift)
    pose.turn(f"{side}_elbow", "z", sign * (0.5 + 0.45 * np.sin(phase)))
    pose.turn(f"{other}_shoulder", "x", 0.1 * np.sin(0.5 * phase))
    pose.turn("spine1", "z", 0.05 * np.sin(phase + 0.5))
    pose.turn("neck", "y", 0.15 * np.sin(0.5 * phase))
    yaw0 = rng.uniform(-np.pi, np.pi)
    start = np.array([rng.uniform(-0.5, 0.5), 0.0, rng.uniform(-0.5, 0.5)])
    root = np.broadcast_to(start + OFFSETS[0], (f, 3)).copy()
    root[:, 0] += 0.02 * np.sin(0.5 * phase)
    root[:, 1] += 0.01 * np.sin(phase)
    return pose, root, yaw0 + 0.1 * np.sin(0.3 * phase)


def _spin(f, t, rng):
    pose = _Pose(f)
    spread = rng.uniform(0.1, 0.5)
    pose.turn("left_shoulder", "z", -spread)
    pose.turn("right_shoulder", "z", spread)
    omega = rng.choice([-1.0, 1.0]) * rng.uniform(1.5, 4.0)
    step = np.sin(2 * np.pi * rng.uniform(1.0, 1.6) * t)
    pose.turn("left_hip", "x", -0.2 * step)
    pose.turn("right_hip", "x", 0.2 * step)
    pose.turn("left_knee", "x", 0.2 * (1 + step))
    pose.turn("right_knee", "x", 0.2 * (1 - step))
    pose.turn("left_elbow", "y", 0.2 * step)
    pose.turn("right_elbow", "y", 0.2 * step)
    yaw = rng.uniform(-np.pi, np.pi) + omega * t
    start = np.array([rng.uniform(-0.5, 0.5), 0.0, rng.uniform(-0.5, 0.5)])
    r = rng.uniform(0.0, 0.15)
    root = start + OFFSETS[0] + r * np.stack([np.cos(0.5 * omega * t) - 1, np.zeros_like(t), np.sin(0.5 * omega * t)], axis=1)
    return pose, root, yaw


def _jump(f, t, rng):
    pose = _Pose(f)
    _arms_down(pose, rng)
    freq = rng.uniform(0.7, 1.3)
    phase = np.pi * freq * t + rng.uniform(0, np.pi)
    air = np.sin(phase) ** 2
    crouch = np.cos(phase) ** 2
    height = rng.uniform(0.15, 0.4)
    bend = rng.uniform(0.4, 0.9)
    for side in ("left", "right"):
        pose.turn(f"{side}_hip", "x", -0.6 * bend * crouch)
        pose.turn(f"{side}_knee", "x", 1.2 * bend * crouch)
        pose.turn(f"{side}_ankle", "x", -0.5 * bend * crouch)
        pose.turn(f"{side}_shoulder", "x", -1.6 * air)
    pose.turn("spine1", "x", 0.3 * bend * crouch)
    yaw0 = rng.uniform(-np.pi, np.pi)
    drift = rng.uniform(0.0, 0.3)
    heading = np.array([np.sin(yaw0), 0.0, np.cos(yaw0)])
    start = np.array([rng.uniform(-0.5, 0.5), 0.0, rng.uniform(-0.5, 0.5)])
    root = start + OFFSETS[0] + drift * t[:, None] * heading
    root[:, 1] += height * air - 0.25 * bend * crouch
    return pose, root, np.full(f, yaw0)


_BUILDERS = {"walk": _walk, "wave": _wave, "spin": _spin, "jump": _jump}


def gen_synthetic(count: int, frames: int, motion_family: str = "mixed", rng_seed: int = 0,
                  fps: float = 30.0, allow_any_length: bool = False) -> list[MotionSequence]:
    """Generate ``count`` sequences of ``frames`` frames.

    Sequence ``i`` depends only on ``(rng_seed, i)``, so asking for more
    sequences extends a corpus without changing its prefix. ``mixed`` draws
    a family per sequence.
    """
    if motion_family not in _BUILDERS and motion_family != "mixed":
        raise UsageError(f"unknown motion family {motion_family!r}; choose from {FAMILIES + ('mixed',)}")
    if not allow_any_length and frames not in VALID_FRAMES:
        raise UsageError(f"frames must be one of {VALID_FRAMES}, got {frames}")
    if frames < 2:
        raise UsageError("frames must be >= 2")
    if count < 0:
        raise UsageError("count must be non-negative")
    t = np.arange(frames) / fps
    out = []
    for i in range(count):
        rng = np.random.default_rng([rng_seed, i])
        family = motion_family if motion_family != "mixed" else FAMILIES[rng.integers(len(FAMILIES))]
        pose, root, yaw = _BUILDERS[family](frames, t, rng)
        coords = forward_kinematics(pose.local, root, np.broadcast_to(yaw, (frames,)).astype(np.float64))
        out.append(MotionSequence(coords.astype(np.float32), fps))
    return out


def family_of(rng_seed: int, index: int, motion_family: str = "mixed") -> str:
    """Family that :func:`gen_synthetic` assigns to sequence ``index``."""
    if motion_family != "mixed":
        return motion_family
    rng = np.random.default_rng([rng_seed, index])
    return FAMILIES[rng.integers(len(FAMILIES))]
