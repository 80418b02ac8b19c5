"""Synthetic pose and motion data.

Poses are drawn by composing per-limb modes (arm down / out / up / forward,
elbow and knee bend levels, torso pitch, root yaw) around anatomically
plausible templates with jitter, then captioned by the rule-based describer,
so every pair is self-consistent by construction.

Motions are procedural 64-frame generators (straight walk, turn in place,
squat cycle, arm wave) with exact analytic global translation and rotation;
the walk ties leg-swing amplitude to speed so forward velocity is inferable
from the local poses alone. Each record carries the plan obtained by
describing the pose at evenly spaced key frames.
"""

from __future__ import annotations

import json

import numpy as np

from promo.errors import ShapeError
from promo.motion import MotionSequence, encode_frames, rotmats_to_pose
from promo.motiongen import keypose_frame_indices
from promo.rotation import axis_angle_matrix
from promo.scripts import PostureScript, describe_pose
from promo.seeding import rng_from
from promo.skeleton import JOINT, JOINT_COUNT, STANDING_ROOT_HEIGHT
from promo.skeleton import CANONICAL, forward_kinematics

FPS = 20
PLAN_KEYPOSES = 4

# walking speed (m/frame) maps to hip swing amplitude (rad) with this gain,
# making speed recoverable from the poses
SWING_PER_SPEED = 10.0

X, Y, Z = (1, 0, 0), (0, 1, 0), (0, 0, 1)


def _identity_rots() -> np.ndarray:
    return np.tile(np.eye(3), (JOINT_COUNT, 1, 1))


def _jitter(rng, scale_deg: float) -> np.ndarray:
    axis = rng.standard_normal(3)
    angle = np.deg2rad(rng.normal(0.0, scale_deg))
    return axis_angle_matrix(axis, angle)


def _arm(rots, rng, side: str, mode: str, bend_deg: float, jitter: float):
    sign = 1.0 if side == "left" else -1.0
    shoulder = JOINT[f"{side}_shoulder"]
    elbow = JOINT[f"{side}_elbow"]
    if mode == "down":
        rots[shoulder] = axis_angle_matrix(Y, sign * np.deg2rad(80))
    elif mode == "up":
        rots[shoulder] = axis_angle_matrix(Y, -sign * np.deg2rad(80))
    elif mode == "forward":
        rots[shoulder] = axis_angle_matrix(Z, sign * np.deg2rad(-80))
    # "out" keeps the T-pose shoulder
    rots[shoulder] = rots[shoulder] @ _jitter(rng, jitter)
    # elbows hinge about z when the arm is near the rest direction
    rots[elbow] = axis_angle_matrix(Z, sign * np.deg2rad(bend_deg)) @ _jitter(rng, jitter)


def _leg(rots, rng, side: str, hip_deg: float, knee_deg: float, jitter: float):
    hip = JOINT[f"{side}_hip"]
    knee = JOINT[f"{side}_knee"]
    rots[hip] = axis_angle_matrix(X, np.deg2rad(hip_deg)) @ _jitter(rng, jitter)
    rots[knee] = axis_angle_matrix(X, np.deg2rad(knee_deg)) @ _jitter(rng, jitter)


def sample_pose(rng: np.random.Generator, jitter_deg: float = 4.0) -> np.ndarray:
    """One random but plausible pose as a 132-channel vector."""
    rots = _identity_rots()
    for side in ("left", "right"):
        mode = rng.choice(["down", "out", "up", "forward"])
        bend = float(rng.choice([rng.uniform(0, 15), rng.uniform(50, 110),
                                 rng.uniform(125, 160)]))
        _arm(rots, rng, side, mode, bend, jitter_deg)
    stance = rng.choice(["straight", "soft", "squat", "split"])
    if stance == "straight":
        hip, knee = rng.uniform(-5, 5), rng.uniform(0, 10)
        _leg(rots, rng, "left", hip, knee, jitter_deg)
        _leg(rots, rng, "right", hip, knee, jitter_deg)
    elif stance == "soft":
        _leg(rots, rng, "left", rng.uniform(-30, -10), rng.uniform(25, 55), jitter_deg)
        _leg(rots, rng, "right", rng.uniform(-30, -10), rng.uniform(25, 55), jitter_deg)
    elif stance == "squat":
        hip = rng.uniform(-95, -70)
        knee = rng.uniform(100, 140)
        _leg(rots, rng, "left", hip, knee, jitter_deg)
        _leg(rots, rng, "right", hip, knee, jitter_deg)
    else:  # split: one leg forward, one back
        _leg(rots, rng, "left", rng.uniform(-45, -20), rng.uniform(10, 40), jitter_deg)
        _leg(rots, rng, "right", rng.uniform(10, 30), rng.uniform(5, 25), jitter_deg)
    # occasional torso pitch (bowing) and a free root yaw
    if rng.random() < 0.25:
        rots[JOINT["spine1"]] = axis_angle_matrix(X, np.deg2rad(rng.uniform(-80, -35)))
    else:
        rots[JOINT["spine1"]] = _jitter(rng, jitter_deg)
    rots[JOINT["spine2"]] = _jitter(rng, jitter_deg)
    rots[0] = axis_angle_matrix(Z, rng.uniform(-np.pi, np.pi))
    return rotmats_to_pose(rots)


def generate_pose_dataset(n: int, seed: int) -> list:
    """n self-captioned (pose, script) pairs."""
    if n < 1:
        raise ShapeError("need at least one record")
    out = []
    for i in range(n):
        pose = sample_pose(rng_from(seed, "pose", i))
        out.append((pose, describe_pose(pose)))
    return out


# ---------------------------------------------------------------------------
# procedural motions
# ---------------------------------------------------------------------------

def _grounded_height(rots: np.ndarray) -> float:
    """Root height that puts the lowest joint on the ground plane."""
    return -forward_kinematics(rots, CANONICAL, (0.0, 0.0, 0.0))[:, 2].min()


def _stand_base(rng, jitter_deg: float = 2.0) -> np.ndarray:
    rots = _identity_rots()
    _arm(rots, rng, "left", "down", rng.uniform(5, 15), jitter_deg)
    _arm(rots, rng, "right", "down", rng.uniform(5, 15), jitter_deg)
    return rots


def make_walk(rng, frames: int = 64):
    """Straight walk: constant velocity along the heading, legs and arms
    swinging in opposite phase, swing amplitude tied to speed."""
    speed = rng.uniform(0.012, 0.035)            # meters per frame
    heading = rng.uniform(-np.pi, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    freq = rng.uniform(0.10, 0.16)               # cycles per frame
    amp = SWING_PER_SPEED * speed
    base = _stand_base(rng)
    heading_rot = axis_angle_matrix(Z, heading)
    direction = heading_rot @ np.array([0.0, 1.0, 0.0])

    rots = np.empty((frames, JOINT_COUNT, 3, 3))
    pos = np.empty((frames, 3))
    for t in range(frames):
        r = base.copy()
        swing = amp * np.sin(2.0 * np.pi * freq * t + phase)
        r[JOINT["left_hip"]] = axis_angle_matrix(X, -swing)
        r[JOINT["right_hip"]] = axis_angle_matrix(X, swing)
        r[JOINT["left_knee"]] = axis_angle_matrix(X, abs(swing) * 0.6)
        r[JOINT["right_knee"]] = axis_angle_matrix(X, abs(swing) * 0.6)
        r[JOINT["left_shoulder"]] = r[JOINT["left_shoulder"]] @ axis_angle_matrix(X, 0.5 * swing)
        r[JOINT["right_shoulder"]] = r[JOINT["right_shoulder"]] @ axis_angle_matrix(X, -0.5 * swing)
        r[0] = heading_rot
        rots[t] = r
        pos[t] = direction * (speed * t)
        pos[t, 2] = STANDING_ROOT_HEIGHT
    return pos, rots, {"kind": "walk", "speed": speed, "heading": heading}


def make_turn(rng, frames: int = 64):
    """Turn in place: the root yaw ramps linearly, feet stay planted."""
    rate = rng.uniform(-0.04, 0.04)              # radians per frame
    start = rng.uniform(-np.pi, np.pi)
    base = _stand_base(rng)
    rots = np.empty((frames, JOINT_COUNT, 3, 3))
    pos = np.zeros((frames, 3))
    for t in range(frames):
        r = base.copy()
        r[0] = axis_angle_matrix(Z, start + rate * t)
        rots[t] = r
        pos[t, 2] = STANDING_ROOT_HEIGHT
    return pos, rots, {"kind": "turn", "rate": rate}


def make_squat_cycle(rng, frames: int = 64):
    """Squat down and up; the root height follows the leg fold so the feet
    stay grounded."""
    depth = rng.uniform(0.6, 1.0)                # fraction of full fold
    cycles = rng.choice([1.0, 2.0])
    base = _stand_base(rng)
    rots = np.empty((frames, JOINT_COUNT, 3, 3))
    pos = np.zeros((frames, 3))
    for t in range(frames):
        u = depth * 0.5 * (1.0 - np.cos(2.0 * np.pi * cycles * t / frames))
        hip = -90.0 * u
        knee = 120.0 * u
        r = base.copy()
        r[JOINT["left_hip"]] = axis_angle_matrix(X, np.deg2rad(hip))
        r[JOINT["right_hip"]] = axis_angle_matrix(X, np.deg2rad(hip))
        r[JOINT["left_knee"]] = axis_angle_matrix(X, np.deg2rad(knee))
        r[JOINT["right_knee"]] = axis_angle_matrix(X, np.deg2rad(knee))
        rots[t] = r
        pos[t, 2] = _grounded_height(r)
    return pos, rots, {"kind": "squat", "depth": depth}


def make_wave(rng, frames: int = 64):
    """Wave one raised arm; everything else stands still."""
    side = rng.choice(["left", "right"])
    sign = 1.0 if side == "left" else -1.0
    freq = rng.uniform(0.06, 0.12)
    base = _stand_base(rng)
    base[JOINT[f"{side}_shoulder"]] = axis_angle_matrix(Y, -sign * np.deg2rad(80))
    rots = np.empty((frames, JOINT_COUNT, 3, 3))
    pos = np.zeros((frames, 3))
    for t in range(frames):
        r = base.copy()
        bend = 45.0 + 40.0 * np.sin(2.0 * np.pi * freq * t)
        r[JOINT[f"{side}_elbow"]] = axis_angle_matrix(Z, sign * np.deg2rad(bend))
        rots[t] = r
        pos[t, 2] = STANDING_ROOT_HEIGHT
    return pos, rots, {"kind": "wave", "side": str(side)}


_GENERATORS = (
    ("walk", make_walk, 0.4),
    ("turn", make_turn, 0.2),
    ("squat", make_squat_cycle, 0.2),
    ("wave", make_wave, 0.2),
)


def plan_for(frames: np.ndarray, keyposes: int = PLAN_KEYPOSES) -> list:
    """Describe the pose at evenly spaced key frames."""
    idx = keypose_frame_indices(frames.shape[0], keyposes)
    return [describe_pose(frames[i, 3:]) for i in idx]


def generate_motion_record(seed: int, index: int, kind: str | None = None):
    """(MotionSequence, plan scripts, generator metadata)."""
    rng = rng_from(seed, "motion", index)
    if kind is None:
        names = [g[0] for g in _GENERATORS]
        probs = np.array([g[2] for g in _GENERATORS])
        kind = str(rng.choice(names, p=probs / probs.sum()))
    maker = dict((g[0], g[1]) for g in _GENERATORS)[kind]
    pos, rots, meta = maker(rng)
    seq = MotionSequence(encode_frames(pos, rots), fps=FPS)
    return seq, plan_for(seq.frames), meta


def generate_motion_dataset(n: int, seed: int, kind: str | None = None) -> list:
    if n < 1:
        raise ShapeError("need at least one record")
    return [generate_motion_record(seed, i, kind) for i in range(n)]


# ---------------------------------------------------------------------------
# JSONL persistence
# ---------------------------------------------------------------------------

def _fmt(value) -> float:
    # shortest decimal that round-trips the float32 value exactly
    return float(np.format_float_positional(np.float32(value), unique=True))


def _array_json(a: np.ndarray):
    return [[_fmt(v) for v in row] for row in a] if a.ndim == 2 else [_fmt(v) for v in a]


def write_pose_dataset(path, records) -> None:
    with open(path, "w") as fh:
        for pose, script in records:
            row = {"pose": _array_json(np.asarray(pose)), "script": script.to_json()}
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_pose_dataset(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            pose = np.asarray(row["pose"], dtype=np.float32)
            if pose.shape != (132,):
                raise ShapeError(f"pose row has shape {pose.shape}")
            out.append((pose, PostureScript.from_json(row["script"])))
    return out


def write_motion_dataset(path, records) -> None:
    with open(path, "w") as fh:
        for seq, plan, meta in records:
            row = {
                "frames": _array_json(seq.frames),
                "fps": seq.fps,
                "plan": [s.to_json() for s in plan],
                "meta": meta,
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_motion_dataset(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            seq = MotionSequence(np.asarray(row["frames"], dtype=np.float32), fps=row["fps"])
            plan = [PostureScript.from_json(s) for s in row["plan"]]
            out.append((seq, plan, row.get("meta", {})))
    return out
