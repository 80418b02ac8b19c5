"""Structured posture scripts.

A script is an ordered list of clauses over five closed rule categories:
degree of bending, relative distance, relative position, orientation, and
ground contact. Clauses render to one fixed sentence template per category
and parse back losslessly. A rule-based describer measures poses through
forward kinematics and emits the clauses deterministically, which makes it
both the training-data generator and the verification oracle.

All geometric measurements are body relative: joints are expressed in a
yaw-aligned frame derived from the root orientation, so descriptions are
invariant to global translation and heading. Ground contact uses heights
relative to the lowest joint.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from promo.errors import ScriptParseError, ShapeError, VocabularyError
from promo.motion import POSE_DIM, pose_to_rotmats
from promo.skeleton import CANONICAL, JOINT, Skeleton, forward_kinematics

# one table of thresholds shared by the describer, the consistency oracle,
# and the tests
THRESHOLDS = {
    "bend_straight_deg": 150.0,   # interior angle above this is straight
    "bend_slight_deg": 60.0,      # between this and straight is slightly bent
    "distance_close": 0.5,        # fractions of shoulder width
    "distance_shoulder": 1.5,
    "distance_spread": 2.5,
    "relpos_margin_m": 0.05,      # dominant-axis margin for relative position
    "orientation_cone_deg": 20.0,
    "ground_margin_m": 0.05,      # height above the lowest joint
}

BEND_QUALIFIERS = ("completely bent", "slightly bent", "straight")
DISTANCE_QUALIFIERS = ("close", "shoulder width apart", "spread", "wide")
RELPOS_QUALIFIERS = ("behind", "in front of", "below", "above",
                     "at the right of", "at the left of")
ORIENTATION_QUALIFIERS = ("vertical", "horizontal")
GROUND_QUALIFIERS = ("touching ground", "off ground")

CATEGORIES = ("bend", "distance", "relative_position", "orientation", "ground_contact")

QUALIFIERS = {
    "bend": BEND_QUALIFIERS,
    "distance": DISTANCE_QUALIFIERS,
    "relative_position": RELPOS_QUALIFIERS,
    "orientation": ORIENTATION_QUALIFIERS,
    "ground_contact": GROUND_QUALIFIERS,
}

# ordered categories get adjacent-bucket half credit in consistency scoring
_ORDERED_QUALIFIERS = {"bend": BEND_QUALIFIERS, "distance": DISTANCE_QUALIFIERS}

BODY_PARTS = (
    "left elbow", "right elbow", "left knee", "right knee",
    "left hand", "right hand", "left foot", "right foot",
    "left arm", "right arm", "left thigh", "right thigh",
    "left shin", "right shin", "head", "torso",
)

# measurement geometry: joint triples for bends, joint pairs for bones
_BEND_JOINTS = {
    "left elbow": ("left_shoulder", "left_elbow", "left_wrist"),
    "right elbow": ("right_shoulder", "right_elbow", "right_wrist"),
    "left knee": ("left_hip", "left_knee", "left_ankle"),
    "right knee": ("right_hip", "right_knee", "right_ankle"),
}
_DISTANCE_PAIRS = (
    (("left hand", "right hand"), ("left_wrist", "right_wrist")),
    (("left foot", "right foot"), ("left_foot", "right_foot")),
)
_RELPOS_PAIRS = (
    (("left hand", "right hand"), ("left_wrist", "right_wrist")),
    (("left foot", "right foot"), ("left_foot", "right_foot")),
    (("left hand", "head"), ("left_wrist", "head")),
    (("right hand", "head"), ("right_wrist", "head")),
)
_ORIENTATION_BONES = (
    ("torso", ("pelvis", "neck")),
    ("left arm", ("left_shoulder", "left_wrist")),
    ("right arm", ("right_shoulder", "right_wrist")),
    ("left thigh", ("left_hip", "left_knee")),
    ("right thigh", ("right_hip", "right_knee")),
    ("left shin", ("left_knee", "left_ankle")),
    ("right shin", ("right_knee", "right_ankle")),
)
_GROUND_FEET = (("left foot", "left_foot"), ("right foot", "right_foot"))
_GROUND_KNEES = (("left knee", "left_knee"), ("right knee", "right_knee"))

_REST_SHOULDER_WIDTH = 0.36  # canonical skeleton, T-pose


@dataclass(frozen=True)
class Clause:
    category: str
    subjects: tuple
    qualifier: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ShapeError(f"unknown clause category {self.category!r}")
        if self.qualifier not in QUALIFIERS[self.category]:
            raise ShapeError(
                f"qualifier {self.qualifier!r} is not in the {self.category} vocabulary")
        for s in self.subjects:
            if s not in BODY_PARTS:
                raise ShapeError(f"unknown body part {s!r}")

    def to_json(self) -> dict:
        return {"category": self.category, "subject": list(self.subjects),
                "qualifier": self.qualifier}

    @classmethod
    def from_json(cls, obj: dict) -> "Clause":
        return cls(obj["category"], tuple(obj["subject"]), obj["qualifier"])


@dataclass(frozen=True)
class PostureScript:
    clauses: tuple

    def __post_init__(self):
        if len(self.clauses) == 0:
            raise ShapeError("a posture script needs at least one clause")

    @property
    def text(self) -> str:
        return render_script(self)

    def to_json(self) -> dict:
        return {"clauses": [c.to_json() for c in self.clauses], "text": self.text}

    @classmethod
    def from_json(cls, obj: dict) -> "PostureScript":
        return cls(tuple(Clause.from_json(c) for c in obj["clauses"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def loads(cls, s: str) -> "PostureScript":
        return cls.from_json(json.loads(s))


_INVERSE_RELPOS = {
    "behind": "in front of", "in front of": "behind",
    "below": "above", "above": "below",
    "at the right of": "at the left of", "at the left of": "at the right of",
}

_CANONICAL_PAIRS = {p for p, _ in _DISTANCE_PAIRS} | {p for p, _ in _RELPOS_PAIRS}


def mirror_clause(clause: Clause) -> Clause:
    """The clause the describer would emit for the mirrored pose.

    Left/right flips in subjects and in lateral qualifiers; when the flip
    reverses one of the describer's fixed subject pairs, the pair is put back
    in canonical order, which inverts a directional qualifier.
    """

    def flip(text: str) -> str:
        return (text.replace("left", "\x00").replace("right", "left")
                .replace("\x00", "right"))

    qualifier = clause.qualifier
    if qualifier in ("at the right of", "at the left of"):
        qualifier = flip(qualifier)
    subjects = tuple(flip(s) for s in clause.subjects)
    if len(subjects) == 2 and subjects not in _CANONICAL_PAIRS \
            and subjects[::-1] in _CANONICAL_PAIRS:
        subjects = subjects[::-1]
        if clause.category == "relative_position":
            qualifier = _INVERSE_RELPOS[qualifier]
    return Clause(clause.category, subjects, qualifier)


# ---------------------------------------------------------------------------
# measurement
# ---------------------------------------------------------------------------

def _aligned_joints(pose: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """FK joint positions rotated into a yaw-neutral frame (body faces +y)."""
    rotations = pose_to_rotmats(np.asarray(pose, dtype=np.float64))
    joints = forward_kinematics(rotations, skeleton, (0.0, 0.0, 0.0))
    forward = rotations[0] @ np.array([0.0, 1.0, 0.0])
    if np.hypot(forward[0], forward[1]) >= 0.1:
        theta = np.arctan2(forward[1], forward[0])
        phi = np.pi / 2.0 - theta
    else:
        # body axis nearly vertical (e.g. lying flat): align the hips instead
        left = rotations[0] @ np.array([1.0, 0.0, 0.0])
        phi = -np.arctan2(left[1], left[0])
    c, s = np.cos(phi), np.sin(phi)
    rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return joints @ rz.T


def _bend_bucket(angle_deg: float) -> str:
    if angle_deg >= THRESHOLDS["bend_straight_deg"]:
        return "straight"
    if angle_deg >= THRESHOLDS["bend_slight_deg"]:
        return "slightly bent"
    return "completely bent"


def _distance_bucket(ratio: float) -> str:
    if ratio < THRESHOLDS["distance_close"]:
        return "close"
    if ratio < THRESHOLDS["distance_shoulder"]:
        return "shoulder width apart"
    if ratio < THRESHOLDS["distance_spread"]:
        return "spread"
    return "wide"


def _relpos_qualifier(diff: np.ndarray) -> str | None:
    axis = int(np.argmax(np.abs(diff)))
    if abs(diff[axis]) < THRESHOLDS["relpos_margin_m"]:
        return None
    if axis == 0:
        return "at the left of" if diff[0] > 0 else "at the right of"
    if axis == 1:
        return "in front of" if diff[1] > 0 else "behind"
    return "above" if diff[2] > 0 else "below"


def _orientation_qualifier(bone: np.ndarray) -> str | None:
    norm = np.linalg.norm(bone)
    if norm < 1e-9:
        return None
    cos_z = abs(bone[2]) / norm
    cone = np.deg2rad(THRESHOLDS["orientation_cone_deg"])
    if cos_z >= np.cos(cone):
        return "vertical"
    if cos_z <= np.sin(cone):
        return "horizontal"
    return None


def measure_pose(pose: np.ndarray, skeleton: Skeleton = CANONICAL) -> dict:
    """Every measurable (category, subjects) -> qualifier (or None).

    This is the shared geometry behind :func:`describe_pose` and
    :func:`script_consistency`.
    """
    joints = _aligned_joints(pose, skeleton)
    out: dict = {}

    for part, (a, b, c) in _BEND_JOINTS.items():
        v1 = joints[JOINT[a]] - joints[JOINT[b]]
        v2 = joints[JOINT[c]] - joints[JOINT[b]]
        denom = np.linalg.norm(v1) * np.linalg.norm(v2)
        cos = np.clip(v1 @ v2 / denom, -1.0, 1.0) if denom > 1e-12 else 1.0
        out[("bend", (part,))] = _bend_bucket(float(np.degrees(np.arccos(cos))))

    for subjects, (a, b) in _DISTANCE_PAIRS:
        dist = np.linalg.norm(joints[JOINT[a]] - joints[JOINT[b]])
        out[("distance", subjects)] = _distance_bucket(dist / _REST_SHOULDER_WIDTH)

    for subjects, (a, b) in _RELPOS_PAIRS:
        out[("relative_position", subjects)] = _relpos_qualifier(
            joints[JOINT[a]] - joints[JOINT[b]])

    for part, (a, b) in _ORIENTATION_BONES:
        out[("orientation", (part,))] = _orientation_qualifier(
            joints[JOINT[b]] - joints[JOINT[a]])

    min_z = joints[:, 2].min()
    margin = THRESHOLDS["ground_margin_m"]
    for part, joint in _GROUND_FEET:
        touching = joints[JOINT[joint], 2] - min_z <= margin
        out[("ground_contact", (part,))] = "touching ground" if touching else "off ground"
    for part, joint in _GROUND_KNEES:
        touching = joints[JOINT[joint], 2] - min_z <= margin
        # knees only report actual contact (kneeling); an airborne knee is
        # the normal case and not worth a clause
        out[("ground_contact", (part,))] = "touching ground" if touching else None
    return out


def describe_pose(pose: np.ndarray, skeleton: Skeleton = CANONICAL) -> PostureScript:
    """Deterministic rule-based caption of a pose."""
    pose = np.asarray(pose)
    if pose.shape != (POSE_DIM,):
        raise ShapeError(f"pose must be ({POSE_DIM},), got {pose.shape}")
    measured = measure_pose(pose, skeleton)
    clauses = []
    for part in _BEND_JOINTS:
        clauses.append(Clause("bend", (part,), measured[("bend", (part,))]))
    for subjects, _ in _DISTANCE_PAIRS:
        clauses.append(Clause("distance", subjects, measured[("distance", subjects)]))
    for subjects, _ in _RELPOS_PAIRS:
        q = measured[("relative_position", subjects)]
        if q is not None:
            clauses.append(Clause("relative_position", subjects, q))
    for part, _ in _ORIENTATION_BONES:
        q = measured[("orientation", (part,))]
        if q is not None:
            clauses.append(Clause("orientation", (part,), q))
    for part, _ in _GROUND_FEET + _GROUND_KNEES:
        q = measured[("ground_contact", (part,))]
        if q is not None:
            clauses.append(Clause("ground_contact", (part,), q))
    return PostureScript(tuple(clauses))


def script_consistency(pose: np.ndarray, script: PostureScript,
                       skeleton: Skeleton = CANONICAL) -> float:
    """Fraction of clauses the pose satisfies; adjacent buckets score half."""
    measured = measure_pose(pose, skeleton)
    total = 0.0
    for clause in script.clauses:
        actual = measured.get((clause.category, clause.subjects))
        if actual is None:
            continue
        if actual == clause.qualifier:
            total += 1.0
        elif clause.category in _ORDERED_QUALIFIERS:
            order = _ORDERED_QUALIFIERS[clause.category]
            if abs(order.index(actual) - order.index(clause.qualifier)) == 1:
                total += 0.5
    return total / len(script.clauses)


# ---------------------------------------------------------------------------
# rendering and parsing
# ---------------------------------------------------------------------------

_GROUND_RENDER = {"touching ground": "touching the ground", "off ground": "off the ground"}
_GROUND_PARSE = {v: k for k, v in _GROUND_RENDER.items()}


def render_clause(clause: Clause) -> str:
    if clause.category == "distance":
        a, b = clause.subjects
        return f"The {a} and the {b} are {clause.qualifier}."
    if clause.category == "relative_position":
        a, b = clause.subjects
        return f"The {a} is {clause.qualifier} the {b}."
    if clause.category == "ground_contact":
        return f"The {clause.subjects[0]} is {_GROUND_RENDER[clause.qualifier]}."
    return f"The {clause.subjects[0]} is {clause.qualifier}."


def render_script(script: PostureScript) -> str:
    return " ".join(render_clause(c) for c in script.clauses)


_RELPOS_ALT = "|".join(re.escape(q) for q in RELPOS_QUALIFIERS)
_RE_DISTANCE = re.compile(r"^the (.+?) and the (.+?) are (.+)$")
_RE_RELPOS = re.compile(rf"^the (.+?) is ({_RELPOS_ALT}) the (.+)$")
_RE_SIMPLE = re.compile(r"^the (.+?) is (.+)$")


def _parse_sentence(sentence: str) -> Clause | None:
    s = re.sub(r"\s+", " ", sentence.strip().lower())
    if not s:
        return None
    m = _RE_DISTANCE.match(s)
    if m and m.group(3) in DISTANCE_QUALIFIERS:
        try:
            return Clause("distance", (m.group(1), m.group(2)), m.group(3))
        except ShapeError:
            return None
    m = _RE_RELPOS.match(s)
    if m:
        try:
            return Clause("relative_position", (m.group(1), m.group(3)), m.group(2))
        except ShapeError:
            return None
    m = _RE_SIMPLE.match(s)
    if m:
        subject, qualifier = m.group(1), m.group(2)
        if qualifier in _GROUND_PARSE:
            qualifier = _GROUND_PARSE[qualifier]
        for category in ("bend", "orientation", "ground_contact"):
            if qualifier in QUALIFIERS[category]:
                try:
                    return Clause(category, (subject,), qualifier)
                except ShapeError:
                    return None
    return None


def parse_script_with_stats(text: str) -> tuple[PostureScript, int]:
    """Parse template sentences; returns the script and the skipped count."""
    if not text or not text.strip():
        raise ScriptParseError("empty script text")
    clauses = []
    skipped = 0
    for sentence in text.split("."):
        if not sentence.strip():
            continue
        clause = _parse_sentence(sentence)
        if clause is None:
            skipped += 1
        else:
            clauses.append(clause)
    if not clauses:
        raise ScriptParseError(f"no recognizable clauses in {text!r}")
    return PostureScript(tuple(clauses)), skipped


def parse_script(text: str) -> PostureScript:
    return parse_script_with_stats(text)[0]


# ---------------------------------------------------------------------------
# tokenization
# ---------------------------------------------------------------------------

PAD_TOKEN = "<pad>"
SCRIPT_TOKEN_LEN = 64


def _vocabulary_words() -> list[str]:
    words = set()
    for part in BODY_PARTS:
        words.update(part.split())
    for quals in QUALIFIERS.values():
        for q in quals:
            words.update(q.split())
    for rendered in _GROUND_RENDER.values():
        words.update(rendered.split())
    words.update({"the", "is", "and", "are"})
    return sorted(words)


class ScriptVocabulary:
    """Dense token ids over the closed script language; id 0 is padding."""

    def __init__(self):
        self.tokens = [PAD_TOKEN] + _vocabulary_words()
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    def encode_words(self, words) -> list[int]:
        ids = []
        for w in words:
            if w not in self.token_to_id:
                raise VocabularyError(f"word {w!r} is not in the script vocabulary")
            ids.append(self.token_to_id[w])
        return ids

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids if i != self.pad_id]


VOCAB = ScriptVocabulary()


def tokenize(script: PostureScript, max_len: int = SCRIPT_TOKEN_LEN,
             vocab: ScriptVocabulary = VOCAB) -> np.ndarray:
    """Rendered text -> fixed-length id sequence (padded / truncated)."""
    words = render_script(script).lower().replace(".", "").split()
    ids = vocab.encode_words(words)[:max_len]
    out = np.full(max_len, vocab.pad_id, dtype=np.int64)
    out[: len(ids)] = ids
    return out


def tokenize_plan(scripts, max_len: int = 2 * SCRIPT_TOKEN_LEN,
                  vocab: ScriptVocabulary = VOCAB) -> np.ndarray:
    """Token ids for a whole plan: the scripts' texts concatenated in order."""
    words = []
    for script in scripts:
        words.extend(render_script(script).lower().replace(".", "").split())
    ids = vocab.encode_words(words)[:max_len]
    out = np.full(max_len, vocab.pad_id, dtype=np.int64)
    out[: len(ids)] = ids
    return out
