"""Motion planning: prompt construction, the chat-completion client, and a
deterministic offline stub.

The live planner sends one chat-completion request to a configurable
endpoint, splits the reply on ``POSE k:`` sentinels, and parses each block
into a posture script. A malformed reply earns exactly one repair re-prompt.
The stub planner maps prompt keywords to a bundled plan library and is the
bit-reproducible path the rest of the pipeline is tested against.
"""

from __future__ import annotations

import importlib.resources
import json
import os
import re
import time
from dataclasses import dataclass, field

import httpx

from promo.errors import PlannerError, PlannerTransportError, ScriptParseError
from promo.scripts import PostureScript, parse_script_with_stats

DEFAULT_API_KEY_ENV = "PROMO_LLM_API_KEY"
VALID_FPS = (10, 20, 30)
MAX_FRAMES = 16


@dataclass(frozen=True)
class PlannerRequest:
    user_prompt: str
    frame_count: int
    fps: int = 20

    def __post_init__(self):
        if not 1 <= self.frame_count <= MAX_FRAMES:
            raise PlannerError(f"frame count must be in [1, {MAX_FRAMES}]")
        if self.fps not in VALID_FPS:
            raise PlannerError(f"fps must be one of {VALID_FPS}")
        if not self.user_prompt.strip():
            raise PlannerError("empty motion prompt")


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-3.5-turbo"
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout_s: float = 30.0
    max_retries: int = 2
    retry_backoff_s: float = 0.05

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise PlannerError("timeout must be positive")
        if self.max_retries < 0:
            raise PlannerError("retries must be >= 0")


@dataclass(frozen=True)
class PlannerResponse:
    scripts: tuple
    raw_text: str


_RULES = """\
Describe each key pose with short template sentences using only these five rules:
1. Bending. State how far a joint bends, for the left elbow, right elbow, \
left knee, and right knee. Allowed terms: completely bent, slightly bent, straight.
2. Distance. State how far paired parts are from each other, for the hands \
and for the feet. Allowed terms: close, shoulder width apart, spread, wide.
3. Relative position. Relate two parts (the hands, the feet, or a hand and \
the head). Allowed terms: behind, in front of, below, above, at the right of, \
at the left of.
4. Orientation. State whether a part is vertical or horizontal, for the \
torso, arms, thighs, and shins.
5. Ground contact. State whether a foot or a knee is touching the ground or \
off the ground."""

_EXAMPLES = """\
Reference pose descriptions:
POSE A: The left knee is straight. The right knee is straight. The torso is \
vertical. The left foot is touching the ground. The right foot is touching \
the ground.
POSE B: The left knee is completely bent. The right knee is completely bent. \
The left thigh is horizontal. The right thigh is horizontal. The left hand \
and the right hand are close."""


def build_prompt(req: PlannerRequest) -> tuple[str, str]:
    """(system, user) message texts; byte-stable for equal requests."""
    pose_lines = "\n".join(f"POSE {k}: <sentences for key pose {k}>"
                           for k in range(1, req.frame_count + 1))
    system = (
        "You are a motion planner for a 3D human character. Given a motion "
        "description, produce one key-pose script per requested frame.\n\n"
        f"{_RULES}\n\n"
        "Keep the sequence temporally consistent: each key pose must follow "
        "naturally from the previous one at the stated frame rate, so the "
        "whole sequence reads as one continuous motion.\n\n"
        "Output format. Reply with exactly "
        f"{req.frame_count} blocks and nothing else:\n{pose_lines}\n\n"
        f"{_EXAMPLES}"
    )
    user = (
        f"Motion description: {req.user_prompt}\n"
        f"Key frames: {req.frame_count}\n"
        f"Frames per second: {req.fps}"
    )
    return system, user


_POSE_MARKER = re.compile(r"POSE\s+(\d+)\s*:", re.IGNORECASE)


def parse_plan_text(text: str, frame_count: int) -> list[PostureScript]:
    """Split an LLM reply on POSE markers and parse every block."""
    pieces = _POSE_MARKER.split(text)
    # pieces: [prefix, num, block, num, block, ...]
    blocks = [pieces[i + 1].strip() for i in range(1, len(pieces) - 1, 2)]
    if len(blocks) != frame_count:
        raise PlannerError(f"expected {frame_count} pose blocks, found {len(blocks)}")
    scripts = []
    for k, block in enumerate(blocks, start=1):
        try:
            script, _ = parse_script_with_stats(block)
        except ScriptParseError as exc:
            raise PlannerError(f"pose block {k} has no recognizable clauses") from exc
        scripts.append(script)
    return scripts


def _post_chat(cfg: EndpointConfig, api_key: str, messages: list[dict]) -> str:
    payload = {"model": cfg.model, "messages": messages}
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    headers = {"Authorization": f"Bearer {api_key}"}
    attempts = cfg.max_retries + 1
    last = None
    for attempt in range(attempts):
        if attempt > 0:
            time.sleep(cfg.retry_backoff_s * attempt)
        try:
            resp = httpx.post(url, json=payload, headers=headers, timeout=cfg.timeout_s)
        except httpx.HTTPError as exc:
            last = f"transport error: {exc}"
            continue
        if resp.status_code >= 500:
            last = f"server returned {resp.status_code}"
            continue
        if resp.status_code != 200:
            raise PlannerError(f"endpoint rejected request: HTTP {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, json.JSONDecodeError) as exc:
            raise PlannerError(f"malformed completion payload: {exc}") from exc
    raise PlannerTransportError(
        f"planner endpoint unreachable after {attempts} attempt(s): {last}", attempts)


def plan_motion(req: PlannerRequest, cfg: EndpointConfig) -> PlannerResponse:
    """One live planning call, with one automatic repair re-prompt."""
    api_key = os.environ.get(cfg.api_key_env, "")
    if not api_key:
        raise PlannerError(f"missing API key: set {cfg.api_key_env}")
    system, user = build_prompt(req)
    messages = [{"role": "system", "content": system}, {"role": "user", "content": user}]
    text = _post_chat(cfg, api_key, messages)
    try:
        scripts = parse_plan_text(text, req.frame_count)
    except PlannerError as first_error:
        repair = (
            f"Your previous reply was not usable ({first_error}). Reply again "
            f"with exactly {req.frame_count} blocks, each starting with "
            "'POSE k:' and containing only template sentences per the rules."
        )
        messages = messages + [
            {"role": "assistant", "content": text},
            {"role": "user", "content": repair},
        ]
        text = _post_chat(cfg, api_key, messages)
        scripts = parse_plan_text(text, req.frame_count)
    return PlannerResponse(scripts=tuple(scripts), raw_text=text)


# ---------------------------------------------------------------------------
# offline stub
# ---------------------------------------------------------------------------

def _load_plan_library() -> dict:
    data = importlib.resources.files("promo.data").joinpath("plans.json").read_text()
    return json.loads(data)


_LIBRARY = None


def _library() -> dict:
    global _LIBRARY
    if _LIBRARY is None:
        _LIBRARY = _load_plan_library()
    return _LIBRARY


def _resample(scripts: list, frame_count: int) -> list:
    """Nearest-index resampling of a plan to the requested length."""
    k = len(scripts)
    if frame_count == 1:
        return [scripts[0]]
    return [scripts[int(i * (k - 1) / (frame_count - 1) + 0.5)] for i in range(frame_count)]


def stub_plan(req: PlannerRequest) -> PlannerResponse:
    """Deterministic keyword lookup into the bundled plan library."""
    lib = _library()
    prompt = req.user_prompt.lower()
    chosen = None
    for name in lib["order"]:
        if any(kw in prompt for kw in lib["keywords"][name]):
            chosen = lib["plans"][name]
            break
    if chosen is None:
        chosen = lib["neutral"]
    texts = _resample(list(chosen), req.frame_count)
    scripts = tuple(parse_script_with_stats(t)[0] for t in texts)
    raw = "\n".join(f"POSE {k}: {t}" for k, t in enumerate(texts, start=1))
    return PlannerResponse(scripts=scripts, raw_text=raw)
