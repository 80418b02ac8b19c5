"""Pipeline configuration: a sectioned key-value file handled by
configparser, one dataclass per concern, and a stable content hash embedded
in every artifact the pipeline produces."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field

from promo.errors import ShapeError
from promo.planner import DEFAULT_API_KEY_ENV


@dataclass
class PipelineConfig:
    # generation
    seed: int = 0
    frames: int = 4                 # key poses per plan
    fps: int = 20
    candidates: int = 16            # poses sampled per script
    guidance: float = 2.0
    # posture model
    posture_latent: int = 64
    posture_layers: int = 3
    posture_heads: int = 4
    posture_steps: int = 1000       # diffusion steps, linear schedule
    posture_checkpoint: str = ""
    # keypose motion model
    go_latent: int = 48
    go_layers: int = 2
    go_heads: int = 4
    go_steps: int = 100             # diffusion steps, cosine schedule
    go_checkpoint: str = ""
    # retrieval encoders
    encoder_checkpoint: str = ""
    # planner endpoint
    planner_mode: str = "stub"      # stub | live
    planner_base_url: str = "https://api.openai.com/v1"
    planner_model: str = "gpt-3.5-turbo"
    planner_api_key_env: str = DEFAULT_API_KEY_ENV
    planner_timeout_s: float = 30.0
    planner_retries: int = 2

    def __post_init__(self):
        if not 1 <= self.frames <= 16:
            raise ShapeError("frames must be in [1, 16]")
        if self.candidates < 1:
            raise ShapeError("candidates must be >= 1")
        if not (isinstance(self.guidance, (int, float)) and abs(self.guidance) < 1e6):
            raise ShapeError("guidance weight must be finite")
        if self.planner_mode not in ("stub", "live"):
            raise ShapeError("planner mode must be 'stub' or 'live'")

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


_SECTIONS = {
    "pipeline": ("seed", "frames", "fps", "candidates", "guidance"),
    "posture": ("posture_latent", "posture_layers", "posture_heads",
                "posture_steps", "posture_checkpoint"),
    "go": ("go_latent", "go_layers", "go_heads", "go_steps", "go_checkpoint"),
    "encoders": ("encoder_checkpoint",),
    "planner": ("planner_mode", "planner_base_url", "planner_model",
                "planner_api_key_env", "planner_timeout_s", "planner_retries"),
}


def save_config(path, cfg: PipelineConfig) -> None:
    parser = configparser.ConfigParser()
    values = asdict(cfg)
    for section, keys in _SECTIONS.items():
        parser[section] = {k.removeprefix(section + "_") if k.startswith(section) else k:
                           str(values[k]) for k in keys}
    with open(path, "w") as fh:
        parser.write(fh)


def load_config(path) -> PipelineConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ShapeError(f"config file {path} not found")
    defaults = PipelineConfig()
    kwargs = {}
    for section, keys in _SECTIONS.items():
        if section not in parser:
            continue
        for key in keys:
            short = key.removeprefix(section + "_") if key.startswith(section) else key
            if short not in parser[section]:
                continue
            raw = parser[section][short]
            default = getattr(defaults, key)
            if isinstance(default, bool):
                kwargs[key] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
    return PipelineConfig(**kwargs)
