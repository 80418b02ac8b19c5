"""Checkpoint container: a JSON metadata header followed by named binary
parameter blocks.

Layout: magic ``PMK1``, little-endian u32 header length, the UTF-8 header
JSON (format version, module kind, model spec, free-form extras such as
schedule parameters, training seed, and epoch), then per parameter: u32 name
length, name bytes, u64 element count, element count little-endian float32
values. Parameters are written in sorted-name order so save / load / save is
byte identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from promo.errors import CheckpointError

MAGIC = b"PMK1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    kind: str
    spec: dict
    params: dict
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, kind: str, spec: dict, params: dict, extra: dict | None = None):
    names = list(params)
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate parameter names")
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "spec": spec,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for name in sorted(names):
            value = params[name]
            data = np.ascontiguousarray(
                value.data if hasattr(value, "data") else value, dtype="<f4")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<Q", data.size))
            fh.write(data.tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (header_len,) = struct.unpack_from("<I", blob, 4)
    try:
        header = json.loads(blob[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version")
    params = {}
    offset = 8 + header_len
    while offset < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (count,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        end = offset + 4 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated parameter block {name!r}")
        if name in params:
            raise CheckpointError(f"{path}: duplicate parameter {name!r}")
        params[name] = np.frombuffer(blob[offset:end], dtype="<f4").copy()
        offset = end
    return Checkpoint(kind=header["kind"], spec=header["spec"],
                      params=params, extra=header["extra"])


def file_hash(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# model plumbing
# ---------------------------------------------------------------------------

def _registry():
    from promo.metrics import MotionFeatureEncoder
    from promo.motiongen import MotionDenoiser
    from promo.posture import PoseRetrievalEncoder, PostureDenoiser, TextRetrievalEncoder

    return {
        "posture_denoiser": PostureDenoiser,
        "motion_denoiser": MotionDenoiser,
        "text_encoder": TextRetrievalEncoder,
        "pose_encoder": PoseRetrievalEncoder,
        "motion_feature_encoder": MotionFeatureEncoder,
    }


def save_model(path, model, extra: dict | None = None) -> None:
    spec = model.spec()
    save_checkpoint(path, spec["kind"], spec, model.named_parameters(), extra)


def _assign_params(model, params: dict, path) -> None:
    named = model.named_parameters()
    if set(named) != set(params):
        missing = sorted(set(named) - set(params))
        surplus = sorted(set(params) - set(named))
        raise CheckpointError(f"{path}: parameter names disagree "
                              f"(missing {missing[:3]}, surplus {surplus[:3]})")
    # validate every shape before touching any parameter
    for name, p in named.items():
        if params[name].size != p.data.size:
            raise CheckpointError(
                f"{path}: parameter {name!r} has {params[name].size} elements, "
                f"model expects {p.data.size}")
    for name, p in named.items():
        p.data = params[name].reshape(p.data.shape).astype(np.float32)


def load_model(path):
    """(model, extra metadata) from a single-model checkpoint."""
    ckpt = load_checkpoint(path)
    registry = _registry()
    if ckpt.kind not in registry:
        raise CheckpointError(f"{path}: unknown module kind {ckpt.kind!r}")
    model = registry[ckpt.kind].from_spec(ckpt.spec)
    _assign_params(model, ckpt.params, path)
    return model, ckpt.extra


def save_model_pair(path, kind: str, first, second, extra: dict | None = None) -> None:
    """Two related models (e.g. text + pose retrieval encoders) in one file,
    parameter names prefixed ``a.`` and ``b.``."""
    params = {}
    for prefix, model in (("a.", first), ("b.", second)):
        for name, p in model.named_parameters().items():
            params[prefix + name] = p
    spec = {"kind": kind, "a": first.spec(), "b": second.spec()}
    save_checkpoint(path, kind, spec, params, extra)


def load_model_pair(path, expected_kind: str):
    ckpt = load_checkpoint(path)
    if ckpt.kind != expected_kind:
        raise CheckpointError(f"{path}: expected kind {expected_kind!r}, got {ckpt.kind!r}")
    registry = _registry()
    models = []
    for prefix in ("a", "b"):
        sub = ckpt.spec[prefix]
        model = registry[sub["kind"]].from_spec(sub)
        sub_params = {name[len(prefix) + 1:]: v for name, v in ckpt.params.items()
                      if name.startswith(prefix + ".")}
        _assign_params(model, sub_params, path)
        models.append(model)
    return models[0], models[1], ckpt.extra
