"""Deterministic seed derivation.

Every random draw in the library flows through an explicit seed; there is no
global RNG state. ``derive_seed`` maps a master seed plus a path of labels to
an independent child seed, so parallel workers produce identical results
regardless of scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def derive_seed(seed: int, *path) -> int:
    """Child seed for ``path`` under ``seed``; stable across processes."""
    entropy = [int(seed) & 0xFFFFFFFF] + [_label_to_int(p) for p in path]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def rng_from(seed: int, *path) -> np.random.Generator:
    """Generator seeded by ``derive_seed(seed, *path)``."""
    entropy = [int(seed) & 0xFFFFFFFF] + [_label_to_int(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))
