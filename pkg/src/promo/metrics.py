"""Evaluation metrics: retrieval precision, Frechet distance, multimodal
distance, smoothness, and positional/variance errors over joint trajectories.

Joint trajectories are arrays shaped (..., F, J, 3): leading axes are
samples, F frames, J = 22 joints, world meters. The four positional-error
variants select coordinates the same way for APE and AVE: the root joint in
3D, the planar root trajectory, root-relative joints (global translation
removed), and all joints in the world frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from promo.errors import ShapeError
from promo.motion import FRAME_DIM, MotionSequence, SEQ_LEN
from promo.nn import (
    AdamW,
    GELU,
    GradientTape,
    Linear,
    Module,
    Tensor,
    gelu,
    l2_normalize,
    mul,
)
from promo.nn import tensor as T
from promo.posture import ContrastiveScale, TextRetrievalEncoder, in_batch_contrastive_loss
from promo.scripts import tokenize_plan
from promo.seeding import rng_from

APE_VARIANTS = ("root_joint", "global_traj", "mean_local", "mean_global")


# ---------------------------------------------------------------------------
# trajectory errors
# ---------------------------------------------------------------------------

def _as_batched(traj: np.ndarray) -> np.ndarray:
    traj = np.asarray(traj, dtype=np.float64)
    if traj.ndim == 3:
        traj = traj[None]
    if traj.ndim != 4 or traj.shape[-1] != 3:
        raise ShapeError(f"trajectory must be (..., F, J, 3), got {traj.shape}")
    return traj


def _select(traj: np.ndarray, variant: str) -> np.ndarray:
    """Coordinate selection per variant; output (N, F, J', C)."""
    if variant == "root_joint":
        return traj[:, :, 0:1, :]
    if variant == "global_traj":
        return traj[:, :, 0:1, 0:2]
    if variant == "mean_local":
        return traj - traj[:, :, 0:1, :]
    if variant == "mean_global":
        return traj
    raise ShapeError(f"unknown variant {variant!r}; expected one of {APE_VARIANTS}")


def ape(gen: np.ndarray, ref: np.ndarray, variant: str = "mean_global") -> float:
    """Average positional error: mean over samples, frames, and the selected
    joints of the L2 distance between matching joint positions."""
    gen, ref = _as_batched(gen), _as_batched(ref)
    if gen.shape != ref.shape:
        raise ShapeError(f"trajectory shapes differ: {gen.shape} vs {ref.shape}")
    diff = _select(gen, variant) - _select(ref, variant)
    return float(np.linalg.norm(diff, axis=-1).mean())


def ave(gen: np.ndarray, ref: np.ndarray, variant: str = "mean_global") -> float:
    """Average variance error: per joint, the elementwise temporal variance
    (1/(F-1) normalization); then the mean over samples and selected joints
    of the L2 distance between the two variance profiles."""
    gen, ref = _as_batched(gen), _as_batched(ref)
    if gen.shape != ref.shape:
        raise ShapeError(f"trajectory shapes differ: {gen.shape} vs {ref.shape}")
    if gen.shape[1] < 2:
        raise ShapeError("variance needs at least 2 frames")
    var_g = _select(gen, variant).var(axis=1, ddof=1)
    var_r = _select(ref, variant).var(axis=1, ddof=1)
    return float(np.linalg.norm(var_g - var_r, axis=-1).mean())


def smoothness(traj: np.ndarray) -> float:
    """Mean squared second temporal difference over joints and coordinates
    (per-frame acceleration units)."""
    traj = _as_batched(traj)
    if traj.shape[1] < 3:
        raise ShapeError("smoothness needs at least 3 frames")
    acc = np.diff(traj, n=2, axis=1)
    return float(np.mean(acc * acc))


# ---------------------------------------------------------------------------
# distribution metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ShapeError("mean and covariance dimensions disagree")
        if np.abs(self.cov - self.cov.T).max() > 1e-8:
            raise ShapeError("covariance must be symmetric")

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "GaussianStats":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise ShapeError("need (N >= 2, d) features")
        cov = np.cov(feats, rowvar=False, ddof=1)
        cov = 0.5 * (cov + cov.T)
        return cls(mean=feats.mean(axis=0), cov=np.atleast_2d(cov))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, eigenvalues floored
    at zero to absorb float noise."""
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """Frechet distance between two Gaussians.

    The cross term uses the symmetric form (A^1/2 B A^1/2)^1/2 so every
    square root is of a symmetric PSD matrix.
    """
    if a.mean.shape != b.mean.shape:
        raise ShapeError("feature dimensions disagree")
    root_a = _psd_sqrt(a.cov)
    cross = _psd_sqrt(root_a @ b.cov @ root_a)
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    return mean_term + float(np.trace(a.cov + b.cov - 2.0 * cross))


def multimodal_distance(motion_feats: np.ndarray, text_feats: np.ndarray) -> float:
    """Mean Euclidean distance between matched feature pairs."""
    motion_feats = np.asarray(motion_feats, dtype=np.float64)
    text_feats = np.asarray(text_feats, dtype=np.float64)
    if motion_feats.shape != text_feats.shape:
        raise ShapeError("matched features must have equal shapes")
    return float(np.linalg.norm(motion_feats - text_feats, axis=-1).mean())


def r_precision(motion_feats: np.ndarray, text_feats: np.ndarray,
                k_values=(10, 20, 30)) -> dict:
    """Retrieval accuracy: for each motion, rank every text feature by
    Euclidean distance; R@K is the fraction whose own description lands in
    the top K; MedR is the median (1-based) rank."""
    motion_feats = np.asarray(motion_feats, dtype=np.float64)
    text_feats = np.asarray(text_feats, dtype=np.float64)
    if motion_feats.shape != text_feats.shape:
        raise ShapeError("need matched (N, d) feature sets")
    n = motion_feats.shape[0]
    if n < max(k_values):
        raise ShapeError(f"pool of {n} too small for K={max(k_values)}")
    dists = np.linalg.norm(motion_feats[:, None, :] - text_feats[None, :, :], axis=-1)
    order = np.argsort(dists, axis=1, kind="stable")
    ranks = np.empty(n, dtype=np.int64)
    for i in range(n):
        ranks[i] = int(np.nonzero(order[i] == i)[0][0]) + 1
    out = {f"R@{k}": float(np.mean(ranks <= k)) for k in k_values}
    out["MedR"] = float(np.median(ranks))
    return out


# ---------------------------------------------------------------------------
# feature extractors and the similarity filter
# ---------------------------------------------------------------------------

class MotionFeatureEncoder(Module):
    """Per-frame feed-forward encoder, temporal mean pooling, unit norm."""

    def __init__(self, hidden: int = 128, out_dim: int = 64, seed: int = 0):
        rng = rng_from(seed, "motion-enc-init")
        self.hidden = hidden
        self.out_dim = out_dim
        self.fc1 = Linear(FRAME_DIM, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.head = Linear(hidden, out_dim, rng)

    def spec(self) -> dict:
        return {"kind": "motion_feature_encoder", "hidden": self.hidden,
                "out_dim": self.out_dim}

    @classmethod
    def from_spec(cls, spec: dict) -> "MotionFeatureEncoder":
        return cls(hidden=spec["hidden"], out_dim=spec["out_dim"])

    def forward(self, frames, train=False, rng=None) -> Tensor:
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.shape[1:] != (SEQ_LEN, FRAME_DIM):
            raise ShapeError(f"expected (B, {SEQ_LEN}, {FRAME_DIM}) frames")
        h = gelu(self.fc1(Tensor(frames)))
        h = gelu(self.fc2(h))
        pooled = mul(T.sum_(h, axis=1), 1.0 / SEQ_LEN)
        return l2_normalize(self.head(pooled))


@dataclass
class FeatureExtractorPair:
    motion_encoder: MotionFeatureEncoder
    text_encoder: TextRetrievalEncoder
    plan_token_len: int = 128

    def motion_features(self, sequences) -> np.ndarray:
        frames = np.stack([
            s.frames if isinstance(s, MotionSequence) else np.asarray(s, dtype=np.float32)
            for s in sequences
        ])
        return self.motion_encoder(frames).data

    def text_features(self, plans) -> np.ndarray:
        tokens = np.stack([tokenize_plan(p, max_len=self.plan_token_len) for p in plans])
        return self.text_encoder(tokens).data


def train_feature_extractors(dataset, epochs: int, seed: int, *,
                             batch_size: int = 64, lr: float = 1e-3,
                             weight_decay: float = 0.01, hidden: int = 64,
                             out_dim: int = 64, plan_token_len: int = 128,
                             log_every: int | None = None):
    """Contrastive training of the motion/text feature extractors on
    (motion, plan scripts) pairs; same in-batch recipe as the retrieval
    encoders."""
    if len(dataset) < batch_size:
        raise ShapeError("dataset smaller than one batch")
    frames = np.stack([
        m.frames if isinstance(m, MotionSequence) else np.asarray(m, dtype=np.float32)
        for m, _ in dataset
    ])
    tokens = np.stack([tokenize_plan(p, max_len=plan_token_len) for _, p in dataset])
    motion_enc = MotionFeatureEncoder(hidden=hidden, out_dim=out_dim, seed=seed)
    text_enc = TextRetrievalEncoder(embed_dim=hidden, hidden=hidden, out_dim=out_dim,
                                    seed=seed + 1)
    scale = ContrastiveScale()
    params = {}
    for prefix, module in (("motion.", motion_enc), ("text.", text_enc), ("scale.", scale)):
        for name, p in module.named_parameters().items():
            params[prefix + name] = p
    opt = AdamW(params, lr=lr, weight_decay=weight_decay)
    history = []
    for epoch in range(epochs):
        order = rng_from(seed, "ext-shuffle", epoch).permutation(len(dataset))
        losses = []
        for start in range(0, len(dataset), batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2:
                continue
            with GradientTape() as tape:
                loss = in_batch_contrastive_loss(
                    text_enc(tokens[idx]), motion_enc(frames[idx]), scale)
            losses.append(float(loss.data))
            opt.step(tape.gradients(loss))
        history.append(float(np.mean(losses)))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"extractors epoch {epoch + 1}/{epochs}: loss {history[-1]:.5f}")
    return FeatureExtractorPair(motion_enc, text_enc, plan_token_len), history


def similarity_filter(texts_a, texts_b, text_encoder, plan_token_len: int = 128,
                      alpha: float = 0.45) -> np.ndarray:
    """Indices of ``texts_a`` whose best cosine similarity against
    ``texts_b`` does not exceed ``alpha``. Each text is a plan (list of
    scripts) or a single script."""

    def embed(items):
        tokens = np.stack([
            tokenize_plan(p if isinstance(p, (list, tuple)) else [p], max_len=plan_token_len)
            for p in items
        ])
        return text_encoder(tokens).data.astype(np.float64)

    if len(texts_b) == 0:
        return np.arange(len(texts_a))
    emb_a = embed(texts_a)
    emb_b = embed(texts_b)
    # unit vectors, so this is cosine similarity; clip float residue so the
    # mathematical bound |cos| <= 1 holds exactly
    sims = np.clip(emb_a @ emb_b.T, -1.0, 1.0)
    keep = sims.max(axis=1) <= alpha
    return np.nonzero(keep)[0]


def metric_report(metric: str, value: float, variant: str | None = None,
                  n: int | None = None) -> dict:
    """One JSON-serializable metric record."""
    record = {"metric": metric, "value": float(value)}
    if variant is not None:
        record["variant"] = variant
    if n is not None:
        record["n"] = int(n)
    return record
