"""Keypose-to-motion stage.

A transformer-encoder denoiser takes the noised 64 x 135 motion sequence as
frame tokens and the key poses as extra condition tokens (one token per key
pose, no global information in them), plus a timestep token. Its whole job
is to infer global translation and rotation and to fill the in-between
frames. A non-learned slerp interpolation baseline provides the comparison
point: it reproduces the key poses exactly but never moves the root.
"""

from __future__ import annotations

import numpy as np

from promo import diffusion
from promo.errors import ShapeError
from promo.motion import (
    FRAME_DIM,
    POSE_DIM,
    SEQ_LEN,
    MotionSequence,
    pose_to_rotmats,
    rotmats_to_pose,
)
from promo.nn import (
    AdamW,
    Dropout,
    GELU,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    Tensor,
    gelu,
    mul,
    sinusoidal_embedding,
)
from promo.nn import tensor as T
from promo.rotation import slerp_matrices
from promo.seeding import derive_seed, rng_from
from promo.skeleton import CANONICAL, forward_kinematics

MAX_KEYPOSES = 16


def default_motion_schedule(steps: int = 100) -> diffusion.DiffusionSchedule:
    return diffusion.cosine_schedule(steps)


def keypose_frame_indices(frame_count: int, keypose_count: int) -> np.ndarray:
    """Evenly spaced frame slots: floor((k + 1/2) * frames / count)."""
    k = np.arange(keypose_count)
    return ((k + 0.5) * frame_count / keypose_count).astype(np.int64)


def extract_keyposes(frames: np.ndarray, keypose_count: int) -> np.ndarray:
    """Local poses (root orientation + body, global channels stripped) at
    evenly spaced frames of a (64, 135) sequence."""
    frames = np.asarray(frames)
    if frames.shape != (SEQ_LEN, FRAME_DIM):
        raise ShapeError(f"expected ({SEQ_LEN}, {FRAME_DIM}) frames")
    if not 1 <= keypose_count <= MAX_KEYPOSES:
        raise ShapeError(f"keypose count must be in [1, {MAX_KEYPOSES}]")
    idx = keypose_frame_indices(SEQ_LEN, keypose_count)
    return frames[idx, 3:].astype(np.float32)


class _EncoderLayer(Module):
    def __init__(self, dim: int, heads: int, rng, p_drop: float):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng, dropout=p_drop)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, 2 * dim, rng)
        self.fc2 = Linear(2 * dim, dim, rng)
        self.drop = Dropout(p_drop)

    def forward(self, h: Tensor, train=False, rng=None) -> Tensor:
        h = T.add(h, self.attn(self.norm1(h), train=train, rng=rng))
        u = self.fc2(self.drop(gelu(self.fc1(self.norm2(h))), train=train, rng=rng))
        return T.add(h, u)


class MotionDenoiser(Module):
    """Transformer encoder over [time token | keypose tokens | frame tokens]."""

    def __init__(self, latent: int = 512, layers: int = 8, heads: int = 4,
                 dropout: float = 0.1, seed: int = 0):
        rng = rng_from(seed, "motion-init")
        self.latent = latent
        self.n_layers = layers
        self.heads = heads
        self.p_drop = dropout
        self.init_seed = seed

        self.in_proj = Linear(FRAME_DIM, latent, rng)
        self.kp_proj = Linear(POSE_DIM, latent, rng)
        self.cond_offset = Parameter(rng.normal(0.0, 0.02, size=(latent,)))
        self.null_token = Parameter(rng.normal(0.0, 0.02, size=(latent,)))
        self.time_fc1 = Linear(latent, latent, rng)
        self.time_fc2 = Linear(latent, latent, rng)
        self.layers = [_EncoderLayer(latent, heads, rng, dropout) for _ in range(layers)]
        self.out_norm = LayerNorm(latent)
        self.out_proj = Linear(latent, FRAME_DIM, rng)
        self._frame_pos = sinusoidal_embedding(np.arange(SEQ_LEN), latent)

    def spec(self) -> dict:
        return {"kind": "motion_denoiser", "latent": self.latent,
                "layers": self.n_layers, "heads": self.heads, "dropout": self.p_drop}

    @classmethod
    def from_spec(cls, spec: dict) -> "MotionDenoiser":
        return cls(latent=spec["latent"], layers=spec["layers"], heads=spec["heads"],
                   dropout=spec["dropout"])

    def _condition_tokens(self, keyposes, cond_keep, batch: int, n_cond: int):
        offset = T.reshape(self.cond_offset, (1, 1, self.latent))
        null = T.reshape(self.null_token, (1, 1, self.latent))
        if keyposes is None:
            zeros = Tensor(np.zeros((batch, n_cond, self.latent), dtype=np.float32))
            return T.add(T.add(zeros, null), offset)
        keyposes = np.asarray(keyposes, dtype=np.float32)
        if keyposes.ndim == 2:
            keyposes = np.tile(keyposes[None], (batch, 1, 1))
        if keyposes.shape[0] != batch or keyposes.shape[2] != POSE_DIM:
            raise ShapeError(f"keypose condition must be (B, F, {POSE_DIM})")
        emb = self.kp_proj(Tensor(keyposes))
        if cond_keep is not None and not np.all(cond_keep):
            keep = np.asarray(cond_keep, dtype=np.float32).reshape(batch, 1, 1)
            emb = T.add(mul(emb, keep), mul(null, 1.0 - keep))
        return T.add(emb, offset)

    def forward(self, x_t, t, keyposes=None, cond_keep=None, n_cond: int = 1,
                train=False, rng=None) -> Tensor:
        x_t = np.asarray(x_t, dtype=np.float32)
        if x_t.ndim == 2:
            x_t = x_t[None]
        batch = x_t.shape[0]
        if x_t.shape != (batch, SEQ_LEN, FRAME_DIM):
            raise ShapeError(f"expected (B, {SEQ_LEN}, {FRAME_DIM}) motion batch")
        t_arr = np.broadcast_to(np.asarray(t), (batch,))
        t_tok = self.time_fc2(gelu(self.time_fc1(Tensor(sinusoidal_embedding(t_arr, self.latent)))))
        t_tok = T.reshape(t_tok, (batch, 1, self.latent))
        cond = self._condition_tokens(keyposes, cond_keep, batch, n_cond)
        frames = T.add(self.in_proj(Tensor(x_t)), self._frame_pos[None])
        h = T.concat([t_tok, cond, frames], axis=1)
        for layer in self.layers:
            h = layer(h, train=train, rng=rng)
        n_prefix = h.shape[1] - SEQ_LEN
        out = self.out_proj(self.out_norm(T.narrow(h, 1, n_prefix, SEQ_LEN)))
        return out.check_finite("motion denoiser output")

    def predict_x0_batch(self, x_t, t, conditions, cond_keep, train, rng) -> Tensor:
        n_cond = 1 if conditions is None else np.asarray(conditions).shape[-2]
        return self.forward(x_t, t, keyposes=conditions, cond_keep=cond_keep,
                            n_cond=n_cond, train=train, rng=rng)

    def as_sampler(self, keypose_count: int):
        """Sampling closure; the unconditional branch uses the same number of
        (null) condition tokens the conditional branch has."""

        def denoise(x, t, cond):
            kp = None if cond is None else np.asarray(cond)[None]
            out = self.forward(x[None], t, keyposes=kp, n_cond=keypose_count)
            return out.data[0]

        return denoise


def train_go_diffuser(dataset, epochs: int, seed: int, *,
                      latent: int = 64, layers: int = 2, heads: int = 4,
                      batch_size: int = 64, lr: float = 1e-4,
                      weight_decay: float = 0.01, cond_dropout: float = 0.1,
                      keypose_count: int = 4,
                      schedule: diffusion.DiffusionSchedule | None = None,
                      log_every: int | None = None):
    """Diffusion training over motion sequences conditioned on their own
    evenly spaced key poses (global channels stripped from the condition)."""
    if len(dataset) == 0:
        raise ShapeError("empty training dataset")
    schedule = schedule or default_motion_schedule()
    frames = np.stack([
        m.frames if isinstance(m, MotionSequence) else np.asarray(m, dtype=np.float32)
        for m in dataset
    ])
    if frames.shape[1:] != (SEQ_LEN, FRAME_DIM):
        raise ShapeError("every motion must be 64 x 135")
    keyposes = np.stack([extract_keyposes(f, keypose_count) for f in frames])
    model = MotionDenoiser(latent=latent, layers=layers, heads=heads, seed=seed)
    opt = AdamW(model.named_parameters(), lr=lr, weight_decay=weight_decay)
    history = []
    step = 0
    for epoch in range(epochs):
        order = rng_from(seed, "go-shuffle", epoch).permutation(len(dataset))
        losses = []
        for start in range(0, len(dataset), batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2:
                continue
            loss, grads = diffusion.train_step(
                model, frames[idx], keyposes[idx], schedule,
                dropout=cond_dropout, seed=derive_seed(seed, "go-step", step))
            opt.step(grads)
            losses.append(loss)
            step += 1
        history.append(float(np.mean(losses)))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"go epoch {epoch + 1}/{epochs}: loss {history[-1]:.5f}")
    return model, history


def generate_motion(denoiser: MotionDenoiser, keyposes: np.ndarray, guidance_w: float,
                    seed: int, schedule: diffusion.DiffusionSchedule | None = None,
                    fps: int = 20) -> MotionSequence:
    """Sample a full motion conditioned on key poses; deterministic per seed."""
    keyposes = np.asarray(keyposes, dtype=np.float32)
    if keyposes.ndim != 2 or keyposes.shape[1] != POSE_DIM:
        raise ShapeError(f"keyposes must be (F, {POSE_DIM})")
    if not 1 <= keyposes.shape[0] <= MAX_KEYPOSES:
        raise ShapeError(f"keypose count must be in [1, {MAX_KEYPOSES}]")
    schedule = schedule or default_motion_schedule()
    sampler = denoiser.as_sampler(keypose_count=keyposes.shape[0])
    frames = diffusion.sample(sampler, schedule, keyposes,
                              diffusion.GuidanceConfig(w=guidance_w),
                              (SEQ_LEN, FRAME_DIM), seed)
    frames = np.array(frames)
    frames[0, 0:2] = 0.0  # the sequence invariant: no planar velocity at frame 0
    return MotionSequence(frames, fps=fps)


def interpolate_baseline(keyposes: np.ndarray, frame_count: int = SEQ_LEN,
                         fps: int = 20) -> MotionSequence:
    """Non-learned reference: shortest-arc slerp of every joint rotation
    between consecutive key poses at their assigned frame slots, zero planar
    velocity, root height set so the lowest joint grazes the ground."""
    keyposes = np.asarray(keyposes, dtype=np.float32)
    if keyposes.ndim != 2 or keyposes.shape[1] != POSE_DIM:
        raise ShapeError(f"keyposes must be (F, {POSE_DIM})")
    count = keyposes.shape[0]
    key_rots = pose_to_rotmats(keyposes)
    slots = keypose_frame_indices(frame_count, count)
    heights = np.array([
        -forward_kinematics(key_rots[k], CANONICAL, (0.0, 0.0, 0.0))[:, 2].min()
        for k in range(count)
    ])

    frames = np.zeros((frame_count, FRAME_DIM), dtype=np.float32)
    for f in range(frame_count):
        if count == 1 or f <= slots[0]:
            rots, z = key_rots[0], heights[0]
        elif f >= slots[-1]:
            rots, z = key_rots[-1], heights[-1]
        else:
            seg = int(np.searchsorted(slots, f, side="right")) - 1
            span = slots[seg + 1] - slots[seg]
            alpha = (f - slots[seg]) / span
            if alpha == 0.0:
                rots = key_rots[seg]
            else:
                rots = np.stack([
                    slerp_matrices(key_rots[seg, j], key_rots[seg + 1, j], alpha)
                    for j in range(key_rots.shape[1])
                ])
            z = (1.0 - alpha) * heights[seg] + alpha * heights[seg + 1]
        frames[f, 2] = z
        frames[f, 3:] = rotmats_to_pose(rots)
    return MotionSequence(frames, fps=fps)
