"""Script-to-pose stage: the conditioned pose denoiser, the retrieval
encoders, candidate generation, and Viterbi key-pose selection.

The denoiser is a stack of identical layers, each a residual feed-forward
block that folds in the timestep embedding followed by a cross-attention
block where the pose feature queries the script token embeddings. Candidate
poses sampled per script are scored by two small retrieval encoders: pose to
pose similarity across adjacent frames (transition matrices) and text to
pose similarity within a frame (emission vectors). A log-space Viterbi pass
picks the most probable path, verified against exhaustive enumeration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from promo import diffusion, kernels
from promo.errors import DegenerateRotationError, ShapeError
from promo.motion import POSE_DIM, pose_to_rotmats
from promo.nn import (
    AdamW,
    BiGRU,
    Dropout,
    Embedding,
    GradientTape,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    Tensor,
    cross_entropy_logits,
    gelu,
    l2_normalize,
    matmul,
    mul,
    sinusoidal_embedding,
)
from promo.nn import tensor as T
from promo.scripts import SCRIPT_TOKEN_LEN, VOCAB, PostureScript, tokenize
from promo.seeding import derive_seed, rng_from


def default_posture_schedule(steps: int = 1000) -> diffusion.DiffusionSchedule:
    """Linear betas; the step count is configurable, the endpoints are not."""
    return diffusion.linear_schedule(steps)


class _ResidualTimeBlock(Module):
    def __init__(self, dim: int, rng, p_drop: float):
        self.norm = LayerNorm(dim)
        self.fc1 = Linear(dim, 2 * dim, rng)
        self.fc2 = Linear(2 * dim, dim, rng)
        self.drop = Dropout(p_drop)

    def forward(self, h: Tensor, t_emb: Tensor, train=False, rng=None) -> Tensor:
        u = T.add(self.norm(h), t_emb)
        u = self.fc2(self.drop(gelu(self.fc1(u)), train=train, rng=rng))
        return T.add(h, u)


class _CrossAttentionBlock(Module):
    def __init__(self, dim: int, heads: int, rng, p_drop: float):
        self.norm = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng, dropout=p_drop)

    def forward(self, h: Tensor, text: Tensor, pad_mask, train=False, rng=None) -> Tensor:
        batch = h.shape[0]
        q = T.reshape(self.norm(h), (batch, 1, h.shape[-1]))
        out = self.attn(q, kv=text, pad_mask=pad_mask, train=train, rng=rng)
        return T.add(h, T.reshape(out, (batch, h.shape[-1])))


class PostureDenoiser(Module):
    """Predicts the clean 132-channel pose from a noised one, a timestep,
    and script tokens as the cross-attention condition."""

    def __init__(self, latent: int = 512, layers: int = 3, heads: int = 4,
                 dropout: float = 0.1, vocab_size: int | None = None,
                 max_tokens: int = SCRIPT_TOKEN_LEN, seed: int = 0):
        rng = rng_from(seed, "posture-init")
        vocab_size = vocab_size or len(VOCAB)
        self.latent = latent
        self.n_layers = layers
        self.heads = heads
        self.p_drop = dropout
        self.vocab_size = vocab_size
        self.max_tokens = max_tokens
        self.init_seed = seed

        self.in_proj = Linear(POSE_DIM, latent, rng)
        self.time_fc1 = Linear(latent, latent, rng)
        self.time_fc2 = Linear(latent, latent, rng)
        self.tok_emb = Embedding(vocab_size, latent, rng)
        self.pos_emb = Parameter(rng.normal(0.0, 0.02, size=(max_tokens, latent)))
        self.null_token = Parameter(rng.normal(0.0, 0.02, size=(latent,)))
        self.res_blocks = [_ResidualTimeBlock(latent, rng, dropout) for _ in range(layers)]
        self.attn_blocks = [_CrossAttentionBlock(latent, heads, rng, dropout)
                            for _ in range(layers)]
        self.out_norm = LayerNorm(latent)
        self.out_proj = Linear(latent, POSE_DIM, rng)

    def spec(self) -> dict:
        return {"kind": "posture_denoiser", "latent": self.latent,
                "layers": self.n_layers, "heads": self.heads,
                "dropout": self.p_drop, "vocab_size": self.vocab_size,
                "max_tokens": self.max_tokens}

    @classmethod
    def from_spec(cls, spec: dict) -> "PostureDenoiser":
        return cls(latent=spec["latent"], layers=spec["layers"], heads=spec["heads"],
                   dropout=spec["dropout"], vocab_size=spec["vocab_size"],
                   max_tokens=spec["max_tokens"])

    def _condition(self, token_ids, cond_keep, batch: int):
        """Token embeddings plus padding mask; dropped rows see only the
        learned null token."""
        null_row = T.reshape(self.null_token, (1, 1, self.latent))
        if token_ids is None:
            text = T.reshape(
                T.add(null_row, Tensor(np.zeros((batch, 1, self.latent), dtype=np.float32))),
                (batch, 1, self.latent))
            return text, None
        token_ids = np.asarray(token_ids)
        if token_ids.ndim == 1:
            token_ids = np.tile(token_ids, (batch, 1))
        seq = token_ids.shape[1]
        emb = T.add(self.tok_emb(token_ids), T.narrow(self.pos_emb, 0, 0, seq))
        pad_mask = token_ids == VOCAB.pad_id
        if cond_keep is not None and not np.all(cond_keep):
            keep = np.asarray(cond_keep, dtype=np.float32).reshape(batch, 1, 1)
            emb = T.add(mul(emb, keep), mul(null_row, 1.0 - keep))
            drop_mask = np.ones((batch, seq), dtype=bool)
            drop_mask[:, 0] = False
            pad_mask = np.where(cond_keep[:, None], pad_mask, drop_mask)
        return emb, pad_mask

    def forward(self, x_t, t, token_ids=None, cond_keep=None, train=False, rng=None) -> Tensor:
        x_t = np.asarray(x_t, dtype=np.float32)
        if x_t.ndim == 1:
            x_t = x_t[None]
        batch = x_t.shape[0]
        if x_t.shape != (batch, POSE_DIM):
            raise ShapeError(f"expected (B, {POSE_DIM}) pose batch, got {x_t.shape}")
        t_arr = np.broadcast_to(np.asarray(t), (batch,))
        t_emb = Tensor(sinusoidal_embedding(t_arr, self.latent))
        t_emb = self.time_fc2(gelu(self.time_fc1(t_emb)))
        text, pad_mask = self._condition(token_ids, cond_keep, batch)
        h = self.in_proj(Tensor(x_t))
        for res, attn in zip(self.res_blocks, self.attn_blocks):
            h = res(h, t_emb, train=train, rng=rng)
            h = attn(h, text, pad_mask, train=train, rng=rng)
        out = self.out_proj(self.out_norm(h))
        return out.check_finite("posture denoiser output")

    def predict_x0_batch(self, x_t, t, conditions, cond_keep, train, rng) -> Tensor:
        return self.forward(x_t, t, token_ids=conditions, cond_keep=cond_keep,
                            train=train, rng=rng)

    def as_sampler(self, schedule=None):
        """Adapt to the ``denoiser(x, t, condition)`` sampling interface."""

        def denoise(x, t, cond):
            out = self.forward(x[None], t, token_ids=None if cond is None else cond[None])
            return out.data[0]

        return denoise

    def _build_cached_condition(self, token_ids):
        """Per-layer key/value projections of a fixed condition sequence;
        they do not depend on the timestep, so sampling computes them once."""
        text, pad_mask = self._condition(token_ids, None, 1)
        kvs = [blk.attn.project_kv_arrays(text.data) for blk in self.attn_blocks]
        return kvs, pad_mask

    def _forward_cached(self, x: np.ndarray, t: int, cache) -> np.ndarray:
        kvs, pad_mask = cache
        batch = x.shape[0]
        t_emb = Tensor(sinusoidal_embedding(np.full(batch, t), self.latent))
        t_emb = self.time_fc2(gelu(self.time_fc1(t_emb)))
        h = self.in_proj(Tensor(x))
        for res, blk, (k, v) in zip(self.res_blocks, self.attn_blocks, kvs):
            h = res(h, t_emb)
            q = blk.norm(h).data[:, None, :]
            out = blk.attn.attend_with_cache(q, k, v, pad_mask)
            h = T.add(h, Tensor(out[:, 0, :]))
        return self.out_proj(self.out_norm(h)).data

    def make_batch_sampler(self, token_ids):
        """Batched sampling closure with cached condition projections, for
        :func:`promo.diffusion.sample_batch`."""
        token_ids = np.asarray(token_ids)
        cond = self._build_cached_condition(token_ids[None])
        null = self._build_cached_condition(None)

        def denoise(x, t, conditioned: bool):
            return self._forward_cached(x, t, cond if conditioned else null)

        return denoise


def train_posture_diffuser(dataset, epochs: int, seed: int, *,
                           latent: int = 64, layers: int = 3, heads: int = 4,
                           batch_size: int = 128, lr: float = 5e-4,
                           weight_decay: float = 0.01, cond_dropout: float = 0.1,
                           schedule: diffusion.DiffusionSchedule | None = None,
                           log_every: int | None = None):
    """Train the pose denoiser on (pose, script) pairs.

    Returns (denoiser, per-epoch mean loss history). Deterministic in
    ``seed``; epochs=0 returns the freshly initialized model.
    """
    if len(dataset) == 0:
        raise ShapeError("empty training dataset")
    schedule = schedule or default_posture_schedule()
    poses = np.stack([np.asarray(p, dtype=np.float32) for p, _ in dataset])
    tokens = np.stack([tokenize(s) for _, s in dataset])
    model = PostureDenoiser(latent=latent, layers=layers, heads=heads, seed=seed)
    opt = AdamW(model.named_parameters(), lr=lr, weight_decay=weight_decay)
    history = []
    step = 0
    for epoch in range(epochs):
        order = rng_from(seed, "shuffle", epoch).permutation(len(dataset))
        losses = []
        for start in range(0, len(dataset), batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2:
                continue
            loss, grads = diffusion.train_step(
                model, poses[idx], tokens[idx], schedule,
                dropout=cond_dropout, seed=derive_seed(seed, "step", step))
            opt.step(grads)
            losses.append(loss)
            step += 1
        history.append(float(np.mean(losses)))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"posture epoch {epoch + 1}/{epochs}: loss {history[-1]:.5f}")
    return model, history


@dataclass(frozen=True)
class CandidateSet:
    scripts: tuple
    poses: np.ndarray  # (F, L, 132)

    def __post_init__(self):
        if self.poses.ndim != 3 or self.poses.shape[2] != POSE_DIM:
            raise ShapeError(f"candidate poses must be (F, L, {POSE_DIM})")
        if len(self.scripts) != self.poses.shape[0] or self.poses.shape[1] < 1:
            raise ShapeError("script count and candidate grid disagree")


def generate_candidates(denoiser: PostureDenoiser, scripts, candidates_per_script: int,
                        guidance_w: float, seed: int,
                        schedule: diffusion.DiffusionSchedule | None = None) -> CandidateSet:
    """Sample an (F, L) grid of poses; each cell gets its own derived seed so
    the result is independent of evaluation order. Degenerate rotation blocks
    are re-sampled once, then surfaced as an error."""
    if candidates_per_script < 1:
        raise ShapeError("need at least one candidate per script")
    schedule = schedule or default_posture_schedule()
    guide = diffusion.GuidanceConfig(w=guidance_w)
    out = np.zeros((len(scripts), candidates_per_script, POSE_DIM), dtype=np.float32)
    for i, script in enumerate(scripts):
        sampler = denoiser.make_batch_sampler(tokenize(script))
        seeds = [derive_seed(seed, "candidate", i, j) for j in range(candidates_per_script)]
        poses = diffusion.sample_batch(sampler, schedule, guide, (POSE_DIM,), seeds)
        for j in range(candidates_per_script):
            try:
                pose_to_rotmats(poses[j])
            except DegenerateRotationError:
                retry = diffusion.sample_batch(
                    sampler, schedule, guide, (POSE_DIM,),
                    [derive_seed(seed, "candidate-retry", i, j)])
                pose_to_rotmats(retry[0])  # persistent degeneracy propagates
                poses[j] = retry[0]
        out[i] = poses
    return CandidateSet(scripts=tuple(scripts), poses=out)


# ---------------------------------------------------------------------------
# retrieval encoders
# ---------------------------------------------------------------------------

class TextRetrievalEncoder(Module):
    """Token embedding + one bidirectional GRU layer + linear head, mean
    pooled over real (non-pad) positions, unit normalized."""

    def __init__(self, embed_dim: int = 128, hidden: int = 128, out_dim: int = 128,
                 vocab_size: int | None = None, seed: int = 0):
        rng = rng_from(seed, "text-enc-init")
        vocab_size = vocab_size or len(VOCAB)
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.out_dim = out_dim
        self.vocab_size = vocab_size
        self.tok_emb = Embedding(vocab_size, embed_dim, rng)
        self.gru = BiGRU(embed_dim, hidden, rng)
        self.head = Linear(2 * hidden, out_dim, rng)

    def spec(self) -> dict:
        return {"kind": "text_encoder", "embed_dim": self.embed_dim,
                "hidden": self.hidden, "out_dim": self.out_dim,
                "vocab_size": self.vocab_size}

    @classmethod
    def from_spec(cls, spec: dict) -> "TextRetrievalEncoder":
        return cls(embed_dim=spec["embed_dim"], hidden=spec["hidden"],
                   out_dim=spec["out_dim"], vocab_size=spec["vocab_size"])

    def forward(self, token_ids, train=False, rng=None) -> Tensor:
        token_ids = np.atleast_2d(np.asarray(token_ids))
        states = self.gru(self.tok_emb(token_ids), train=train, rng=rng)
        real = (token_ids != VOCAB.pad_id).astype(np.float32)
        weights = real / np.maximum(real.sum(axis=1, keepdims=True), 1.0)
        pooled = T.sum_(mul(states, weights[:, :, None]), axis=1)
        return l2_normalize(self.head(pooled))


class PoseRetrievalEncoder(Module):
    """Feed-forward pose embedder with unit-norm output."""

    def __init__(self, hidden: int = 256, out_dim: int = 128, seed: int = 0):
        rng = rng_from(seed, "pose-enc-init")
        self.hidden = hidden
        self.out_dim = out_dim
        self.fc1 = Linear(POSE_DIM, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.head = Linear(hidden, out_dim, rng)

    def spec(self) -> dict:
        return {"kind": "pose_encoder", "hidden": self.hidden, "out_dim": self.out_dim}

    @classmethod
    def from_spec(cls, spec: dict) -> "PoseRetrievalEncoder":
        return cls(hidden=spec["hidden"], out_dim=spec["out_dim"])

    def forward(self, poses, train=False, rng=None) -> Tensor:
        poses = np.atleast_2d(np.asarray(poses, dtype=np.float32))
        h = gelu(self.fc1(Tensor(poses)))
        h = gelu(self.fc2(h))
        return l2_normalize(self.head(h))


class ContrastiveScale(Module):
    """Learnable softmax temperature, stored as a log scale."""

    def __init__(self, init_tau: float = 0.07):
        self.log_scale = Parameter(np.array([np.log(1.0 / init_tau)], dtype=np.float32))

    def forward(self, sims: Tensor) -> Tensor:
        return mul(sims, T.exp(T.reshape(self.log_scale, (1, 1))))


def in_batch_contrastive_loss(text_emb: Tensor, pose_emb: Tensor,
                              scale: ContrastiveScale) -> Tensor:
    """Symmetric cross entropy of the scaled similarity matrix against the
    matched diagonal."""
    sims = scale(matmul(text_emb, T.swap_axes(pose_emb, 0, 1)))
    targets = np.arange(sims.shape[0])
    loss_t = cross_entropy_logits(sims, targets)
    loss_p = cross_entropy_logits(T.swap_axes(sims, 0, 1), targets)
    return mul(T.add(loss_t, loss_p), 0.5)


def train_retrieval_encoders(dataset, epochs: int, seed: int, *,
                             batch_size: int = 128, lr: float = 1e-3,
                             weight_decay: float = 0.01, embed_dim: int = 64,
                             hidden: int = 64, out_dim: int = 64,
                             log_every: int | None = None):
    """In-batch contrastive training of the text and pose encoders."""
    if len(dataset) < batch_size:
        raise ShapeError("dataset smaller than one batch")
    if batch_size < 2:
        raise ShapeError("contrastive batches need at least 2 pairs")
    poses = np.stack([np.asarray(p, dtype=np.float32) for p, _ in dataset])
    tokens = np.stack([tokenize(s) for _, s in dataset])
    text_enc = TextRetrievalEncoder(embed_dim=embed_dim, hidden=hidden,
                                    out_dim=out_dim, seed=seed)
    pose_enc = PoseRetrievalEncoder(hidden=hidden * 2, out_dim=out_dim, seed=seed + 1)
    scale = ContrastiveScale()
    params = {}
    for prefix, module in (("text.", text_enc), ("pose.", pose_enc), ("scale.", scale)):
        for name, p in module.named_parameters().items():
            params[prefix + name] = p
    opt = AdamW(params, lr=lr, weight_decay=weight_decay)
    history = []
    for epoch in range(epochs):
        order = rng_from(seed, "enc-shuffle", epoch).permutation(len(dataset))
        losses = []
        for start in range(0, len(dataset), batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2:
                continue
            with GradientTape() as tape:
                loss = in_batch_contrastive_loss(
                    text_enc(tokens[idx]), pose_enc(poses[idx]), scale)
            losses.append(float(loss.data))
            opt.step(tape.gradients(loss))
        history.append(float(np.mean(losses)))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"encoders epoch {epoch + 1}/{epochs}: loss {history[-1]:.5f}")
    return text_enc, pose_enc, history


# ---------------------------------------------------------------------------
# planning matrices and path selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanningMatrices:
    transition: np.ndarray  # (F-1, L, L), row stochastic
    emission: np.ndarray    # (F, L), each row sums to 1

    def __post_init__(self):
        f_count, l_count = self.emission.shape
        if self.transition.shape != (max(f_count - 1, 0), l_count, l_count):
            raise ShapeError("transition/emission shapes disagree")
        if np.any(self.emission <= 0) or np.any(self.transition <= 0):
            raise ShapeError("planning probabilities must be strictly positive")
        if np.abs(self.emission.sum(axis=1) - 1.0).max() > 1e-9:
            raise ShapeError("emission rows must sum to 1")
        if f_count > 1 and np.abs(self.transition.sum(axis=2) - 1.0).max() > 1e-9:
            raise ShapeError("transition rows must sum to 1")


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _pose_embeddings(poses: np.ndarray, pose_enc: PoseRetrievalEncoder) -> np.ndarray:
    f_count, l_count, _ = poses.shape
    emb = pose_enc(poses.reshape(f_count * l_count, POSE_DIM)).data
    return emb.reshape(f_count, l_count, -1).astype(np.float64)


def build_transition(poses: np.ndarray, pose_enc: PoseRetrievalEncoder) -> np.ndarray:
    """Adjacent-frame pose similarity, softmax normalized over the later
    frame's candidates: shape (F-1, L, L)."""
    poses = np.asarray(poses, dtype=np.float32)
    if poses.ndim != 3 or poses.shape[0] < 2:
        raise ShapeError("transition matrices need (F >= 2, L, pose) candidates")
    emb = _pose_embeddings(poses, pose_enc)
    out = np.empty((poses.shape[0] - 1, poses.shape[1], poses.shape[1]))
    for i in range(1, poses.shape[0]):
        sims = emb[i - 1] @ emb[i].T
        out[i - 1] = _softmax_rows(sims)
    return out


def build_emission(scripts, poses: np.ndarray, text_enc: TextRetrievalEncoder,
                   pose_enc: PoseRetrievalEncoder) -> np.ndarray:
    """Per-frame text-to-candidate similarity, softmax normalized: (F, L)."""
    poses = np.asarray(poses, dtype=np.float32)
    if poses.ndim != 3 or len(scripts) != poses.shape[0]:
        raise ShapeError("scripts and candidate grid disagree")
    tokens = np.stack([tokenize(s) for s in scripts])
    text_emb = text_enc(tokens).data.astype(np.float64)
    pose_emb = _pose_embeddings(poses, pose_enc)
    logits = np.einsum("fd,fld->fl", text_emb, pose_emb)
    return _softmax_rows(logits)


def build_planning_matrices(candidates: CandidateSet, text_enc: TextRetrievalEncoder,
                            pose_enc: PoseRetrievalEncoder) -> PlanningMatrices:
    emission = build_emission(candidates.scripts, candidates.poses, text_enc, pose_enc)
    if candidates.poses.shape[0] >= 2:
        transition = build_transition(candidates.poses, pose_enc)
    else:
        l_count = candidates.poses.shape[1]
        transition = np.zeros((0, l_count, l_count))
    return PlanningMatrices(transition=transition, emission=emission)


def viterbi_select(matrices: PlanningMatrices) -> tuple[np.ndarray, float]:
    """Most probable candidate path under emissions and transitions.

    Dynamic programming in log space; ties break toward the smaller index,
    earliest frame first, matching :func:`brute_force_select` exactly.
    """
    log_emit = np.log(matrices.emission)
    log_trans = np.log(matrices.transition) if matrices.transition.size else \
        np.zeros((0, matrices.emission.shape[1], matrices.emission.shape[1]))
    return kernels.viterbi_dp(log_emit, log_trans)


def brute_force_select(matrices: PlanningMatrices) -> tuple[np.ndarray, float]:
    """Exhaustive-enumeration oracle for the path objective."""
    f_count, l_count = matrices.emission.shape
    if l_count ** f_count > 1_000_000:
        raise ShapeError("instance too large for brute force")
    log_emit = np.log(matrices.emission)
    log_trans = np.log(matrices.transition) if matrices.transition.size else None
    best_path, best_score = None, -np.inf
    for path in itertools.product(range(l_count), repeat=f_count):
        score = log_emit[0, path[0]]
        for i in range(1, f_count):
            score += log_emit[i, path[i]] + log_trans[i - 1, path[i - 1], path[i]]
        if score > best_score:  # lexicographic order makes first max smallest
            best_score, best_path = score, path
    return np.array(best_path, dtype=np.int64), float(best_score)
