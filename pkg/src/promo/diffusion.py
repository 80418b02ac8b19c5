"""Model-agnostic denoising-diffusion machinery.

The denoiser predicts the clean sample directly (x0 prediction, not noise
prediction). Sampling runs the reverse chain from pure noise, combining the
conditional and unconditional predictions with classifier-free guidance at
each step, then diffusing back one step through the closed-form posterior.
Timesteps are 1-based: t ranges over [1, T].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from promo.errors import NonFiniteError, ShapeError
from promo.nn.tensor import GradientTape, Tensor, mean, mul, sub
from promo.seeding import rng_from

X0_CLAMP = 3.0  # per-channel clamp on predicted clean samples during sampling


@dataclass(frozen=True)
class DiffusionSchedule:
    kind: str
    betas: np.ndarray            # (T,)
    alphas: np.ndarray           # 1 - beta
    alpha_bars: np.ndarray       # cumulative product of alphas
    alpha_bars_prev: np.ndarray  # alpha_bar shifted right; entry 0 is 1
    posterior_var: np.ndarray    # (1 - abar_{t-1}) / (1 - abar_t) * beta_t

    @property
    def steps(self) -> int:
        return len(self.betas)

    def _index(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.steps):
            raise ShapeError(f"timestep out of range [1, {self.steps}]")
        return t - 1


def _finish_schedule(kind: str, betas: np.ndarray) -> DiffusionSchedule:
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    alpha_bars_prev = np.concatenate([[1.0], alpha_bars[:-1]])
    posterior_var = (1.0 - alpha_bars_prev) / (1.0 - alpha_bars) * betas
    return DiffusionSchedule(kind, betas, alphas, alpha_bars, alpha_bars_prev, posterior_var)


def linear_schedule(steps: int, beta_start: float = 0.00085, beta_end: float = 0.012
                    ) -> DiffusionSchedule:
    """Noise levels linearly spaced between the endpoints, inclusive."""
    if steps < 1:
        raise ShapeError("schedule needs at least one step")
    return _finish_schedule("linear", np.linspace(beta_start, beta_end, steps))


def cosine_schedule(steps: int, s: float = 0.008, max_beta: float = 0.999
                    ) -> DiffusionSchedule:
    """Squared-cosine alpha-bar profile, betas clipped to ``max_beta``."""
    if steps < 1:
        raise ShapeError("schedule needs at least one step")

    def f(u):
        return np.cos((u / steps + s) / (1.0 + s) * np.pi / 2.0) ** 2

    grid = f(np.arange(steps + 1))
    betas = np.clip(1.0 - grid[1:] / grid[:-1], 0.0, max_beta)
    return _finish_schedule("cosine", betas)


def q_sample(x0: np.ndarray, t, schedule: DiffusionSchedule, noise: np.ndarray) -> np.ndarray:
    """Closed-form forward noising: sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.

    ``t`` may be a scalar or a per-sample array matching the batch axis.
    """
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    if noise.shape != x0.shape:
        raise ShapeError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
    idx = schedule._index(t)
    abar = schedule.alpha_bars[idx]
    if np.ndim(idx) > 0:
        abar = abar.reshape((-1,) + (1,) * (x0.ndim - 1))
    return (np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise).astype(x0.dtype)


def cfg_combine(f_uncond: np.ndarray, f_cond: np.ndarray, w: float) -> np.ndarray:
    """Guided prediction f_uncond + w (f_cond - f_uncond); exact at w in {0, 1}."""
    if np.shape(f_uncond) != np.shape(f_cond):
        raise ShapeError("guidance branches have different shapes")
    if w == 0.0:
        return np.array(f_uncond, copy=True)
    if w == 1.0:
        return np.array(f_cond, copy=True)
    return f_uncond + w * (f_cond - f_uncond)


def posterior_step(x_t: np.ndarray, x0_hat: np.ndarray, t: int,
                   schedule: DiffusionSchedule, noise: np.ndarray | None) -> np.ndarray:
    """One reverse step through q(x_{t-1} | x_t, x0); deterministic at t = 1."""
    idx = int(schedule._index(t))
    abar_t = schedule.alpha_bars[idx]
    abar_prev = schedule.alpha_bars_prev[idx]
    beta_t = schedule.betas[idx]
    alpha_t = schedule.alphas[idx]
    coef_x0 = np.sqrt(abar_prev) * beta_t / (1.0 - abar_t)
    coef_xt = np.sqrt(alpha_t) * (1.0 - abar_prev) / (1.0 - abar_t)
    mean_ = coef_x0 * x0_hat + coef_xt * x_t
    if t == 1 or noise is None:
        return mean_.astype(x_t.dtype)
    sigma = np.sqrt(schedule.posterior_var[idx])
    return (mean_ + sigma * noise).astype(x_t.dtype)


@dataclass(frozen=True)
class GuidanceConfig:
    w: float = 2.0
    condition_dropout: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.condition_dropout <= 1.0:
            raise ShapeError("condition dropout must be in [0, 1]")
        if not np.isfinite(self.w):
            raise ShapeError("guidance weight must be finite")


def sample(denoiser, schedule: DiffusionSchedule, condition, guidance: GuidanceConfig,
           shape: tuple, seed: int) -> np.ndarray:
    """Reverse-chain sampling; a pure function of (denoiser, condition, seed, w).

    ``denoiser(x, t, condition_or_None)`` must return an array of ``x``'s
    shape. Predictions are clamped to [-X0_CLAMP, X0_CLAMP] before the
    posterior step.
    """
    rng = rng_from(seed, "sample")
    x = rng.standard_normal(shape).astype(np.float32)
    w = guidance.w
    for t in range(schedule.steps, 0, -1):
        if condition is None or w == 0.0:
            x0_hat = np.asarray(denoiser(x, t, None))
        elif w == 1.0:
            x0_hat = np.asarray(denoiser(x, t, condition))
        else:
            f_uncond = np.asarray(denoiser(x, t, None))
            f_cond = np.asarray(denoiser(x, t, condition))
            x0_hat = cfg_combine(f_uncond, f_cond, w)
        if x0_hat.shape != x.shape:
            raise ShapeError(f"denoiser returned {x0_hat.shape}, expected {x.shape}")
        if not np.all(np.isfinite(x0_hat)):
            raise NonFiniteError(f"denoiser produced non-finite values at t={t}")
        x0_hat = np.clip(x0_hat, -X0_CLAMP, X0_CLAMP)
        noise = rng.standard_normal(shape).astype(np.float32) if t > 1 else None
        x = posterior_step(x, x0_hat, t, schedule, noise)
    return x


def sample_batch(denoiser_batch, schedule: DiffusionSchedule, guidance: GuidanceConfig,
                 shape: tuple, seeds) -> np.ndarray:
    """Run independent reverse chains side by side, one per seed.

    Each row draws its noise from its own seed-derived stream, so row ``i``
    of the result depends only on ``seeds[i]`` (plus the shared denoiser and
    guidance). ``denoiser_batch(x, t, conditioned)`` maps a (B,) + shape
    array to its x0 prediction; ``conditioned`` selects the condition branch.
    """
    rngs = [rng_from(s, "sample") for s in seeds]
    x = np.stack([r.standard_normal(shape).astype(np.float32) for r in rngs])
    w = guidance.w
    for t in range(schedule.steps, 0, -1):
        if w == 0.0:
            x0_hat = np.asarray(denoiser_batch(x, t, False))
        elif w == 1.0:
            x0_hat = np.asarray(denoiser_batch(x, t, True))
        else:
            x0_hat = cfg_combine(np.asarray(denoiser_batch(x, t, False)),
                                 np.asarray(denoiser_batch(x, t, True)), w)
        if x0_hat.shape != x.shape:
            raise ShapeError(f"denoiser returned {x0_hat.shape}, expected {x.shape}")
        if not np.all(np.isfinite(x0_hat)):
            raise NonFiniteError(f"denoiser produced non-finite values at t={t}")
        x0_hat = np.clip(x0_hat, -X0_CLAMP, X0_CLAMP)
        if t > 1:
            noise = np.stack([r.standard_normal(shape).astype(np.float32) for r in rngs])
        else:
            noise = None
        x = posterior_step(x, x0_hat, t, schedule, noise)
    return x


def train_step(model, x0_batch: np.ndarray, conditions, schedule: DiffusionSchedule,
               dropout: float = 0.1, seed: int = 0) -> tuple[float, dict]:
    """One diffusion training step: sample timesteps and noise, form x_t,
    drop conditions per classifier-free learning, and return the mean squared
    error plus parameter gradients.

    ``model.predict_x0_batch(x_t, t, conditions, cond_keep, train, rng)``
    runs the denoiser under the active tape; ``cond_keep`` is a per-sample
    boolean mask (False = replace the condition with the null token).
    """
    x0_batch = np.asarray(x0_batch, dtype=np.float32)
    if x0_batch.shape[0] == 0:
        raise ShapeError("empty training batch")
    rng = rng_from(seed, "train-step")
    batch = x0_batch.shape[0]
    t = rng.integers(1, schedule.steps + 1, size=batch)
    noise = rng.standard_normal(x0_batch.shape).astype(np.float32)
    x_t = q_sample(x0_batch, t, schedule, noise)
    cond_keep = rng.random(batch) >= dropout
    with GradientTape() as tape:
        pred = model.predict_x0_batch(x_t, t, conditions, cond_keep, train=True, rng=rng)
        diff = sub(pred, Tensor(x0_batch))
        loss = mean(mul(diff, diff))
    loss_value = float(loss.data)
    if not np.isfinite(loss_value):
        raise NonFiniteError("non-finite training loss")
    grads = tape.gradients(loss)
    return loss_value, grads
