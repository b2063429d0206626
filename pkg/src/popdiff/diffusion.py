"""Forward noising process, training loss, and ancestral sampler.

Schedule arrays are float64 and indexed by step-1 (step t in [1, T] lives at
index t-1).  All per-step coefficients are converted to python floats before
touching batch arrays so float32 training data is never silently promoted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .network import NetworkParams, predict_noise

__all__ = [
    "DiffusionConfig",
    "NoiseSchedule",
    "DivergenceError",
    "linear_schedule",
    "q_sample",
    "loss_from_noise",
    "loss_simple",
    "posterior_mean",
    "ancestral_sample",
]


class DivergenceError(RuntimeError):
    """Sampling state exceeded the divergence guard."""

    def __init__(self, step: int, magnitude: float):
        super().__init__(
            f"sampling diverged at step t={step}: max |x| = {magnitude:.3e}"
        )
        self.step = step
        self.magnitude = magnitude


@dataclass(frozen=True)
class DiffusionConfig:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self) -> None:
        if not isinstance(self.timesteps, int) or isinstance(self.timesteps, bool):
            raise ValueError("diffusion config: timesteps must be an integer")
        if self.timesteps < 1:
            raise ValueError("diffusion config: timesteps must be >= 1")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ValueError(
                "diffusion config: need 0 < beta_start <= beta_end < 1, got "
                f"({self.beta_start}, {self.beta_end})"
            )

    @classmethod
    def from_dict(cls, obj: dict) -> "DiffusionConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"diffusion config: unknown field(s) {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class NoiseSchedule:
    """beta/alpha/alpha_bar/sigma arrays for steps 1..T, at index t-1."""

    timesteps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def _check_step(self, t) -> np.ndarray:
        t_arr = np.atleast_1d(np.asarray(t))
        if t_arr.min() < 1 or t_arr.max() > self.timesteps:
            raise ValueError(
                f"step index out of range [1, {self.timesteps}]: "
                f"{int(t_arr.min())}..{int(t_arr.max())}"
            )
        return t_arr


def linear_schedule(config: DiffusionConfig) -> NoiseSchedule:
    """Linearly spaced betas hitting both endpoints exactly."""
    t = config.timesteps
    if t == 1:
        beta = np.array([config.beta_start], dtype=np.float64)
    else:
        beta = np.linspace(config.beta_start, config.beta_end, t, dtype=np.float64)
    alpha = 1.0 - beta
    return NoiseSchedule(
        timesteps=t,
        beta=beta,
        alpha=alpha,
        alpha_bar=np.cumprod(alpha),
        sigma=np.sqrt(beta),
    )


def _per_sample(coefs: np.ndarray, ndim: int, dtype) -> np.ndarray:
    """Reshape per-sample coefficients (B,) to broadcast over (B, ...)."""
    return coefs.astype(dtype).reshape(coefs.shape + (1,) * (ndim - 1))


def q_sample(x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Forward-noised state: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    t_arr = schedule._check_step(t)
    abar = schedule.alpha_bar[t_arr - 1]
    if t_arr.shape == (1,):
        return float(np.sqrt(abar[0])) * x0 + float(np.sqrt(1.0 - abar[0])) * eps
    if t_arr.shape != (x0.shape[0],):
        raise ValueError(
            f"need one step per sample: t shape {t_arr.shape}, batch {x0.shape[0]}"
        )
    c_signal = _per_sample(np.sqrt(abar), x0.ndim, x0.dtype)
    c_noise = _per_sample(np.sqrt(1.0 - abar), x0.ndim, x0.dtype)
    return c_signal * x0 + c_noise * eps


def loss_from_noise(
    params: NetworkParams,
    x0: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    schedule: NoiseSchedule,
    *,
    predict_fn=None,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tape]:
    """Squared-error noise-recovery loss for a known (t, eps) draw.

    Returns the scalar loss (mean over every element of the batch) and the
    tape recording its computation.  ``predict_fn`` substitutes for the
    network (test seam).
    """
    predict = predict_fn or predict_noise
    x_t = q_sample(x0, t, eps, schedule)
    with Tape() as tape:
        if dropout_rng is not None:
            pred = predict(params, x_t, t, dropout_rng=dropout_rng)
        else:
            pred = predict(params, x_t, t)
        diff = ad.sub(ad.constant(eps), pred)
        loss = ad.reduce_mean(ad.mul(diff, diff))
    return loss, tape


def loss_simple(
    params: NetworkParams,
    x0: np.ndarray,
    rng: np.random.Generator,
    schedule: NoiseSchedule,
    *,
    predict_fn=None,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tape]:
    """Training loss: t ~ Uniform{1..T} per sample, eps ~ N(0, I)."""
    x0 = np.asarray(x0)
    if x0.ndim < 1 or x0.shape[0] < 1:
        raise ValueError("x0 batch must be non-empty")
    t = rng.integers(1, schedule.timesteps + 1, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape, dtype=x0.dtype)
    return loss_from_noise(
        params, x0, t, eps, schedule, predict_fn=predict_fn, dropout_rng=dropout_rng
    )


def posterior_mean(x_t: np.ndarray, t, eps_hat: np.ndarray, schedule: NoiseSchedule):
    """Reverse-step mean: (x_t - (1-alpha_t)/sqrt(1-abar_t) * eps_hat) / sqrt(alpha_t)."""
    x_t = np.asarray(x_t)
    eps_hat = np.asarray(eps_hat)
    if eps_hat.shape != x_t.shape:
        raise ValueError(f"eps_hat shape {eps_hat.shape} != x_t shape {x_t.shape}")
    t_arr = schedule._check_step(t)
    alpha = schedule.alpha[t_arr - 1]
    abar = schedule.alpha_bar[t_arr - 1]
    if t_arr.shape == (1,):
        coef = float((1.0 - alpha[0]) / np.sqrt(1.0 - abar[0]))
        return (x_t - coef * eps_hat) / float(np.sqrt(alpha[0]))
    if t_arr.shape != (x_t.shape[0],):
        raise ValueError(
            f"need one step per sample: t shape {t_arr.shape}, batch {x_t.shape[0]}"
        )
    coef = _per_sample((1.0 - alpha) / np.sqrt(1.0 - abar), x_t.ndim, x_t.dtype)
    inv_sqrt_alpha = _per_sample(1.0 / np.sqrt(alpha), x_t.ndim, x_t.dtype)
    return (x_t - coef * eps_hat) * inv_sqrt_alpha


_DIVERGENCE_LIMIT = 1e6


def ancestral_sample(
    params: NetworkParams,
    schedule: NoiseSchedule,
    n_samples: int,
    seed: int,
    *,
    predict_fn=None,
) -> np.ndarray:
    """Draw (n_samples, D, K) continuous records by reverse diffusion.

    Starts from standard normal x_T and applies T posterior-mean steps with
    sigma_t noise (none at t=1).  Deterministic given the seed; exactly one
    network evaluation per step.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    predict = predict_fn or predict_noise
    rng = np.random.default_rng(seed)
    dtype = params.dtype
    shape = (n_samples, params.num_attributes, params.num_categories)
    x = rng.standard_normal(shape, dtype=dtype)
    for t in range(schedule.timesteps, 0, -1):
        eps_hat = predict(params, x, t)
        if isinstance(eps_hat, Tensor):
            eps_hat = eps_hat.data
        x = posterior_mean(x, t, eps_hat, schedule)
        if t > 1:
            x = x + float(schedule.sigma[t - 1]) * rng.standard_normal(shape, dtype=dtype)
        peak = float(np.max(np.abs(x)))
        if not math.isfinite(peak) or peak > _DIVERGENCE_LIMIT:
            raise DivergenceError(step=t, magnitude=peak)
    return x
