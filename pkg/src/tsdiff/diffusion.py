"""Denoising diffusion over latent vectors: schedule, noise net, loss, sampling."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore
from .config import Config
from .errors import DataError


@dataclass(frozen=True)
class DiffusionSchedule:
    """Noise levels beta_k for k=1..L with the derived alpha products.

    `alpha_bar[k]` is the cumulative product for step k, with the
    convention alpha_bar[0] = 1.
    """

    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise DataError("betas must be a non-empty 1-D array")
        if np.any(b <= 0) or np.any(b >= 1):
            raise DataError("betas must lie strictly in (0, 1)")
        object.__setattr__(self, "betas", b)

    @classmethod
    def linear(cls, steps: int, beta_start: float = 1e-4,
               beta_end: float = 0.02) -> "DiffusionSchedule":
        return cls(np.linspace(beta_start, beta_end, steps))

    @classmethod
    def from_config(cls, cfg: Config) -> "DiffusionSchedule":
        return cls.linear(cfg.diff_steps, cfg.beta_start, cfg.beta_end)

    @property
    def steps(self) -> int:
        return self.betas.size

    @cached_property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @cached_property
    def alpha_bar(self) -> np.ndarray:
        return np.concatenate([[1.0], np.cumprod(self.alphas)])

    def check_step(self, k: int) -> None:
        if not (1 <= k <= self.steps):
            raise DataError(f"diffusion step {k} out of range [1, {self.steps}]")


def init_params(ps: ParameterStore, cfg: Config, rng: np.random.Generator) -> None:
    H, W = cfg.hidden, cfg.noise_hidden
    ps.add_normal("eps.w1", (H + cfg.step_embed, W), rng)
    ps.add_zeros("eps.b1", (W,))
    ps.add_normal("eps.w2", (W, W), rng)
    ps.add_zeros("eps.b2", (W,))
    ps.add_normal("eps.w3", (W, H), rng)
    ps.add_zeros("eps.b3", (H,))


def step_embedding(k: int, width: int) -> np.ndarray:
    """Sinusoidal features of the step index."""
    half = width // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = k * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def noise_pred(pv, h, k: int, cfg: Config, dropout_plan=None):
    """The noise network's prediction for the latent h at step k.

    Accepts (H,) vectors or (B, H) batches.
    """
    emb = step_embedding(k, cfg.step_embed)
    hv = ad.value_of(h)
    if hv.ndim == 2:
        emb = np.broadcast_to(emb, (hv.shape[0], emb.size))
    inp = ad.concat([h, emb], axis=-1)
    a = ad.tanh(ad.add(ad.matmul(inp, pv["eps.w1"]), pv["eps.b1"]))
    if dropout_plan is not None:
        a = ad.apply_dropout(a, dropout_plan.get("eps.h1"))
    a = ad.tanh(ad.add(ad.matmul(a, pv["eps.w2"]), pv["eps.b2"]))
    if dropout_plan is not None:
        a = ad.apply_dropout(a, dropout_plan.get("eps.h2"))
    return ad.add(ad.matmul(a, pv["eps.w3"]), pv["eps.b3"])


def q_sample(h0, k: int, eps, sched: DiffusionSchedule):
    """Closed-form forward sample: sqrt(abar_k) h0 + sqrt(1-abar_k) eps."""
    sched.check_step(k)
    abar = sched.alpha_bar[k]
    return ad.add(ad.mul(h0, np.sqrt(abar)), ad.mul(eps, np.sqrt(1.0 - abar)))


def diffusion_loss(pv, h0, sched: DiffusionSchedule, rng: np.random.Generator,
                   cfg: Config, dropout_plan=None):
    """Noise-matching loss at a uniformly drawn step: ||eps - eps_q(h_k, k)||^2."""
    k = int(rng.integers(1, sched.steps + 1))
    eps = rng.standard_normal(ad.value_of(h0).shape)
    h_k = q_sample(h0, k, eps, sched)
    pred = noise_pred(pv, h_k, k, cfg, dropout_plan)
    return ad.sumsq(ad.sub(eps, pred))


def denoise_step(pv, h_k, k: int, sched: DiffusionSchedule,
                 rng: np.random.Generator, cfg: Config):
    """One reverse step h_k -> h_{k-1}; deterministic at k=1.

    Mean (1/sqrt(alpha_k)) (h_k - beta_k/sqrt(1-abar_k) * eps_q(h_k, k)),
    variance beta_k (1-abar_{k-1}) / (1-abar_k) (the exact posterior choice).
    """
    sched.check_step(k)
    beta = sched.betas[k - 1]
    alpha = sched.alphas[k - 1]
    abar = sched.alpha_bar[k]
    abar_prev = sched.alpha_bar[k - 1]
    pred = noise_pred(pv, h_k, k, cfg)
    mean = ad.mul(ad.sub(h_k, ad.mul(pred, beta / np.sqrt(1.0 - abar))),
                  1.0 / np.sqrt(alpha))
    if k == 1:
        return mean
    var = beta * (1.0 - abar_prev) / (1.0 - abar)
    z = rng.standard_normal(ad.value_of(h_k).shape)
    return ad.add(mean, ad.mul(z, np.sqrt(var)))


def sample_latent(pv, sched: DiffusionSchedule, rng: np.random.Generator,
                  cfg: Config) -> np.ndarray:
    """Draw h_L ~ N(0, I) and run the full reverse chain down to h_0."""
    h = rng.standard_normal(cfg.hidden)
    for k in range(sched.steps, 0, -1):
        h = denoise_step(pv, h, k, sched, rng, cfg)
    return h
