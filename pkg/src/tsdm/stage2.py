"""Diffusion-based masked imputation with resampling (stage 2).

Given trusted entries (mask=1) and entries to impute (mask=0), each
reverse step composes three updates:

    known part:  x^K = sqrt(a') y0 + sqrt(1-a') eps1        (diffuse_known)
    missing part: x^G = accelerated reverse update of x     (detailed step)
    combine:     x'  = mask * x^K + (1-mask) * x^G          (combine_masked)

and, on all but the last of R inner passes, renoises the combined latent
back to level tau_i so the next pass re-denoises it. The loop renoises
with the exact forward kernel between the two adjacent subsequence
levels, x = sqrt(a_i/a_{i-1}) x' + sqrt(1 - a_i/a_{i-1}) eps2, which
keeps repeated passes level-consistent under subsequence jumps and
reduces to the single-step form sqrt(1-beta) x' + sqrt(beta) eps2
(resample_step) when the subsequence stride is 1. The final estimate
pins observed entries to sqrt(alpha_bar(tau_1)) y0 and fills the rest
with the clean-signal estimate. Missing-entry values of y0 are
zero-filled up front and never read.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserParams, predict_noise
from .sampler import detailed_step, estimate_x0
from .schedule import Subsequence, VarianceSchedule


@dataclass(frozen=True)
class ImputeConfig:
    tau: Subsequence
    R: int = 2
    seed: int = 0
    rescale_observed: bool = False

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("resampling count R must be at least 1")


def diffuse_known(y0: np.ndarray, i: int, sched: VarianceSchedule,
                  tau: Subsequence, eps1: np.ndarray) -> np.ndarray:
    """Forward-diffuse the trusted data to level tau_{i-1}."""
    if not 2 <= i <= tau.s:
        raise ValueError(f"subsequence position {i} outside 2..{tau.s}")
    y0 = np.asarray(y0, dtype=np.float64)
    eps1 = np.asarray(eps1, dtype=np.float64)
    if y0.shape != eps1.shape:
        raise ValueError(f"shape mismatch {y0.shape} vs {eps1.shape}")
    a_prev = sched.alpha_bar_at(int(tau.tau[i - 2]))
    return np.sqrt(a_prev) * y0 + np.sqrt(1.0 - a_prev) * eps1


def combine_masked(known: np.ndarray, generated: np.ndarray,
                   mask: np.ndarray) -> np.ndarray:
    """Elementwise select: known where mask=1, generated where mask=0."""
    known = np.asarray(known, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if not (known.shape == generated.shape == mask.shape):
        raise ValueError(
            f"shape mismatch {known.shape}/{generated.shape}/{mask.shape}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValueError("mask must be binary (0/1)")
    return np.where(mask == 1.0, known, generated)


def resample_step(x_prev: np.ndarray, i: int, sched: VarianceSchedule,
                  tau: Subsequence, eps2: np.ndarray) -> np.ndarray:
    """Renoise one single-step level: sqrt(1-beta) x + sqrt(beta) eps."""
    if not 1 <= i <= tau.s:
        raise ValueError(f"subsequence position {i} outside 1..{tau.s}")
    x_prev = np.asarray(x_prev, dtype=np.float64)
    eps2 = np.asarray(eps2, dtype=np.float64)
    if x_prev.shape != eps2.shape:
        raise ValueError(f"shape mismatch {x_prev.shape} vs {eps2.shape}")
    beta = sched.beta_at(int(tau.tau[i - 1]))
    return np.sqrt(1.0 - beta) * x_prev + np.sqrt(beta) * eps2


def renoise_to_level(x_prev: np.ndarray, i: int, sched: VarianceSchedule,
                     tau: Subsequence, eps2: np.ndarray) -> np.ndarray:
    """Renoise from level tau_{i-1} back to tau_i with the forward kernel.

    Uses the compound ratio a_{tau_i}/a_{tau_{i-1}}, so a renoised latent
    sits at exactly the level the next denoising pass expects even when
    the subsequence jumps several schedule steps. Equals resample_step
    when tau_i - tau_{i-1} == 1.
    """
    if not 2 <= i <= tau.s:
        raise ValueError(f"subsequence position {i} outside 2..{tau.s}")
    x_prev = np.asarray(x_prev, dtype=np.float64)
    eps2 = np.asarray(eps2, dtype=np.float64)
    if x_prev.shape != eps2.shape:
        raise ValueError(f"shape mismatch {x_prev.shape} vs {eps2.shape}")
    a_cur = sched.alpha_bar_at(int(tau.tau[i - 1]))
    a_prev = sched.alpha_bar_at(int(tau.tau[i - 2]))
    ratio = a_cur / a_prev
    return np.sqrt(ratio) * x_prev + np.sqrt(1.0 - ratio) * eps2


def stage2_impute(params: DenoiserParams, y0: np.ndarray, mask: np.ndarray,
                  cfg: ImputeConfig, sched: VarianceSchedule) -> np.ndarray:
    """Impute mask=0 entries of y0 by masked reverse diffusion."""
    y0 = np.asarray(y0, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if y0.shape != mask.shape:
        raise ValueError(f"shape mismatch {y0.shape} vs {mask.shape}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValueError("mask must be binary (0/1)")
    # Missing entries are never read; zero-fill keeps arithmetic finite
    # even when they arrive as NaN sentinels.
    y0 = np.where(mask == 1.0, y0, 0.0)
    if not np.all(np.isfinite(y0)):
        raise ValueError("observed entries must be finite")
    tau = cfg.tau
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal(y0.shape)
    for i in range(tau.s, 1, -1):
        t_cur = int(tau.tau[i - 1])
        for r in range(1, cfg.R + 1):
            eps1 = rng.standard_normal(y0.shape)
            known = diffuse_known(y0, i, sched, tau, eps1)
            eps_pred = predict_noise(params, x, t_cur)
            eps_draw = rng.standard_normal(y0.shape)
            generated = detailed_step(x, eps_pred, i, sched, tau, eps_draw)
            x = combine_masked(known, generated, mask)
            if not np.all(np.isfinite(x)):
                raise RuntimeError(f"non-finite latent at step tau={t_cur}")
            if r < cfg.R:
                eps2 = rng.standard_normal(y0.shape)
                x = renoise_to_level(x, i, sched, tau, eps2)
    t1 = int(tau.tau[0])
    eps_pred = predict_noise(params, x, t1)
    mu = estimate_x0(x, eps_pred, t1, sched)
    a1 = sched.alpha_bar_at(t1)
    known_final = np.sqrt(a1) * y0
    if cfg.rescale_observed:
        known_final = y0
    out = np.where(mask == 1.0, known_final, mu)
    if not np.all(np.isfinite(out)):
        raise RuntimeError(f"non-finite latent at step tau={t1}")
    return out
