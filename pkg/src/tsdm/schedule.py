"""Variance schedules and accelerated sampling subsequences.

Indices follow the 1-based convention used throughout the samplers:
step n runs from 1 to N, beta_at(n) is the noise variance added at step
n, and alpha_bar_at(n) is the cumulative signal ratio with the anchor
alpha_bar_at(0) == 1 so single-jump updates to the clean signal are
well-defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.05


@dataclass(frozen=True)
class VarianceSchedule:
    """Per-step noise variances and their cumulative signal ratios."""

    beta: np.ndarray
    alpha_bar: np.ndarray

    @classmethod
    def from_betas(cls, betas: np.ndarray) -> "VarianceSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a nonempty 1-D array")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("betas must lie strictly inside (0, 1)")
        if betas.size > 1 and np.any(np.diff(betas) <= 0):
            raise ValueError("betas must be strictly increasing")
        alpha_bar = np.cumprod(1.0 - betas)
        betas.flags.writeable = False
        alpha_bar.flags.writeable = False
        return cls(beta=betas, alpha_bar=alpha_bar)

    @property
    def N(self) -> int:
        return self.beta.size

    def beta_at(self, n: int) -> float:
        if not 1 <= n <= self.N:
            raise ValueError(f"step {n} outside 1..{self.N}")
        return float(self.beta[n - 1])

    def alpha_bar_at(self, n: int) -> float:
        if not 0 <= n <= self.N:
            raise ValueError(f"step {n} outside 0..{self.N}")
        return 1.0 if n == 0 else float(self.alpha_bar[n - 1])


def linear_schedule(
    n_steps: int,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> VarianceSchedule:
    """Linearly spaced betas, inclusive of both endpoints; N=1 keeps start."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if not 0.0 < beta_start < 1.0 or not 0.0 < beta_end < 1.0:
        raise ValueError("beta endpoints must lie in (0, 1)")
    if n_steps > 1 and beta_start >= beta_end:
        raise ValueError("beta_start must be below beta_end")
    if n_steps == 1:
        return VarianceSchedule.from_betas(np.array([beta_start]))
    return VarianceSchedule.from_betas(np.linspace(beta_start, beta_end, n_steps))


def ddpm_sigma(sched: VarianceSchedule, n: int) -> float:
    """Reverse-step standard deviation that makes the sampler the classic DDPM."""
    if not 2 <= n <= sched.N:
        raise ValueError(f"ddpm_sigma defined for 2..{sched.N}, got {n}")
    a_prev = sched.alpha_bar_at(n - 1)
    a_cur = sched.alpha_bar_at(n)
    return float(np.sqrt((1.0 - a_prev) / (1.0 - a_cur)) * np.sqrt(1.0 - a_cur / a_prev))


@dataclass(frozen=True)
class Subsequence:
    """Strictly increasing 1-based step indices ending at N."""

    tau: np.ndarray
    n_steps: int
    s: int = field(init=False)

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=np.int64)
        if tau.ndim != 1 or tau.size < 1:
            raise ValueError("tau must be a nonempty 1-D index array")
        if tau[0] < 1:
            raise ValueError("subsequence must start at or after step 1")
        if tau[-1] != self.n_steps:
            raise ValueError(f"subsequence must end at N={self.n_steps}")
        if tau.size > 1 and np.any(np.diff(tau) <= 0):
            raise ValueError("subsequence must be strictly increasing")
        tau.flags.writeable = False
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "s", int(tau.size))


def make_subsequence(n_steps: int, s: int, strategy: str = "uniform") -> Subsequence:
    """Pick s of the N steps for accelerated sampling, always keeping step N.

    "uniform" uses stride floor(N/s); "quadratic" clusters early steps near 1.
    """
    if not 1 <= s <= n_steps:
        raise ValueError(f"s must lie in 1..{n_steps}, got {s}")
    if strategy == "uniform":
        stride = n_steps // s
        tau = stride * np.arange(1, s + 1, dtype=np.int64)
        tau[-1] = n_steps
    elif strategy == "quadratic":
        tau = np.round(n_steps * (np.arange(1, s + 1) / s) ** 2).astype(np.int64)
        tau = np.maximum(tau, 1)
        tau[-1] = n_steps
        if tau.size > 1 and np.any(np.diff(tau) <= 0):
            raise ValueError("quadratic spacing collapses for this (N, s); use uniform")
    else:
        raise ValueError(f"unknown subsequence strategy {strategy!r}")
    return Subsequence(tau=tau, n_steps=n_steps)
