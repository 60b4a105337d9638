"""Diffusion forward process and accelerated reverse sampling.

The reverse update over a subsequence tau is, per adjacent pair
(tau_{i-1}, tau_i) with cumulative ratios a' = alpha_bar(tau_{i-1}) and
a = alpha_bar(tau_i):

    x' = sqrt(1-a')/sqrt(1-a) * x + Gamma * mu_bar(x) + Gamma * sigma_bar * eps

where mu_bar is the clean-signal estimate, Gamma the mixing coefficient
sqrt(a') - sqrt(1-a') sqrt(a)/sqrt(1-a), and sigma_bar^2 the closed-form
optimal variance ((1-a)/a) * (1 - E||eps_pred||^2 / d) clamped at zero.
The expectation is estimated per call from the provided prediction
(batch mean when a batch is given). detailed_step is the same update
expanded in (x, eps_pred, eps_draw); the two agree to rounding error.

The final step to tau_1 is closed by estimate_x0, not another update.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .denoiser import DenoiserParams, predict_noise
from .schedule import Subsequence, VarianceSchedule


@dataclass(frozen=True)
class StepCoefficients:
    a_prev: float
    a_cur: float
    gamma: float
    sigma_bar: float

    def __post_init__(self):
        if not self.a_prev > self.a_cur:
            raise ValueError("a_prev must exceed a_cur (schedule monotonicity)")
        if not math.isfinite(self.gamma):
            raise ValueError("Gamma must be finite")
        if self.sigma_bar < 0:
            raise ValueError("sigma_bar must be nonnegative")


@dataclass(frozen=True)
class TraceRecord:
    tau: int
    mean_norm: float
    sigma_bar: float
    elapsed_ms: float


@dataclass
class SamplerTrace:
    records: list = field(default_factory=list)

    def add(self, tau: int, mean_norm: float, sigma_bar: float,
            elapsed_ms: float) -> None:
        self.records.append(TraceRecord(int(tau), float(mean_norm),
                                        float(sigma_bar), float(elapsed_ms)))

    def to_csv(self) -> str:
        lines = ["step,sigma_bar,elapsed_ms"]
        for r in self.records:
            lines.append(f"{r.tau},{r.sigma_bar:.12g},{r.elapsed_ms:.12g}")
        return "\n".join(lines) + "\n"


def forward_diffuse(x0: np.ndarray, n: int, eps: np.ndarray,
                    sched: VarianceSchedule) -> np.ndarray:
    """x_n = sqrt(alpha_bar_n) x0 + sqrt(1 - alpha_bar_n) eps; n=0 is x0."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {eps.shape}")
    a = sched.alpha_bar_at(n)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def estimate_x0(x_n: np.ndarray, eps_pred: np.ndarray, n: int,
                sched: VarianceSchedule) -> np.ndarray:
    """Clean-signal estimate (x_n - sqrt(1-a) eps_pred) / sqrt(a)."""
    x_n = np.asarray(x_n, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    if x_n.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch {x_n.shape} vs {eps_pred.shape}")
    if not 1 <= n <= sched.N:
        raise ValueError(f"step {n} outside 1..{sched.N}")
    a = sched.alpha_bar_at(n)
    return (x_n - np.sqrt(1.0 - a) * eps_pred) / np.sqrt(a)


def optimal_variance(eps_pred: np.ndarray, n: int,
                     sched: VarianceSchedule) -> float:
    """Closed-form residual variance of the clean-signal estimate.

    sigma_bar^2 = ((1-a)/a) (1 - E||eps_pred||^2 / d) with d the element
    count of one sample; the expectation is the mean over the given
    sample or batch. Clamped at zero for miscalibrated predictors.
    """
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    if not 1 <= n <= sched.N:
        raise ValueError(f"step {n} outside 1..{sched.N}")
    a = sched.alpha_bar_at(n)
    with np.errstate(over="raise"):
        msq = float(np.mean(eps_pred**2))
    return max((1.0 - a) / a * (1.0 - msq), 0.0)


def capital_gamma(i: int, sched: VarianceSchedule, tau: Subsequence) -> float:
    """Mixing coefficient for the jump tau_i -> tau_{i-1}; defined for i >= 2."""
    if not 2 <= i <= tau.s:
        raise ValueError(f"subsequence position {i} outside 2..{tau.s}")
    a_prev = sched.alpha_bar_at(int(tau.tau[i - 2]))
    a_cur = sched.alpha_bar_at(int(tau.tau[i - 1]))
    return math.sqrt(a_prev) - math.sqrt(1.0 - a_prev) * math.sqrt(a_cur) / math.sqrt(
        1.0 - a_cur)


def step_coefficients(i: int, sched: VarianceSchedule, tau: Subsequence,
                      eps_pred: np.ndarray) -> StepCoefficients:
    a_prev = sched.alpha_bar_at(int(tau.tau[i - 2]))
    a_cur = sched.alpha_bar_at(int(tau.tau[i - 1]))
    return StepCoefficients(
        a_prev=a_prev,
        a_cur=a_cur,
        gamma=capital_gamma(i, sched, tau),
        sigma_bar=math.sqrt(optimal_variance(eps_pred, int(tau.tau[i - 1]), sched)),
    )


def improved_step(x_cur: np.ndarray, eps_pred: np.ndarray, i: int,
                  sched: VarianceSchedule, tau: Subsequence,
                  eps_draw: np.ndarray) -> np.ndarray:
    """One accelerated reverse update written through the x0 estimate."""
    c = step_coefficients(i, sched, tau, eps_pred)
    mu = estimate_x0(x_cur, eps_pred, int(tau.tau[i - 1]), sched)
    lead = math.sqrt(1.0 - c.a_prev) / math.sqrt(1.0 - c.a_cur)
    return lead * x_cur + c.gamma * mu + c.gamma * c.sigma_bar * eps_draw


def detailed_step(x_cur: np.ndarray, eps_pred: np.ndarray, i: int,
                  sched: VarianceSchedule, tau: Subsequence,
                  eps_draw: np.ndarray) -> np.ndarray:
    """The same update expanded directly in (x, eps_pred, eps_draw)."""
    c = step_coefficients(i, sched, tau, eps_pred)
    x_coef = math.sqrt(c.a_prev) / math.sqrt(c.a_cur)
    e_coef = math.sqrt(1.0 - c.a_prev) - math.sqrt(c.a_prev) * math.sqrt(
        1.0 - c.a_cur) / math.sqrt(c.a_cur)
    return x_coef * x_cur + c.gamma * c.sigma_bar * eps_draw + e_coef * eps_pred


def unconditional_sample(params: DenoiserParams, shape: tuple,
                         sched: VarianceSchedule, tau: Subsequence,
                         rng: np.random.Generator, trace: bool = False):
    """Generate from pure noise down the subsequence; close with estimate_x0."""
    x = rng.standard_normal(shape)
    rec = SamplerTrace() if trace else None
    for i in range(tau.s, 1, -1):
        t0 = time.perf_counter()
        t_cur = int(tau.tau[i - 1])
        eps_pred = predict_noise(params, x, t_cur)
        eps_draw = rng.standard_normal(shape)
        x = improved_step(x, eps_pred, i, sched, tau, eps_draw)
        if not np.all(np.isfinite(x)):
            raise RuntimeError(f"non-finite latent at step tau={t_cur}")
        if rec is not None:
            mu = estimate_x0(x, eps_pred, t_cur, sched)
            sb = math.sqrt(optimal_variance(eps_pred, t_cur, sched))
            rec.add(t_cur, float(np.linalg.norm(mu)), sb,
                    (time.perf_counter() - t0) * 1e3)
    t0 = time.perf_counter()
    t1 = int(tau.tau[0])
    eps_pred = predict_noise(params, x, t1)
    x0 = estimate_x0(x, eps_pred, t1, sched)
    if not np.all(np.isfinite(x0)):
        raise RuntimeError(f"non-finite latent at step tau={t1}")
    if rec is not None:
        rec.add(t1, float(np.linalg.norm(x0)), 0.0,
                (time.perf_counter() - t0) * 1e3)
        return x0, rec
    return x0
