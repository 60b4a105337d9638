"""End-to-end two-stage recovery orchestration.

Stage 1 produces a guided estimate and flags untrusted entries via the
3-sigma test; externally known missing entries (NaNs or an explicit
mask) are force-flagged on top. If the untrusted fraction stays below
the branch threshold the stage-1 estimate is returned; otherwise stage 2
re-imputes the flagged entries with the trusted ones pinned.

All model arithmetic runs in normalized units (per-channel mean/std from
the training checkpoint); outputs are denormalized.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserParams
from .schedule import (DEFAULT_BETA_END, DEFAULT_BETA_START,
                       VarianceSchedule, linear_schedule)
from .stage1 import GuidanceConfig, detect_outliers, stage1_recover
from .stage2 import ImputeConfig, stage2_impute

STAGE1_ONLY = "stage1_only"
STAGE1_PLUS_STAGE2 = "stage1_plus_stage2"


@dataclass(frozen=True)
class TsdmConfig:
    guidance: GuidanceConfig
    impute: ImputeConfig
    outlier_branch_threshold: float = 0.1
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END

    def __post_init__(self):
        if not 0.0 < self.outlier_branch_threshold <= 1.0:
            raise ValueError("outlier_branch_threshold must be in (0, 1]")
        if self.guidance.tau.n_steps != self.impute.tau.n_steps:
            raise ValueError(
                "guidance and impute subsequences disagree on total steps")

    def schedule(self) -> VarianceSchedule:
        return linear_schedule(self.guidance.tau.n_steps, self.beta_start,
                               self.beta_end)


@dataclass(frozen=True)
class RecoveryResult:
    x_tilde: np.ndarray
    outlier_mask: np.ndarray  # 1 = trusted
    stage_taken: str
    outlier_fraction: float
    traces: dict


@dataclass(frozen=True)
class WindowFailure:
    index: int
    error: str


def recover(params: DenoiserParams, y0: np.ndarray, known_mask,
            cfg: TsdmConfig, norm_mean=None, norm_std=None) -> RecoveryResult:
    """Run the two-stage recovery on one measurement window."""
    y0 = np.asarray(y0, dtype=np.float64)
    if y0.ndim != 2:
        raise ValueError(f"expected a channels x time matrix, got {y0.shape}")
    M = y0.shape[0]
    mean = np.zeros(M) if norm_mean is None else np.asarray(norm_mean,
                                                            dtype=np.float64)
    std = np.ones(M) if norm_std is None else np.asarray(norm_std,
                                                         dtype=np.float64)
    if mean.shape != (M,) or std.shape != (M,) or np.any(std <= 0):
        raise ValueError("normalization stats must be positive per-channel")
    if known_mask is None:
        known = np.ones_like(y0)
    else:
        known = np.asarray(known_mask, dtype=np.float64)
        if known.shape != y0.shape:
            raise ValueError(
                f"mask shape {known.shape} does not match {y0.shape}")
        if not np.all((known == 0.0) | (known == 1.0)):
            raise ValueError("mask must be binary (0/1)")
        known = known.copy()
    known[~np.isfinite(y0)] = 0.0  # NaN sentinels count as missing
    yn = (y0 - mean[:, None]) / std[:, None]
    yn = np.where(known == 1.0, yn, 0.0)  # placeholder = channel mean

    sched = cfg.schedule()
    try:
        x0p, trace1 = stage1_recover(params, yn, cfg.guidance, sched)
    except (RuntimeError, FloatingPointError) as e:
        raise RuntimeError(f"stage1: {e}") from e
    report = detect_outliers(x0p, yn)
    mask = report.mask * known  # force-flag externally missing entries
    fraction = float(1.0 - mask.mean())

    if fraction < cfg.outlier_branch_threshold:
        out_n = x0p
        stage = STAGE1_ONLY
    else:
        try:
            out_n = stage2_impute(params, yn, mask, cfg.impute, sched)
        except (RuntimeError, FloatingPointError) as e:
            raise RuntimeError(f"stage2: {e}") from e
        stage = STAGE1_PLUS_STAGE2
    x_tilde = out_n * std[:, None] + mean[:, None]
    return RecoveryResult(x_tilde=x_tilde, outlier_mask=mask,
                          stage_taken=stage, outlier_fraction=fraction,
                          traces={"stage1": trace1})


def _with_seed(cfg: TsdmConfig, index: int) -> TsdmConfig:
    return dataclasses.replace(
        cfg,
        guidance=dataclasses.replace(cfg.guidance,
                                     seed=cfg.guidance.seed ^ index),
        impute=dataclasses.replace(cfg.impute, seed=cfg.impute.seed ^ index),
    )


def recover_batch(params: DenoiserParams, windows, cfg: TsdmConfig,
                  parallelism: int = 1, norm_mean=None, norm_std=None):
    """Recover many windows; order-preserving, seeds derived seed^index.

    Failures are reported per index as WindowFailure entries without
    aborting the remaining windows.
    """
    windows = [np.asarray(w, dtype=np.float64) for w in windows]
    if windows and any(w.shape != windows[0].shape for w in windows):
        raise ValueError("windows must share one shape")
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")

    def run(idx_window):
        idx, window = idx_window
        try:
            return recover(params, window, None, _with_seed(cfg, idx),
                           norm_mean=norm_mean, norm_std=norm_std)
        except Exception as e:  # noqa: BLE001 - reported per index
            return WindowFailure(index=idx, error=str(e))

    if parallelism == 1:
        return [run(iw) for iw in enumerate(windows)]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(run, enumerate(windows)))
