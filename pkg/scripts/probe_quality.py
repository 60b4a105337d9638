"""Compare candidate training configs on the recovery-quality targets.

Dev tool: trains (or loads from tests/.cache) candidate denoisers and
reports, per candidate, the quantities the calibrated thresholds depend on:

  - nonrandom-missing imputation RMSE vs the linear-interpolation baseline
    over a grid of subsequence lengths s and resampling counts R
  - masked-error trend over R in {1, 2, 3}
  - step-attack detection precision/recall and weighted-RMSE ratio

Usage: python3 scripts/probe_quality.py TAG WIDTH EPOCHS [TAG WIDTH EPOCHS ...]
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
from conftest import _cached_train

from tsdm.denoiser import DenoiserConfig, TrainConfig
from tsdm.metrics import baseline_interpolate, masked_rmse, weighted_rmse
from tsdm.pipeline import TsdmConfig, recover
from tsdm.schedule import linear_schedule, make_subsequence
from tsdm.stage1 import GuidanceConfig
from tsdm.stage2 import ImputeConfig
from tsdm.threatsim import (AttackSpec, MaskSpec, SynthSpec, inject_fdia,
                            make_loss_mask, synth_dataset)

SCHED = linear_schedule(100)
SPEC = SynthSpec(mode="steady", M=8, T=64, seed=42)
NM_SPEC = MaskSpec(kind="nonrandom_missing", target_ratio=0.3,
                   channels=(1, 4, 6), t_start=7, t_end=58)


def pipeline_cfg(s=10, omega=1.0, R=2, seed=0):
    tau = make_subsequence(100, s)
    return TsdmConfig(
        guidance=GuidanceConfig(tau=tau, omega=omega, seed=seed),
        impute=ImputeConfig(tau=tau, R=R, seed=seed),
    )


def main() -> None:
    args = sys.argv[1:]
    if not args or len(args) % 3:
        print(__doc__)
        raise SystemExit(2)
    candidates = [(args[k], int(args[k + 1]), int(args[k + 2]))
                  for k in range(0, len(args), 3)]

    data = synth_dataset(SPEC, 2032)
    held = data[2000:]

    for tag, width, epochs in candidates:
        dcfg = DenoiserConfig(channels_in=8, base_width=width, depth=2,
                              time_embed_dim=16, kernel=3)
        tcfg = TrainConfig(epochs=epochs, batch_size=32, learning_rate=2e-3,
                           seed=42)
        params, mean, std = _cached_train(tag, lambda: data[:2000], dcfg,
                                          tcfg, SCHED, norm_channelwise=True)
        print(f"\n=== {tag} (width={width}, epochs={epochs}) ===", flush=True)

        # --- NM imputation vs baseline over the (s, R) grid ---
        mask = make_loss_mask(8, 64, NM_SPEC)
        for s, R in ((10, 1), (10, 2), (10, 4), (20, 1), (20, 2)):
            sq_b = sq_t = 0.0
            for k, truth in enumerate(held[:6]):
                base = baseline_interpolate(truth, mask)
                res = recover(params, truth, mask,
                              pipeline_cfg(s=s, R=R, seed=200 + k), mean, std)
                sel = mask == 0.0
                sq_b += np.sum((base[sel] - truth[sel]) ** 2)
                sq_t += np.sum((res.x_tilde[sel] - truth[sel]) ** 2)
            print(f"NM s={s:2d} R={R}: ratio={np.sqrt(sq_t / sq_b):.4f}"
                  f"  (target <= 0.8)", flush=True)

        # --- R trend, pooled over 4 windows x 2 seeds ---
        for s in (10, 20):
            errs = []
            for R in (1, 2, 3):
                pooled = 0.0
                for j in (2, 3, 4, 5):
                    for sd in (41, 57):
                        res = recover(params, held[j], mask,
                                      pipeline_cfg(s=s, R=R, seed=sd + j),
                                      mean, std)
                        pooled += masked_rmse(held[j], res.x_tilde, mask) ** 2
                errs.append(np.sqrt(pooled / 8))
            ok = "OK " if errs[1] <= errs[0] else "BAD"
            print(f"R trend s={s:2d}: R1={errs[0]:.4f} R2={errs[1]:.4f} "
                  f"R3={errs[2]:.4f}  {ok}", flush=True)

        # --- step attacks at 3 std on 2 of 8 channels ---
        chans = [(0, 3), (1, 5), (2, 6), (4, 7), (0, 5), (2, 7)]
        sq_corr = sq_tsdm = 0.0
        tp = fp = fn_ = 0
        for k, truth in enumerate(held[:6]):
            atk = AttackSpec(kind="step", channels=chans[k], t_start=0,
                             t_end=64, magnitude=3.0)
            y, gt = inject_fdia(truth, atk, std_ref=std)
            res = recover(params, y, None, pipeline_cfg(seed=100 + k),
                          mean, std)
            flags = 1.0 - res.outlier_mask
            sq_corr += np.sum((y - truth) ** 2)
            sq_tsdm += np.sum((res.x_tilde - truth) ** 2)
            tp += int(np.sum((flags == 1) & gt))
            fp += int(np.sum((flags == 1) & ~gt))
            fn_ += int(np.sum((flags == 0) & gt))
        prec = tp / (tp + fp) if tp + fp else 1.0
        rec_ = tp / (tp + fn_) if tp + fn_ else 1.0
        print(f"attack3 pooled : P={prec:.3f} R={rec_:.3f} "
              f"rmse ratio={np.sqrt(sq_tsdm / sq_corr):.4f}"
              f"  (targets P,R >= 0.7, ratio <= 0.5)", flush=True)


if __name__ == "__main__":
    main()
