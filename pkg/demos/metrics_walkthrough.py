"""Scoring predicted masks: MAE, adaptive/weighted F, S-measure, E-measure and the PR curve.

Run: python demos/metrics_walkthrough.py
"""

import numpy as np

from glco import metrics as M

gt = np.zeros((32, 32), dtype=bool)
gt[8:24, 10:22] = True

cases = {
    "perfect": gt.astype(float),
    "shifted by 2 px": np.roll(gt, 2, axis=1).astype(float),
    "blurry": np.clip(gt * 0.7 + 0.15 + np.random.default_rng(0).normal(0, 0.1, gt.shape), 0, 1),
    "inverted": 1.0 - gt,
    "all 0.5": np.full(gt.shape, 0.5),
}

print(f"{'prediction':<18}" + "".join(f"{n:>12}" for n in M.METRIC_NAMES))
for name, pred in cases.items():
    scores = M.evaluate_pair(pred, gt)
    print(f"{name:<18}" + "".join(f"{scores[n]:12.4f}" for n in M.METRIC_NAMES))

table = M.pr_curve(cases["blurry"], gt)
best = int(np.argmax(table.fmeasure))
print(f"\nblurry map: best F {table.fmeasure[best]:.4f} at threshold {table.thresholds[best]:.3f}; "
      f"adaptive threshold {M.adaptive_threshold(cases['blurry']):.3f}")
