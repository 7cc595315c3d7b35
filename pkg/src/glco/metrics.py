"""Binary-segmentation evaluation: MAE, PR/F curves, adaptive and weighted F, S- and E-measure.

All functions take a prediction map ``pred`` in [0, 1] and a binary mask
``gt`` of the same extent, as plain arrays.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ContractError, DataError, DimensionError

BETA2 = 0.3
ALPHA = 0.5
EPS = np.finfo(np.float64).eps
N_THRESHOLDS = 256

# weighted F-measure constants (Gaussian dependency window and distance decay)
WF_SIGMA = 5.0
WF_WINDOW = 7
WF_DECAY_DIST = 5.0
WF_BETA = 1.0


def check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and mask {gt.shape} differ in extent")
    if pred.size == 0:
        raise DimensionError("empty maps")
    if pred.min() < 0 or pred.max() > 1:
        raise ContractError("prediction must lie in [0, 1]")
    if not np.isin(gt, (0, 1)).all():
        raise ContractError("ground truth must be binary")
    return pred, gt.astype(bool)


def mae(pred, gt):
    pred, gt = check_pair(pred, gt)
    return float(np.abs(pred - gt).mean())


def f_beta(precision, recall, beta2=BETA2):
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    num = (1 + beta2) * precision * recall
    den = beta2 * precision + recall
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def _precision_recall(tp, n_pred, n_gt):
    tp, n_pred = np.asarray(tp, dtype=np.float64), np.asarray(n_pred, dtype=np.float64)
    # empty prediction -> precision 1; empty ground truth -> recall 1
    precision = np.divide(tp, n_pred, out=np.ones_like(tp), where=n_pred > 0)
    recall = tp / n_gt if n_gt > 0 else np.ones_like(tp)
    return precision, recall


@dataclass
class CurveTable:
    thresholds: np.ndarray
    tp: np.ndarray
    n_pred: np.ndarray
    n_gt: int
    precision: np.ndarray
    recall: np.ndarray
    fmeasure: np.ndarray


def thresholds():
    return np.arange(N_THRESHOLDS) / 255.0


def pr_curve(pred, gt):
    """Precision, recall and F for binarizations ``pred >= k/255``, k = 0..255."""
    pred, gt = check_pair(pred, gt)
    t = thresholds()
    fg = np.sort(pred[gt])
    allp = np.sort(pred.ravel())
    tp = fg.size - np.searchsorted(fg, t, side="left")
    n_pred = allp.size - np.searchsorted(allp, t, side="left")
    n_gt = int(gt.sum())
    precision, recall = _precision_recall(tp, n_pred, n_gt)
    return CurveTable(t, tp, n_pred, n_gt, precision, recall, f_beta(precision, recall))


def adaptive_threshold(pred):
    return min(1.0, 2.0 * float(np.mean(pred)))


def adaptive_f(pred, gt):
    """F_beta at threshold min(1, 2 mean(P)); zero-valued pixels never count as foreground."""
    pred, gt = check_pair(pred, gt)
    binary = (pred >= adaptive_threshold(pred)) & (pred > 0)
    tp = np.count_nonzero(binary & gt)
    precision, recall = _precision_recall(tp, np.count_nonzero(binary), int(gt.sum()))
    return float(f_beta(precision, recall))


def _gauss_window(size=WF_WINDOW, sigma=WF_SIGMA):
    r = (size - 1) / 2.0
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    k = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    return k / k.sum()


def _nearest_foreground_error(err, gt):
    iy, ix = ndimage.distance_transform_edt(~gt, return_distances=False, return_indices=True)
    out = err.copy()
    out[~gt] = err[iy[~gt], ix[~gt]]
    return out


def weighted_f(pred, gt):
    """Dependency-weighted F-measure.

    Background errors inherit the error of their nearest foreground pixel and
    are smoothed by a Gaussian window; each error is then discounted near the
    object and amplified (up to x2) far from it. All-background masks score
    1 - mean(P).
    """
    pred, gt = check_pair(pred, gt)
    if not gt.any():
        return float(1.0 - pred.mean())
    g = gt.astype(np.float64)
    err = np.abs(pred - g)
    bg = ~gt
    dist = ndimage.distance_transform_edt(bg)
    # equidistant nearest pixels are chosen by scan order, so average both scan
    # orders to keep the score invariant to transposition
    et = 0.5 * (_nearest_foreground_error(err, gt) + _nearest_foreground_error(err.T, gt.T).T)
    ea = ndimage.convolve(et, _gauss_window(), mode="constant", cval=0.0)
    min_e = err.copy()
    take = gt & (ea < err)
    min_e[take] = ea[take]
    b = np.ones_like(g)
    b[bg] = 2.0 - np.exp(np.log(0.5) / WF_DECAY_DIST * dist[bg])
    ew = min_e * b
    tpw = g.sum() - ew[gt].sum()
    fpw = ew[bg].sum()
    recall = 1.0 - ew[gt].mean()
    precision = tpw / (EPS + tpw + fpw)
    q = (1 + WF_BETA ** 2) * recall * precision / (EPS + recall + WF_BETA ** 2 * precision)
    return float(np.clip(q, 0.0, 1.0))


def _object_score(x_vals):
    if x_vals.size == 0:
        return 0.0
    mu = x_vals.mean()
    sd = x_vals.std(ddof=1) if x_vals.size > 1 else 0.0
    return 2.0 * mu / (mu * mu + 1.0 + sd + EPS)


def s_object(pred, gt):
    fg = pred[gt]
    bg = 1.0 - pred[~gt]
    u = gt.mean()
    return u * _object_score(fg) + (1 - u) * _object_score(bg)


def _ssim(p, g):
    n = p.size
    if n == 0:
        return 0.0
    x, y = p.mean(), g.mean()
    dof = max(n - 1, 1)
    sx = ((p - x) ** 2).sum() / dof
    sy = ((g - y) ** 2).sum() / dof
    sxy = ((p - x) * (g - y)).sum() / dof
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def centroid(gt):
    """(row, col) split point: rounded foreground centroid, 1-based like the reference toolbox."""
    h, w = gt.shape
    if not gt.any():
        return int(round(h / 2)) + 1, int(round(w / 2)) + 1
    ys, xs = np.nonzero(gt)
    return int(np.round(ys.mean())) + 1, int(np.round(xs.mean())) + 1


def s_region(pred, gt):
    h, w = gt.shape
    y, x = centroid(gt)
    area = h * w
    g = gt.astype(np.float64)
    parts = [
        (slice(0, y), slice(0, x)),
        (slice(0, y), slice(x, w)),
        (slice(y, h), slice(0, x)),
        (slice(y, h), slice(x, w)),
    ]
    score = 0.0
    for rs, cs in parts:
        pp, gg = pred[rs, cs], g[rs, cs]
        score += pp.size / area * _ssim(pp, gg)
    return score


def s_measure(pred, gt, alpha=ALPHA):
    """Structure measure alpha * S_object + (1 - alpha) * S_region, clamped to [0, 1]."""
    pred, gt = check_pair(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    q = alpha * s_object(pred, gt) + (1 - alpha) * s_region(pred, gt)
    return float(np.clip(q, 0.0, 1.0))


def alignment(phi_p, phi_g):
    return 2.0 * phi_p * phi_g / (phi_p * phi_p + phi_g * phi_g + EPS)


def e_measure(pred, gt):
    """Mean enhanced alignment ((xi + 1)^2 / 4) of mean-centred P and G.

    All-background masks score mean(1 - P); all-foreground masks mean(P).
    """
    pred, gt = check_pair(pred, gt)
    g = gt.astype(np.float64)
    if not gt.any():
        return float((1.0 - pred).mean())
    if gt.all():
        return float(pred.mean())
    xi = alignment(pred - pred.mean(), g - g.mean())
    return float(((xi + 1.0) ** 2 / 4.0).mean())


METRIC_NAMES = ("mae", "adaptive_f", "weighted_f", "s_measure", "e_measure")


def evaluate_pair(pred, gt):
    return {
        "mae": mae(pred, gt),
        "adaptive_f": adaptive_f(pred, gt),
        "weighted_f": weighted_f(pred, gt),
        "s_measure": s_measure(pred, gt),
        "e_measure": e_measure(pred, gt),
    }


def load_pair(pred_path, gt_path):
    """Read an 8-bit prediction (divided by 255) and a mask (> 127 is foreground)."""
    from .imageio import read_pnm
    from .kernels import resize_array

    pred = read_pnm(pred_path).astype(np.float64) / 255.0
    gt = read_pnm(gt_path) > 127
    if pred.ndim != 2 or gt.ndim != 2:
        raise DataError(f"{pred_path} / {gt_path}: expected single-channel images")
    if pred.shape != gt.shape:
        pred = np.clip(resize_array(pred, gt.shape), 0.0, 1.0)
    return pred, gt


def evaluate_directory(pred_dir, gt_dir, out_dir=None):
    """Score every mask in ``gt_dir`` against the same-named file in ``pred_dir``.

    Returns ``(rows, means, curves)``; with ``out_dir`` also writes
    metrics.csv, pr_curve.csv and fm_curve.csv there.
    """
    names = sorted(n for n in os.listdir(gt_dir) if n.lower().endswith((".pgm", ".pnm")))
    if not names:
        raise DataError(f"no ground-truth masks found in {gt_dir}")
    preds = set(os.listdir(pred_dir))
    missing = [n for n in names if n not in preds]
    if missing:
        raise DataError(f"predictions missing for: {', '.join(missing)}")
    rows = []
    prec, rec = np.zeros(N_THRESHOLDS), np.zeros(N_THRESHOLDS)
    for name in names:
        pred, gt = load_pair(os.path.join(pred_dir, name), os.path.join(gt_dir, name))
        row = {"name": name, **evaluate_pair(pred, gt)}
        rows.append(row)
        curve = pr_curve(pred, gt)
        prec += curve.precision
        rec += curve.recall
    means = {k: float(np.mean([r[k] for r in rows])) for k in METRIC_NAMES}
    prec /= len(names)
    rec /= len(names)
    curves = {"threshold": thresholds(), "precision": prec, "recall": rec, "fmeasure": f_beta(prec, rec)}
    if out_dir is not None:
        write_reports(out_dir, rows, means, curves)
    return rows, means, curves


def write_reports(out_dir, rows, means, curves):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("name",) + METRIC_NAMES)
        for r in rows:
            w.writerow([r["name"]] + [repr(r[k]) for k in METRIC_NAMES])
        w.writerow(["mean"] + [repr(means[k]) for k in METRIC_NAMES])
    with open(os.path.join(out_dir, "pr_curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("threshold", "precision", "recall"))
        for t, p, r in zip(curves["threshold"], curves["precision"], curves["recall"]):
            w.writerow((repr(float(t)), repr(float(p)), repr(float(r))))
    with open(os.path.join(out_dir, "fm_curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("threshold", "fmeasure"))
        for t, f in zip(curves["threshold"], curves["fmeasure"]):
            w.writerow((repr(float(t)), repr(float(f))))
