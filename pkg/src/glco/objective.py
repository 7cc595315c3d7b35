"""Deep-supervision loss (weighted BCE + weighted IoU per output) and Adam."""

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import ContractError, DimensionError
from .tensor import Tensor, as_tensor, mul, softplus, tsum

BOUNDARY_KERNEL = 15
BOUNDARY_GAIN = 5.0


def _check_binary(g):
    g = np.asarray(g)
    if not np.isin(g, (0, 1)).all():
        raise ContractError("ground-truth mask must be binary (values 0 or 1)")
    return g


def weight_map(gt):
    """Boundary emphasis 5 * |meanpool15(G) - G|; zero far from edges of the mask."""
    g = _check_binary(gt).astype(np.float64)
    shaped = g.reshape((1,) * (4 - g.ndim) + g.shape) if g.ndim < 4 else g
    pooled = K.avg_pool2d(Tensor(shaped), BOUNDARY_KERNEL).data.reshape(g.shape)
    return BOUNDARY_GAIN * np.abs(pooled - g)


def _axes(x):
    # per-sample reduction for (b, c, h, w); whole array otherwise
    return (1, 2, 3) if x.ndim == 4 else None


def _batch_mean(per_sample):
    return per_sample.mean() if per_sample.ndim else per_sample


def _constants(x, gt, w):
    g = _check_binary(gt)
    if g.shape != x.shape:
        raise DimensionError(f"prediction {x.shape} and mask {g.shape} differ in shape")
    w = np.zeros(g.shape) if w is None else np.asarray(w)
    if w.shape != g.shape:
        raise DimensionError(f"weight map {w.shape} and mask {g.shape} differ in shape")
    return g.astype(x.dtype), (1.0 + w).astype(x.dtype)


def weighted_bce(logits, gt, w=None):
    """Pixel-weighted binary cross-entropy, evaluated in logit space.

    -sum (1+w) [G log P + (1-G) log(1-P)] / sum (1+w) with P = sigmoid(logits),
    using softplus(x) - G x for the bracket.
    """
    x = as_tensor(logits)
    g, wt = _constants(x, gt, w)
    axes = _axes(x)
    per_pixel = softplus(x) - mul(x, g)
    loss = tsum(mul(per_pixel, wt), axes) / wt.sum(axis=axes)
    return _batch_mean(loss)


def weighted_iou(prob, gt, w=None):
    """1 - sum (1+w) G P / sum (1+w) (G + P - G P). Empty union counts as a perfect match."""
    p = as_tensor(prob)
    if p.data.min() < 0 or p.data.max() > 1:
        raise ContractError("weighted_iou expects probabilities in [0, 1]")
    g, wt = _constants(p, gt, w)
    axes = _axes(p)
    inter = tsum(mul(p, wt * g), axes)
    union = tsum(mul(p, wt * (1.0 - g)), axes) + (wt * g).sum(axis=axes)
    valid = (union.data > 0).astype(p.dtype)
    ratio = inter / (union + (1.0 - valid))
    return _batch_mean((1.0 - ratio) * valid)


@dataclass
class LossReport:
    bce: dict = field(default_factory=dict)
    iou: dict = field(default_factory=dict)
    total: Tensor = None

    def level(self, i):
        return self.bce[i] + self.iou[i]

    def as_row(self, levels=(2, 3, 4, 5, 6)):
        return ([float(self.total.data)] + [self.bce.get(i, float("nan")) for i in levels]
                + [self.iou.get(i, float("nan")) for i in levels])


def total_loss(outputs, gt):
    """Sum of weighted BCE + weighted IoU over every supervised map.

    ``outputs`` maps level -> logits (b, 1, h_i, w_i); each map is bilinearly
    upsampled to the mask resolution before the loss. ``gt`` is (b, 1, H, W).
    """
    gt = _check_binary(gt)
    if gt.ndim != 4 or gt.shape[1] != 1:
        raise DimensionError(f"mask must be (b, 1, H, W), got {gt.shape}")
    w = weight_map(gt)
    report = LossReport()
    total = None
    for level in sorted(outputs):
        up = K.upsample_bilinear(outputs[level], gt.shape[-2:])
        bce = weighted_bce(up, gt, w)
        iou = weighted_iou(K.sigmoid(up), gt, w)
        report.bce[level] = float(bce.data)
        report.iou[level] = float(iou.data)
        term = bce + iou
        total = term if total is None else total + term
    report.total = total
    return report


def step_decay(epoch, base=1e-4, factor=0.1, every=60):
    """Learning rate after ``epoch`` whole epochs: base * factor ** (epoch // every)."""
    return base * factor ** (epoch // every)


class Adam:
    """Adam with bias correction; ``lr`` is set externally by the schedule."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        grads = []
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif g.shape != p.shape:
                raise DimensionError(f"gradient {g.shape} does not match parameter {p.shape}")
            grads.append(g)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)

    def state_arrays(self):
        out = {"optim.t": np.array(float(self.t))}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"optim.m.{i}"] = m.copy()
            out[f"optim.v.{i}"] = v.copy()
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["optim.t"])
        for i in range(len(self.params)):
            self.m[i][...] = arrays[f"optim.m.{i}"]
            self.v[i][...] = arrays[f"optim.v.{i}"]
