"""Reduced-width finite-difference battery covering every primitive, block and loss.

Each entry builds a small 64-bit problem, reduces its output to a scalar
through a fixed random projection and compares backprop against central
differences, both for the input and for a sample of every parameter.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .cos import GHIM, MTB, PCB
from .decoder import ArdStep, GLCONet, HeadD6, ModelConfig
from .gradcheck import gradcheck, gradcheck_params
from .objective import total_loss, weight_map, weighted_bce, weighted_iou
from .tensor import Tensor, matmul, softmax, tsum

THRESHOLD = 1e-4
WIDTH = 16
EXTENT = 8


@dataclass
class BatteryResult:
    name: str
    max_error: float
    seconds: float

    @property
    def ok(self):
        return self.max_error < THRESHOLD


def _project(out, rng):
    r = rng.normal(size=out.shape)
    return tsum(out * r)


def _check(fn, x, params=(), samples=24, param_samples=3, seed=0, largest=False):
    """Worst error over input coordinates and sampled parameter coordinates."""
    worst = gradcheck(fn, x, samples=samples, seed=seed)
    params = list(params)
    if params:
        xt = Tensor(np.array(x, dtype=np.float64))
        worst = max(worst, gradcheck_params(lambda: fn(xt), params, samples=param_samples,
                                            seed=seed, largest=largest))
    return worst


def _feature(rng, c=WIDTH, n=EXTENT, b=1):
    return rng.normal(size=(b, c, n, n))


def _case_matmul(rng):
    a = rng.normal(size=(2, 4, 5))
    b = Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
    err = _check(lambda t: _project(matmul(t, b), np.random.default_rng(1)), a)
    return max(err, gradcheck(lambda t: _project(matmul(Tensor(a), t), np.random.default_rng(1)), b.data))


def _case_softmax(rng):
    return _check(lambda t: _project(softmax(t, axis=-1), np.random.default_rng(2)),
                  rng.normal(size=(2, 6, 7)))


def _conv_case(in_ch, out_ch, k, stride=1, dilation=1, groups=1):
    def run(rng):
        w = Tensor(rng.normal(size=(out_ch, in_ch // groups, k, k)) * 0.3, requires_grad=True)
        bias = Tensor(rng.normal(size=out_ch), requires_grad=True)
        x = rng.normal(size=(2, in_ch, 9, 9))

        def fn(t):
            y = K.conv2d(t, w, bias, stride=stride, dilation=dilation, groups=groups)
            return _project(y, np.random.default_rng(3))
        return _check(fn, x, [w, bias], param_samples=6)
    return run


def _case_layer_norm(rng):
    gain = Tensor(rng.normal(size=WIDTH), requires_grad=True)
    off = Tensor(rng.normal(size=WIDTH), requires_grad=True)
    return _check(lambda t: _project(K.layer_norm(t, gain, off), np.random.default_rng(4)),
                  _feature(rng), [gain, off])


def _case_gelu(rng):
    return _check(lambda t: _project(K.gelu(t), np.random.default_rng(5)), _feature(rng))


def _case_gated_conv(rng):
    w = Tensor(rng.normal(size=(WIDTH, WIDTH, 3, 3)) * 0.1, requires_grad=True)
    b = Tensor(rng.normal(size=WIDTH) * 0.1, requires_grad=True)
    return _check(lambda t: _project(K.gated_conv(t, w, b), np.random.default_rng(6)),
                  _feature(rng), [w, b])


def _case_pixel_shuffle(rng):
    return _check(lambda t: _project(K.pixel_shuffle(t, 2), np.random.default_rng(7)),
                  _feature(rng, c=4 * WIDTH, n=4))


def _module_case(module, x, seed):
    return _check(lambda t: _project(module(t), np.random.default_rng(seed)), x, module.parameters())


def _case_mtb(rng):
    return _module_case(MTB(WIDTH, rng=rng), _feature(rng), 8)


def _case_pcb(rng):
    return _module_case(PCB(WIDTH, rng=rng), _feature(rng), 9)


def _case_ghim(rng):
    m = GHIM(WIDTH, rng=rng)
    l = Tensor(_feature(rng))
    return _check(lambda t: _project(m(t, l), np.random.default_rng(10)), _feature(rng),
                  m.parameters())


def _case_ard_step(rng):
    m = ArdStep(WIDTH, (2, 4), rng=rng)
    d1 = Tensor(rng.normal(size=(1, 1, EXTENT // 2, EXTENT // 2)), requires_grad=True)
    d2 = Tensor(rng.normal(size=(1, 1, EXTENT // 4, EXTENT // 4)))
    f = _feature(rng)
    err = _check(lambda t: _project(m(t, d1, d2), np.random.default_rng(11)), f, m.parameters())
    ft = Tensor(f)
    return max(err, gradcheck(lambda t: _project(m(ft, t, d2), np.random.default_rng(11)), d1.data))


def _case_head_d6(rng):
    m = HeadD6(WIDTH, (3, 5, 7), rng=rng)
    g = Tensor(_feature(rng, n=2))
    return _check(lambda t: tsum(m(t, g) * 0.5), _feature(rng, n=2), m.parameters())


def _mask(rng, shape):
    g = (rng.random(shape) < 0.4).astype(np.float64)
    return g


def _case_weighted_bce(rng):
    g = _mask(rng, (2, 1, 16, 16))
    w = weight_map(g)
    return _check(lambda t: weighted_bce(t, g, w), rng.normal(size=g.shape))


def _case_weighted_iou(rng):
    g = _mask(rng, (2, 1, 16, 16))
    w = weight_map(g)
    return _check(lambda t: weighted_iou(t, g, w), rng.uniform(0.05, 0.95, size=g.shape))


def _case_total_loss(rng):
    # the full network has ~300 parameter tensors; each is probed once, at its
    # largest gradient entry (tiny entries sit inside finite-difference noise)
    cfg = ModelConfig(channels=WIDTH, encoder_widths=(8, 8, 16, 16, 16))
    net = GLCONet(cfg, seed=int(rng.integers(1 << 30)))
    g = np.zeros((1, 1, 32, 32))
    g[0, 0, 8:20, 10:24] = 1
    x = rng.normal(size=(1, 3, 32, 32))
    return _check(lambda t: total_loss(net(t), g).total, x, net.parameters(),
                  samples=12, largest=True)


CASES = {
    "matmul": _case_matmul,
    "softmax": _case_softmax,
    "conv_dense": _conv_case(6, 5, 3),
    "conv_pointwise": _conv_case(6, 5, 1),
    "conv_strided": _conv_case(6, 5, 3, stride=2),
    "conv_atrous": _conv_case(6, 5, 3, dilation=3),
    "conv_depthwise": _conv_case(6, 6, 7, groups=6),
    "conv_grouped": _conv_case(6, 4, 5, groups=2),
    "layer_norm": _case_layer_norm,
    "gelu": _case_gelu,
    "gated_conv": _case_gated_conv,
    "pixel_shuffle": _case_pixel_shuffle,
    "mtb": _case_mtb,
    "pcb": _case_pcb,
    "ghim": _case_ghim,
    "ard_step": _case_ard_step,
    "head_d6": _case_head_d6,
    "weighted_bce": _case_weighted_bce,
    "weighted_iou": _case_weighted_iou,
    "total_loss": _case_total_loss,
}


def run_battery(names=None, seed=0, log=None):
    """Run the selected cases (all by default); returns a list of BatteryResult."""
    results = []
    for name in names or CASES:
        t0 = time.perf_counter()
        err = CASES[name](np.random.default_rng([seed, len(results)]))
        res = BatteryResult(name, err, time.perf_counter() - t0)
        results.append(res)
        if log is not None:
            log(format_result(res))
    return results


def format_result(res):
    return f"{res.name:<16} max_rel_err {res.max_error:.3e}  {'ok' if res.ok else 'FAIL'}  ({res.seconds:.1f}s)"
