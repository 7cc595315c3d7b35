"""Central-difference verification of analytic gradients."""

import numpy as np

from .errors import ContractError
from .tensor import Tensor, backward, no_grad


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return np.abs(analytic - numeric) / denom


def _scalar(out):
    if not isinstance(out, Tensor) or out.ndim != 0:
        raise ContractError("gradcheck needs a scalar-valued function")
    return float(out.data)


def _pick(shape, samples, rng):
    n = int(np.prod(shape))
    if samples is None or samples >= n:
        return range(n)
    return rng.choice(n, size=samples, replace=False)


def gradcheck(f, x, h=1e-5, samples=None, seed=0):
    """Max relative error between backprop and central differences for ``f`` at ``x``.

    ``f`` maps a Tensor to a 0-d Tensor. ``samples`` limits the number of
    coordinates probed (chosen with ``seed``); None probes all of them.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if not np.isfinite(base).all():
        raise ContractError("gradcheck input must be finite")
    xt = Tensor(base.copy(), requires_grad=True)
    out = f(xt)
    _scalar(out)
    backward(out)
    analytic = np.zeros_like(base) if xt.grad is None else np.asarray(xt.grad)

    flat = base.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in _pick(base.shape, samples, np.random.default_rng(seed)):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f(Tensor(base.copy())))
            flat[i] = orig - h
            fm = _scalar(f(Tensor(base.copy())))
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            worst = max(worst, float(relative_error(analytic.reshape(-1)[i], numeric)))
    return worst


def gradcheck_params(f, params, h=1e-5, samples=8, seed=0, largest=False):
    """Like :func:`gradcheck` but perturbs parameter tensors in place.

    ``f`` takes no arguments and closes over ``params``. Returns the worst
    relative error over ``samples`` random coordinates of every parameter.
    With ``largest`` each tensor is instead probed at its largest-magnitude
    analytic coordinate, where central differences are best conditioned.
    """
    params = list(params)
    out = f()
    _scalar(out)
    backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else np.array(p.grad) for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            coords = [int(np.argmax(np.abs(a)))] if largest else _pick(p.shape, samples, rng)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + h
                fp = _scalar(f())
                flat[i] = orig - h
                fm = _scalar(f())
                flat[i] = orig
                numeric = (fp - fm) / (2 * h)
                worst = max(worst, float(relative_error(a.reshape(-1)[i], numeric)))
    return worst
