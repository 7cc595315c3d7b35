"""Differentiable image kernels on (batch, channel, height, width) tensors."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, _result, as_tensor, sigmoid

GELU_K = np.sqrt(2.0 / np.pi)
GELU_C = 0.044715
LN_EPS = 1e-6


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    dilation: int = 1
    groups: int = 1

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise DimensionError(f"kernel must be odd and positive, got {self.kernel}")
        if self.stride < 1 or self.dilation < 1 or self.groups < 1:
            raise DimensionError("stride, dilation and groups must be >= 1")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise DimensionError(
                f"channels {self.in_channels}->{self.out_channels} not divisible by groups {self.groups}"
            )

    @property
    def padding(self):
        return self.dilation * (self.kernel - 1) // 2

    @property
    def depthwise(self):
        return self.groups == self.in_channels == self.out_channels

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels // self.groups, self.kernel, self.kernel)

    def output_extent(self, n):
        return (n + 2 * self.padding - self.dilation * (self.kernel - 1) - 1) // self.stride + 1


def _windows(xp, kh, kw, stride, dilation, ho, wo):
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh * kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        r = i * dilation
        for j in range(kw):
            s = j * dilation
            cols[:, :, i * kw + j] = xp[:, :, r:r + stride * (ho - 1) + 1:stride, s:s + stride * (wo - 1) + 1:stride]
    return cols


def conv2d(x, weight, bias=None, stride=1, dilation=1, groups=1, padding=None):
    """Zero-padded cross-correlation. ``padding=None`` means extent-preserving."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x.shape}, {weight.shape}")
    b, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c % groups or o % groups or c // groups != cg:
        raise DimensionError(f"input has {c} channels but weight {weight.shape} with groups={groups}")
    if padding is None:
        padding = dilation * (kh - 1) // 2
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"input {h}x{w} too small for kernel {kh}x{kw} dilation {dilation}")
    og = o // groups
    kk = kh * kw
    L = ho * wo
    xd = x.data
    pointwise = kk == 1 and stride == 1 and padding == 0
    if pointwise:
        xp = xd
        cols = xd.reshape(b, groups, cg, L)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        cols = _windows(xp, kh, kw, stride, dilation, ho, wo).reshape(b, groups, cg * kk, L)
    wm = weight.data.reshape(groups, og, cg * kk)
    out = (wm @ cols).reshape(b, o, ho, wo)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise DimensionError(f"bias shape {bias.shape} does not match {o} output channels")
        out = out + bias.data[:, None, None]
        parents.append(bias)

    def bwd(g):
        gm = g.reshape(b, groups, og, L)
        dw = (gm @ np.swapaxes(cols, -1, -2)).sum(axis=0).reshape(weight.shape) if weight.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = np.swapaxes(wm, -1, -2) @ gm
            if pointwise:
                dx = dcols.reshape(x.shape)
            else:
                dcols = dcols.reshape(b, c, kk, ho, wo)
                dxp = np.zeros(xp.shape, dtype=xp.dtype)
                for i in range(kh):
                    r = i * dilation
                    for j in range(kw):
                        s = j * dilation
                        dxp[:, :, r:r + stride * (ho - 1) + 1:stride, s:s + stride * (wo - 1) + 1:stride] += dcols[:, :, i * kw + j]
                dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _result(out, "conv2d", parents, bwd)


def layer_norm(x, gain, offset, eps=LN_EPS):
    """Normalize across channels at every (batch, pixel), then scale and shift per channel."""
    x, gain, offset = as_tensor(x), as_tensor(gain), as_tensor(offset)
    c = x.shape[1]
    if gain.shape != (c,) or offset.shape != (c,):
        raise DimensionError(f"layer_norm affine params must have shape ({c},)")
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data[None, :, None, None]
    out = xhat * gd + offset.data[None, :, None, None]

    def bwd(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _result(out, "layer_norm", (x, gain, offset), bwd)


def gelu(x):
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = as_tensor(x)
    xd = x.data
    t = np.tanh(GELU_K * (xd + GELU_C * xd ** 3))
    out = 0.5 * xd * (1.0 + t)

    def bwd(g):
        dt = (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * dt),)

    return _result(out, "gelu", (x,), bwd)


def gated_conv(x, weight, bias=None):
    """3x3 convolution squashed to (0, 1); used as a multiplicative gate."""
    if weight.shape[-1] != 3 or weight.shape[-2] != 3:
        raise DimensionError("gated convolution uses a 3x3 kernel")
    return sigmoid(conv2d(x, weight, bias))


def reverse_attention(d):
    """1 - sigmoid(d): weight for pixels a coarser map calls background."""
    return 1.0 - sigmoid(d)


def pixel_shuffle(x, r):
    x = as_tensor(x)
    b, c, h, w = x.shape
    if c % (r * r):
        raise DimensionError(f"{c} channels not divisible by r^2={r * r}")
    oc = c // (r * r)
    out = x.data.reshape(b, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, oc, h * r, w * r)

    def bwd(g):
        return (g.reshape(b, oc, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, c, h, w),)

    return _result(out, "pixel_shuffle", (x,), bwd)


def pixel_unshuffle(x, r):
    x = as_tensor(x)
    b, c, h, w = x.shape
    if h % r or w % r:
        raise DimensionError(f"spatial extent {h}x{w} not divisible by {r}")
    oh, ow = h // r, w // r
    out = x.data.reshape(b, c, oh, r, ow, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, c * r * r, oh, ow)

    def bwd(g):
        return (g.reshape(b, c, r, r, oh, ow).transpose(0, 1, 4, 2, 5, 3).reshape(b, c, h, w),)

    return _result(out, "pixel_unshuffle", (x,), bwd)


@lru_cache(maxsize=None)
def interp_matrix(n_in, n_out):
    """Row-stochastic (n_out, n_in) matrix for align_corners=False linear resampling."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(src), n_in - 1)
        i1 = i0 + 1 if i0 < n_in - 1 else i0
        lam = src - i0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    m.setflags(write=False)
    return m


def upsample_bilinear(x, size):
    x = as_tensor(x)
    h, w = x.shape[-2:]
    th, tw = size
    if th < 1 or tw < 1:
        raise DimensionError(f"target size must be positive, got {size}")
    if (th, tw) == (h, w):
        return x
    mh = interp_matrix(h, th).astype(x.dtype, copy=False)
    mw = interp_matrix(w, tw).astype(x.dtype, copy=False)
    out = mh @ x.data @ mw.T

    def bwd(g):
        return (mh.T @ g @ mw,)

    return _result(out, "upsample_bilinear", (x,), bwd)


def resize_array(arr, size):
    """Bilinear resize of a plain (..., h, w) array."""
    h, w = arr.shape[-2:]
    if (h, w) == tuple(size):
        return np.asarray(arr, dtype=np.float64)
    return interp_matrix(h, size[0]) @ np.asarray(arr, dtype=np.float64) @ interp_matrix(w, size[1]).T


def avg_pool2d(x, kernel, stride=1):
    """Mean pooling with zero padding; padded cells count toward the divisor."""
    x = as_tensor(x)
    c = x.shape[1]
    weight = Tensor(np.full((c, 1, kernel, kernel), 1.0 / (kernel * kernel), dtype=x.dtype))
    return conv2d(x, weight, stride=stride, groups=c, padding=(kernel - 1) // 2)
