"""Collaborative optimization blocks: global (MTB), local (PCB) and their grouped fusion (GHIM).

All blocks map (b, C, h, w) -> (b, C, h, w). Scale sets are subsets of
{3, 5, 7}; the same set drives the depthwise kernel sizes of the
transformer block and the atrous rates / depthwise sizes of the
progressive convolution block.
"""

import numpy as np

from . import kernels as K
from .errors import DimensionError
from .nn import Conv2d, GatedConv, LayerNorm, Module, ModuleDict
from .tensor import concat, matmul, softmax, split, transpose

ALLOWED_SCALES = (3, 5, 7)


def check_scales(scales):
    scales = tuple(sorted(set(int(s) for s in scales)))
    if not scales or any(s not in ALLOWED_SCALES for s in scales):
        raise ValueError(f"scale set must be a nonempty subset of {ALLOWED_SCALES}, got {scales}")
    return scales


def _check_channels(x, channels, who):
    if x.ndim != 4 or x.shape[1] != channels:
        raise DimensionError(f"{who} expects (b, {channels}, h, w) input, got {x.shape}")


class PointwiseDepthwise(Module):
    """Per-scale 1x1 convolution followed by an n x n depthwise convolution."""

    def __init__(self, channels, scales, rng, dtype):
        super().__init__()
        self.scales = scales
        for n in scales:
            setattr(self, f"pw{n}", Conv2d(channels, channels, 1, rng=rng, dtype=dtype))
            setattr(self, f"dw{n}", Conv2d(channels, channels, n, groups=channels, rng=rng, dtype=dtype))

    def forward(self, x, n):
        return getattr(self, f"dw{n}")(getattr(self, f"pw{n}")(x))


class MTB(Module):
    """Multi-scale transformer block with channel-transposed attention.

    Attention maps are C x C, contracted over the HW spatial positions and
    scaled by 1/sqrt(HW). The most recent maps are kept in
    ``last_attention`` (one (b, C, C) array per scale) for inspection.
    """

    def __init__(self, channels, scales=ALLOWED_SCALES, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.scales = check_scales(scales)
        ns = len(self.scales)
        self.norm1 = LayerNorm(channels, dtype)
        self.q = PointwiseDepthwise(channels, self.scales, rng, dtype)
        self.k = PointwiseDepthwise(channels, self.scales, rng, dtype)
        self.v = PointwiseDepthwise(channels, self.scales, rng, dtype)
        self.attn_fuse = Conv2d(ns * channels, channels, 1, rng=rng, dtype=dtype)
        self.norm2 = LayerNorm(channels, dtype)
        # two independently weighted factors of the gated FFN
        self.ffn_gate = PointwiseDepthwise(channels, self.scales, rng, dtype)
        self.ffn_value = PointwiseDepthwise(channels, self.scales, rng, dtype)
        self.ffn_fuse = Conv2d(ns * channels, channels, 1, rng=rng, dtype=dtype)
        self.out = Conv2d(2 * channels, channels, 3, rng=rng, dtype=dtype)
        self.last_attention = []

    def attention(self, e):
        _check_channels(e, self.channels, "MTB")
        b, c, h, w = e.shape
        x = self.norm1(e)
        scale = 1.0 / np.sqrt(h * w)
        branches, maps = [], []
        for n in self.scales:
            q = self.q(x, n).reshape(b, c, h * w)
            k = transpose(self.k(x, n).reshape(b, c, h * w), (0, 2, 1))
            v = self.v(x, n).reshape(b, c, h * w)
            a = softmax(matmul(q, k) * scale, axis=-1)
            maps.append(a.data)
            branches.append(matmul(a, v).reshape(b, c, h, w))
        self.last_attention = maps
        return self.attn_fuse(concat(branches, axis=1)) + e

    def ffn(self, g1):
        x = self.norm2(g1)
        parts = [K.gelu(self.ffn_gate(x, n)) * self.ffn_value(x, n) for n in self.scales]
        return self.ffn_fuse(concat(parts, axis=1)) + g1

    def forward(self, e):
        g2 = self.ffn(self.attention(e))
        return self.out(concat([g2, e], axis=1)) + e


class LocalBranch(Module):
    """Atrous 3x3 (rate n) or depthwise n x n conv, then 1x1 -> GELU -> 1x1."""

    def __init__(self, channels, n, kind, rng, dtype):
        super().__init__()
        if kind == "atrous":
            self.conv = Conv2d(channels, channels, 3, dilation=n, rng=rng, dtype=dtype)
        else:
            self.conv = Conv2d(channels, channels, n, groups=channels, rng=rng, dtype=dtype)
        self.pw1 = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.pw2 = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)

    def forward(self, x):
        return self.pw2(K.gelu(self.pw1(self.conv(x))))


class ProgressiveStage(Module):
    """One PCB stage: branches at every scale, fused progressively against the smallest.

    With base scale s and other scales k: P_k = C3[E_s, E_k, x] and the stage
    output is C3[P_k..., E_s] + x.
    """

    def __init__(self, channels, scales, kind, rng, dtype):
        super().__init__()
        self.scales = scales
        self.base, self.others = scales[0], scales[1:]
        self.branch = ModuleDict({f"s{n}": LocalBranch(channels, n, kind, rng, dtype) for n in scales})
        self.prog = ModuleDict({f"s{k}": Conv2d(3 * channels, channels, 3, rng=rng, dtype=dtype)
                                for k in self.others})
        self.fuse = Conv2d((len(self.others) + 1) * channels, channels, 3, rng=rng, dtype=dtype)

    def branches(self, x):
        return {n: self.branch[f"s{n}"](x) for n in self.scales}

    def forward(self, x):
        feats = self.branches(x)
        base = feats[self.base]
        prog = [self.prog[f"s{k}"](concat([base, feats[k], x], axis=1)) for k in self.others]
        return self.fuse(concat(prog + [base], axis=1)) + x


class PCB(Module):
    """Two-stage progressive convolution block (atrous stage, then depthwise stage)."""

    def __init__(self, channels, scales=ALLOWED_SCALES, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.scales = check_scales(scales)
        self.stage1 = ProgressiveStage(channels, self.scales, "atrous", rng, dtype)
        self.stage2 = ProgressiveStage(channels, self.scales, "depthwise", rng, dtype)
        self.out = Conv2d(2 * channels, channels, 3, rng=rng, dtype=dtype)

    def forward(self, e):
        _check_channels(e, self.channels, "PCB")
        l2 = self.stage2(self.stage1(e))
        return self.out(concat([l2, e], axis=1)) + e


class GHIM(Module):
    """Group-wise hybrid interaction of a global and a local feature.

    ``fusion="add"`` fuses each group pair by addition; ``"cat"`` concatenates
    the pair and lets the per-group conv restore the group width.
    """

    groups = 4

    def __init__(self, channels, fusion="add", rng=None, dtype=np.float64):
        super().__init__()
        if channels % self.groups:
            raise DimensionError(f"GHIM needs channels divisible by {self.groups}, got {channels}")
        if fusion not in ("add", "cat"):
            raise ValueError(f"fusion must be 'add' or 'cat', got {fusion!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.fusion = fusion
        gw = channels // self.groups
        in_w = gw if fusion == "add" else 2 * gw
        self.group = ModuleDict({f"g{m}": Conv2d(in_w, gw, 3, rng=rng, dtype=dtype)
                                 for m in range(1, self.groups + 1)})
        self.mix = Conv2d(3 * channels, channels, 3, rng=rng, dtype=dtype)
        self.gate = GatedConv(channels, rng=rng, dtype=dtype)
        self.c3 = Conv2d(channels, channels, 3, rng=rng, dtype=dtype)
        self.c1 = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)

    def forward(self, g, l):
        if g.shape != l.shape:
            raise DimensionError(f"GHIM inputs differ in shape: {g.shape} vs {l.shape}")
        _check_channels(g, self.channels, "GHIM")
        fused = []
        for m, (gm, lm) in enumerate(zip(split(g, self.groups), split(l, self.groups)), start=1):
            pair = lm + gm if self.fusion == "add" else concat([lm, gm], axis=1)
            fused.append(self.group[f"g{m}"](pair))
        ft = self.mix(concat(fused + [g, l], axis=1))
        return self.c1(self.c3(self.gate(ft) * ft + ft))


class ConcatFuse(Module):
    """Plain concatenation + 3x3 conv; stands in for GHIM in ablations."""

    def __init__(self, channels, rng=None, dtype=np.float64):
        super().__init__()
        self.conv = Conv2d(2 * channels, channels, 3, rng=rng, dtype=dtype)

    def forward(self, g, l):
        return self.conv(concat([g, l], axis=1))


class COS(Module):
    """Per-level pipeline E -> (G, L, F).

    Disabled branches return None. With one of GPM/LRM disabled, F is the
    surviving branch; with both disabled F is E itself.
    """

    def __init__(self, channels, scales=ALLOWED_SCALES, fusion="add", gpm=True, lrm=True,
                 ghim=True, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.mtb = MTB(channels, scales, rng, dtype) if gpm else None
        self.pcb = PCB(channels, scales, rng, dtype) if lrm else None
        if gpm and lrm:
            self.fuse = GHIM(channels, fusion, rng, dtype) if ghim else ConcatFuse(channels, rng, dtype)
        else:
            self.fuse = None

    def forward(self, e):
        _check_channels(e, self.channels, "COS")
        g = self.mtb(e) if self.mtb is not None else None
        l = self.pcb(e) if self.pcb is not None else None
        if g is not None and l is not None:
            f = self.fuse(g, l)
        elif g is not None:
            f = g
        elif l is not None:
            f = l
        else:
            f = e
        return g, l, f
