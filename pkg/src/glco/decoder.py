"""Encoder stub, D6 head, adjacent reverse decoder and the assembled network."""

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .cos import COS, MTB, check_scales
from .errors import ConfigError, DimensionError
from .nn import Conv2d, ConvGelu, LayerNorm, Module, ModuleDict
from .tensor import Tensor, broadcast_to, concat, no_grad

LEVELS = (2, 3, 4, 5)
OUTPUT_LEVELS = (2, 3, 4, 5, 6)
# resolution factor from each coarser map to the level that consumes it
# (D6 sits at E5's resolution, so level 5 sees it at factor 1)
ARD_INPUTS = {5: ((6, 1),), 4: ((5, 2), (6, 2)), 3: ((4, 2), (5, 4)), 2: ((3, 2), (4, 4))}


@dataclass
class ModelConfig:
    channels: int = 128
    scales: tuple = (3, 5, 7)
    fusion: str = "add"
    gpm: bool = True
    lrm: bool = True
    ghim: bool = True
    ard: bool = True
    mtb_head: bool = True
    expand_mode: str = "shuffle"
    encoder_widths: tuple = field(default=(16, 32, 64, 128, 160))
    dtype: type = np.float64

    def __post_init__(self):
        self.scales = check_scales(self.scales)
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        if len(self.encoder_widths) != 5:
            raise ConfigError("encoder needs exactly five stage widths")
        if self.expand_mode not in ("shuffle", "bilinear"):
            raise ConfigError(f"expand_mode must be 'shuffle' or 'bilinear', got {self.expand_mode!r}")
        if self.fusion not in ("add", "cat"):
            raise ConfigError(f"fusion must be 'add' or 'cat', got {self.fusion!r}")
        if self.channels % 4:
            raise ConfigError("channels must be divisible by 4")


class EncoderStub(Module):
    """Five stride-2 stages (3x3 s2 conv + GELU, 3x3 conv + GELU, channel LayerNorm).

    E_i is at 1/2^i scale. The per-stage normalisation keeps deep stages at
    unit scale; without it ten GELU layers shrink E5 to ~1e-4.
    """

    def __init__(self, widths=(16, 32, 64, 128, 160), in_channels=3, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        prev = in_channels
        for i, w in enumerate(widths, start=1):
            setattr(self, f"stage{i}", ModuleDict({
                "down": ConvGelu(prev, w, 3, stride=2, rng=rng, dtype=dtype),
                "conv": ConvGelu(w, w, 3, rng=rng, dtype=dtype),
                "norm": LayerNorm(w, dtype),
            }))
            prev = w
        self.widths = tuple(widths)

    def forward(self, x):
        feats = []
        for i in range(1, 6):
            stage = getattr(self, f"stage{i}")
            x = stage["norm"](stage["conv"](stage["down"](x)))
            feats.append(x)
        return feats


class HeadD6(Module):
    """Coarse map D6 = C3 C1 MTB(C1[E5, G5]); without the MTB it is C3 C1 of the reduced concat."""

    def __init__(self, channels, scales, use_mtb=True, rng=None, dtype=np.float64):
        super().__init__()
        self.reduce = Conv2d(2 * channels, channels, 1, rng=rng, dtype=dtype)
        self.mtb = MTB(channels, scales, rng, dtype) if use_mtb else None
        self.c1 = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.c3 = Conv2d(channels, 1, 3, rng=rng, dtype=dtype)

    def forward(self, e5, g5):
        if e5.shape != g5.shape:
            raise DimensionError(f"head inputs differ in shape: {e5.shape} vs {g5.shape}")
        x = self.reduce(concat([e5, g5], axis=1))
        if self.mtb is not None:
            x = self.mtb(x)
        return self.c3(self.c1(x))


class Expand(Module):
    """Upsample a 1-channel map by ``factor`` and extend it to ``channels``.

    ``shuffle``: 1x1 conv to 4C then pixel shuffle x2, repeated per doubling
    (factor 1 is a plain 1x1 conv). ``bilinear``: interpolate, then 1x1 conv.
    """

    def __init__(self, channels, factor, mode="shuffle", rng=None, dtype=np.float64):
        super().__init__()
        if factor not in (1, 2, 4):
            raise ValueError(f"expansion factor must be 1, 2 or 4, got {factor}")
        self.factor, self.mode = factor, mode
        if mode == "bilinear" or factor == 1:
            self.proj = Conv2d(1, channels, 1, rng=rng, dtype=dtype)
        else:
            steps = int(np.log2(factor))
            self.proj = ModuleDict({f"up{i}": Conv2d(1 if i == 0 else channels, 4 * channels, 1,
                                                     rng=rng, dtype=dtype) for i in range(steps)})

    def forward(self, d):
        if self.mode == "bilinear" or self.factor == 1:
            h, w = d.shape[-2:]
            return self.proj(K.upsample_bilinear(d, (h * self.factor, w * self.factor)))
        x = d
        for conv in self.proj.values():
            x = K.pixel_shuffle(conv(x), 2)
        return x


class ArdStep(Module):
    """One adjacent-reverse-decoder level producing the logit map D_i.

    F^c = rho([F, X(D_next), X(D_next2)]),  Lambda = up(RA(D_next)) + up(RA(D_next2)),
    F^r = Lambda * F,  D_i = C3[F^c, F^r] + up(D_next) + up(D_next2).
    X is :class:`Expand`, rho is two 3x3 conv + GELU layers, up is bilinear.
    """

    def __init__(self, channels, factors, expand_mode="shuffle", rng=None, dtype=np.float64):
        super().__init__()
        self.channels = channels
        self.factors = tuple(factors)
        self.expand = ModuleDict({f"in{j}": Expand(channels, f, expand_mode, rng, dtype)
                                  for j, f in enumerate(self.factors)})
        self.rho1 = ConvGelu((1 + len(self.factors)) * channels, channels, 3, rng=rng, dtype=dtype)
        self.rho2 = ConvGelu(channels, channels, 3, rng=rng, dtype=dtype)
        self.out = Conv2d(2 * channels, 1, 3, rng=rng, dtype=dtype)
        self.last_lambda = None

    def forward(self, f, *coarse):
        if len(coarse) != len(self.factors):
            raise DimensionError(f"expected {len(self.factors)} coarser maps, got {len(coarse)}")
        b, c, h, w = f.shape
        if c != self.channels:
            raise DimensionError(f"ARD expects {self.channels} channels, got {c}")
        for d, fac in zip(coarse, self.factors):
            if d.shape != (b, 1, h // fac, w // fac) or h % fac or w % fac:
                raise DimensionError(f"coarse map {d.shape} is not 1/{fac} of feature {f.shape}")
        expanded = [self.expand[f"in{j}"](d) for j, d in enumerate(coarse)]
        fc = self.rho2(self.rho1(concat([f] + expanded, axis=1)))
        lam = None
        skip = None
        for d in coarse:
            ra = K.upsample_bilinear(K.reverse_attention(d), (h, w))
            up = K.upsample_bilinear(d, (h, w))
            lam = ra if lam is None else lam + ra
            skip = up if skip is None else skip + up
        self.last_lambda = lam.data
        fr = broadcast_to(lam, f.shape) * f
        return self.out(concat([fc, fr], axis=1)) + skip


class FpnStep(Module):
    """Ablation decoder level: P_i = rho([F_i, up(P_{i+1})]), D_i = C3(P_i)."""

    def __init__(self, channels, has_top, rng=None, dtype=np.float64):
        super().__init__()
        self.rho1 = ConvGelu((2 if has_top else 1) * channels, channels, 3, rng=rng, dtype=dtype)
        self.rho2 = ConvGelu(channels, channels, 3, rng=rng, dtype=dtype)
        self.out = Conv2d(channels, 1, 3, rng=rng, dtype=dtype)

    def forward(self, f, top=None):
        x = f if top is None else concat([f, K.upsample_bilinear(top, f.shape[-2:])], axis=1)
        p = self.rho2(self.rho1(x))
        return p, self.out(p)


class Decoder(Module):
    def __init__(self, cfg, rng, dtype):
        super().__init__()
        self.use_ard = cfg.ard
        self.head6 = HeadD6(cfg.channels, cfg.scales, cfg.mtb_head, rng, dtype)
        if cfg.ard:
            self.ard = ModuleDict({f"l{i}": ArdStep(cfg.channels, [f for _, f in ARD_INPUTS[i]],
                                                    cfg.expand_mode, rng, dtype)
                                   for i in (5, 4, 3, 2)})
        else:
            self.fpn = ModuleDict({f"l{i}": FpnStep(cfg.channels, i != 5, rng, dtype)
                                   for i in (5, 4, 3, 2)})

    def forward(self, feats, e5, g5):
        """``feats`` maps level -> F_i; returns level -> D_i for 2..6."""
        d = {6: self.head6(e5, g5)}
        if self.use_ard:
            for i in (5, 4, 3, 2):
                d[i] = self.ard[f"l{i}"](feats[i], *(d[j] for j, _ in ARD_INPUTS[i]))
        else:
            top = None
            for i in (5, 4, 3, 2):
                top, d[i] = self.fpn[f"l{i}"](feats[i], top)
        return d


class GLCONet(Module):
    """Encoder -> per-level channel reduction -> COS -> D6 head -> decoder.

    ``forward`` returns a dict of logit maps keyed by level 2..6.
    """

    def __init__(self, cfg=None, seed=0):
        super().__init__()
        cfg = cfg if cfg is not None else ModelConfig()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        dt = cfg.dtype
        self.encoder = EncoderStub(cfg.encoder_widths, rng=rng, dtype=dt)
        self.reduce = ModuleDict({f"s{i}": ConvGelu(cfg.encoder_widths[i - 1], cfg.channels, 3,
                                                    rng=rng, dtype=dt) for i in LEVELS})
        self.cos = ModuleDict({f"s{i}": COS(cfg.channels, cfg.scales, cfg.fusion, cfg.gpm, cfg.lrm,
                                            cfg.ghim, rng, dt) for i in LEVELS})
        self.decoder = Decoder(cfg, rng, dt)
        self.last_features = None

    def forward(self, image):
        image = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.cfg.dtype))
        if image.ndim != 4 or image.shape[1] != 3:
            raise DimensionError(f"expected (b, 3, H, W) image, got {image.shape}")
        h, w = image.shape[-2:]
        if h % 32 or w % 32:
            raise ConfigError(f"input extent {h}x{w} must be divisible by 32")
        enc = self.encoder(image)  # E1 is computed but not used further
        e, g, l, f = {}, {}, {}, {}
        for i in LEVELS:
            e[i] = self.reduce[f"s{i}"](enc[i - 1])
            g[i], l[i], f[i] = self.cos[f"s{i}"](e[i])
        self.last_features = {"E": e, "G": g, "L": l, "F": f}
        second = g[5] if g[5] is not None else f[5]
        return self.decoder(f, e[5], second)

    def predict(self, image):
        """Foreground probability at input resolution: sigmoid(up(D2)), as (b, H, W) array."""
        with no_grad():
            out = self.forward(image)
            p = K.sigmoid(K.upsample_bilinear(out[2], image.shape[-2:]))
        return p.data[:, 0]
