"""Synthetic camouflage scenes: a textured object pasted on a textured background.

Camouflage strength blends the object's own texture toward the background
texture (0 = clearly separable, 1 = same statistics). Every image draws
from its own generator seeded by ``(seed, index)``, so datasets are
reproducible and images can be produced in any order.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .imageio import write_pnm

FAMILIES = ("blob", "ring", "multi-blob")


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    count: int = 8
    extent: int = 64
    family: str = "blob"
    strength: float = 0.0
    occlusion: float = 0.0

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("synth count must be at least 1")
        if self.extent < 8:
            raise ConfigError("synth extent must be at least 8")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown object family {self.family!r}; choose from {FAMILIES}")
        if not 0.0 <= self.strength <= 1.0:
            raise ConfigError("camouflage strength must lie in [0, 1]")
        if not 0.0 <= self.occlusion < 1.0:
            raise ConfigError("occlusion fraction must lie in [0, 1)")


def _texture(rng, n, base, amplitude):
    """Smooth colored noise around ``base`` (3,) with a finer speckle on top."""
    coarse = ndimage.gaussian_filter(rng.normal(size=(n, n, 3)), sigma=(3.0, 3.0, 0))
    coarse /= coarse.std() + 1e-12
    fine = ndimage.gaussian_filter(rng.normal(size=(n, n, 3)), sigma=(0.8, 0.8, 0))
    fine /= fine.std() + 1e-12
    return base + amplitude * (0.7 * coarse + 0.3 * fine)


def _star_blob(rng, n, cy, cx, radius):
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    theta = np.arctan2(yy - cy, xx - cx)
    r = np.full_like(theta, radius)
    for k in (2, 3, 5):
        r += radius * rng.uniform(0.0, 0.18) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    return np.hypot(yy - cy, xx - cx) <= r


def _shape(rng, n, family):
    if family == "blob":
        c = rng.uniform(0.35, 0.65, size=2) * n
        return _star_blob(rng, n, c[0], c[1], rng.uniform(0.16, 0.28) * n)
    if family == "ring":
        c = rng.uniform(0.4, 0.6, size=2) * n
        outer = rng.uniform(0.22, 0.32) * n
        inner = outer * rng.uniform(0.45, 0.65)
        yy, xx = np.mgrid[0:n, 0:n]
        d = np.hypot(yy - c[0], xx - c[1])
        return (d <= outer) & (d >= inner)
    mask = np.zeros((n, n), bool)
    for _ in range(int(rng.integers(2, 4))):
        c = rng.uniform(0.2, 0.8, size=2) * n
        mask |= _star_blob(rng, n, c[0], c[1], rng.uniform(0.08, 0.15) * n)
    return mask


def _occlude(rng, mask, fraction):
    """Hide the object pixels on one side of a random line (about ``fraction`` of them)."""
    if fraction <= 0:
        return mask
    ys, xs = np.nonzero(mask)
    angle = rng.uniform(0, 2 * np.pi)
    proj = ys * np.sin(angle) + xs * np.cos(angle)
    cut = np.quantile(proj, fraction)
    hidden = proj < cut
    hidden[np.argmax(proj)] = False  # always keep at least one visible pixel
    out = mask.copy()
    out[ys[hidden], xs[hidden]] = False
    return out


def render(spec, index):
    """Return ``(image uint8 (n, n, 3), mask uint8 (n, n) in {0, 255})`` for one sample."""
    rng = np.random.default_rng([spec.seed, index])
    n = spec.extent
    bg_base = rng.uniform(0.15, 0.35, size=3)
    obj_base = np.clip(bg_base + rng.uniform(0.45, 0.55), 0.0, 1.0)
    background = _texture(rng, n, bg_base, 0.05)
    own = _texture(rng, n, obj_base, 0.05)
    # the object's camouflaged texture borrows an independent background patch
    borrowed = _texture(rng, n, bg_base, 0.05)
    obj_tex = (1.0 - spec.strength) * own + spec.strength * borrowed
    mask = _occlude(rng, _shape(rng, n, spec.family), spec.occlusion)
    if not mask.any():
        mask[n // 2, n // 2] = True
    soft = ndimage.gaussian_filter(mask.astype(np.float64), 0.7)[..., None]
    img = (1.0 - soft) * background + soft * obj_tex
    img = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    return img, (mask.astype(np.uint8) * 255)


def generate(spec, out_dir, workers=1):
    """Write ``img_%04d.ppm`` and ``gt_%04d.pgm`` for every sample; returns the file paths."""
    os.makedirs(out_dir, exist_ok=True)

    def one(i):
        img, gt = render(spec, i)
        a = os.path.join(out_dir, f"img_{i:04d}.ppm")
        b = os.path.join(out_dir, f"gt_{i:04d}.pgm")
        write_pnm(a, img)
        write_pnm(b, gt)
        return a, b

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            pairs = list(pool.map(one, range(spec.count)))
    else:
        pairs = [one(i) for i in range(spec.count)]
    return [p for pair in pairs for p in pair]


def intensity_gap(image, mask):
    """Mean gray level of object minus background, on a 0..1 scale."""
    gray = np.asarray(image, dtype=np.float64).mean(axis=-1) / 255.0
    m = np.asarray(mask) > 0
    return float(gray[m].mean() - gray[~m].mean())
