"""Flat ``key = value`` run configuration.

Defaults follow the published training setup (width 128, 384x384 inputs,
batch 36, 180 epochs, lr 1e-4 decayed x0.1 every 60 epochs). The desk
preset shrinks that to something a single CPU core finishes in minutes.
"""

from dataclasses import dataclass, fields, replace

import numpy as np

from .cos import check_scales
from .decoder import ModelConfig
from .errors import ConfigError
from .synth import SynthSpec

DESK_PRESET = {"input_size": 64, "channels": 16, "batch": 4, "epochs": 30, "precision": 32}


def _ints(text):
    return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t)


def _flag(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    # model
    channels: int = 128
    scale_set: tuple = (3, 5, 7)
    fusion_mode: str = "add"
    gpm: bool = True
    lrm: bool = True
    ghim: bool = True
    ard: bool = True
    mtb_head: bool = True
    expand_mode: str = "shuffle"
    encoder_widths: tuple = (16, 32, 64, 128, 160)
    # optimisation
    input_size: int = 384
    batch: int = 36
    epochs: int = 180
    lr: float = 1e-4
    decay_every: int = 60
    decay_factor: float = 0.1
    seed: int = 0
    precision: int = 32
    hflip: bool = True
    max_steps: int = 0
    keep_epoch_checkpoints: bool = False
    # paths
    data_dir: str = "data"
    out_dir: str = "run"
    checkpoint: str = ""
    resume: str = ""
    image: str = ""
    pred_dir: str = ""
    gt_dir: str = ""
    dump_levels: bool = False
    # synthetic data
    synth_count: int = 8
    synth_extent: int = 64
    synth_family: str = "blob"
    synth_strength: float = 0.0
    synth_occlusion: float = 0.0
    # benchmark
    bench_steps: int = 3

    def __post_init__(self):
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        for key in ("channels", "input_size", "batch", "epochs", "decay_every", "bench_steps"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0 (0 means no cap)")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        try:
            check_scales(self.scale_set)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def model_config(self):
        return ModelConfig(channels=self.channels, scales=self.scale_set, fusion=self.fusion_mode,
                           gpm=self.gpm, lrm=self.lrm, ghim=self.ghim, ard=self.ard,
                           mtb_head=self.mtb_head, expand_mode=self.expand_mode,
                           encoder_widths=self.encoder_widths, dtype=self.dtype)

    def synth_spec(self):
        return SynthSpec(seed=self.seed, count=self.synth_count, extent=self.synth_extent,
                         family=self.synth_family, strength=self.synth_strength,
                         occlusion=self.synth_occlusion)

    def with_values(self, **kw):
        return replace(self, **kw)


FIELDS = {f.name: f for f in fields(RunConfig)}
DEFAULTS = RunConfig()


def _convert(key, text):
    default = getattr(DEFAULTS, key)
    if isinstance(default, bool):
        return _flag(text)
    if isinstance(default, tuple):
        return _ints(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return str(text).strip()


def _format(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_pairs(pairs, base=None):
    """Apply ``(key, text)`` pairs on top of ``base``; unknown keys are rejected."""
    values = {}
    for key, text in pairs:
        if key not in FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _convert(key, text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return replace(base or DEFAULTS, **values)


def parse(text, base=None):
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return parse_pairs(pairs, base)


def load(path, base=None):
    try:
        with open(path) as fh:
            return parse(fh.read(), base)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def serialize(cfg):
    return "".join(f"{f} = {_format(getattr(cfg, f))}\n" for f in FIELDS)


def desk(base=None):
    return replace(base or DEFAULTS, **DESK_PRESET)
