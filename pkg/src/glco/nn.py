"""Parameter containers and the layer wrappers every block is built from."""

from collections import OrderedDict

import numpy as np

from . import kernels as K
from .errors import CheckpointError
from .tensor import Tensor

# Kaiming-uniform fan-in with linear gain (a = 1): bound = sqrt(3 / fan_in).
# The ReLU gain (a = 0) compounds through the decoder's additive skips.
KAIMING_A = 1.0


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Minimal module tree: attributes that are Parameters or Modules are registered."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        else:
            self._params.pop(name, None)
            self._children.pop(name, None)
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}{name}.")

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def state_dict(self):
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state):
        """Copy arrays into parameters; every name and shape must match."""
        own = OrderedDict(self.named_parameters())
        problems = []
        for name in own:
            if name not in state:
                problems.append(f"missing: {name}")
            elif tuple(state[name].shape) != own[name].shape:
                problems.append(f"shape: {name} expects {own[name].shape}, got {tuple(state[name].shape)}")
        problems.extend(f"unexpected: {n}" for n in state if n not in own)
        if problems:
            raise CheckpointError(
                f"checkpoint does not match architecture ({len(problems)} problems)", problems
            )
        for name, p in own.items():
            p.data[...] = state[name]

    def zero_(self):
        """Set every learnable tensor to zero (used by residual identity checks)."""
        for p in self.parameters():
            p.data[...] = 0.0
        return self


class ModuleDict(Module):
    def __init__(self, items=()):
        super().__init__()
        for key, mod in dict(items).items():
            self[key] = mod

    def __setitem__(self, key, mod):
        setattr(self, key, mod)

    def __getitem__(self, key):
        return self._children[key]

    def __contains__(self, key):
        return key in self._children

    def __iter__(self):
        return iter(self._children)

    def __len__(self):
        return len(self._children)

    def keys(self):
        return self._children.keys()

    def values(self):
        return self._children.values()

    def items(self):
        return self._children.items()


def kaiming_uniform(shape, fan_in, rng, dtype, a=None):
    a = KAIMING_A if a is None else a
    bound = np.sqrt(6.0 / ((1.0 + a * a) * fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, dilation=1, groups=1, bias=True,
                 rng=None, dtype=np.float64):
        super().__init__()
        self.spec = K.ConvSpec(in_ch, out_ch, kernel, stride, dilation, groups)
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = (in_ch // groups) * kernel * kernel
        self.weight = Parameter(kaiming_uniform(self.spec.weight_shape, fan_in, rng, dtype))
        if bias:
            self.bias = Parameter(np.zeros(out_ch, dtype=dtype))
        else:
            self.bias = None

    def forward(self, x):
        s = self.spec
        return K.conv2d(x, self.weight, self.bias, stride=s.stride, dilation=s.dilation,
                        groups=s.groups, padding=s.padding)

    def __repr__(self):
        s = self.spec
        return (f"Conv2d({s.in_channels}, {s.out_channels}, k={s.kernel}, stride={s.stride}, "
                f"dilation={s.dilation}, groups={s.groups})")


class LayerNorm(Module):
    def __init__(self, channels, dtype=np.float64):
        super().__init__()
        self.gain = Parameter(np.ones(channels, dtype=dtype))
        self.offset = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x):
        return K.layer_norm(x, self.gain, self.offset)


class GatedConv(Module):
    def __init__(self, channels, rng=None, dtype=np.float64):
        super().__init__()
        self.conv = Conv2d(channels, channels, 3, rng=rng, dtype=dtype)

    def forward(self, x):
        return K.gated_conv(x, self.conv.weight, self.conv.bias)


class ConvGelu(Module):
    """Convolution followed by GELU."""

    def __init__(self, in_ch, out_ch, kernel, stride=1, rng=None, dtype=np.float64):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, kernel, stride=stride, rng=rng, dtype=dtype)

    def forward(self, x):
        return K.gelu(self.conv(x))
