"""Numpy reimplementation of a global-local collaborative camouflaged-object segmenter.

Subpackages by layer: ``tensor``/``gradcheck``/``serialize`` (autodiff core),
``kernels``/``nn`` (differentiable primitives and layers), ``cos`` and
``decoder`` (network blocks), ``objective`` (losses, Adam), ``metrics``
(evaluation suite), and ``synth``/``imageio``/``config``/``train``/``cli``
(data and tooling).
"""

from .config import RunConfig
from .decoder import GLCONet, ModelConfig
from .errors import (CheckpointError, ConfigError, ContractError, DataError, DimensionError,
                     NonFiniteError)
from .tensor import Tensor, backward, no_grad

__all__ = ["CheckpointError", "ConfigError", "ContractError", "DataError", "DimensionError",
           "GLCONet", "ModelConfig", "NonFiniteError", "RunConfig", "Tensor", "backward", "no_grad"]
