"""Reverse-mode differentiation on the tape, checked against central differences.

Run: python demos/autodiff_gradcheck.py
"""

import numpy as np

from glco import kernels as K
from glco.gradcheck import gradcheck
from glco.tensor import Tensor, backward, finite_policy, log, tsum

rng = np.random.default_rng(0)

# A tiny composite: conv -> channel LayerNorm -> GELU -> sum.
w = Tensor(rng.normal(size=(4, 4, 3, 3)) * 0.3, requires_grad=True)
gain, offset = Tensor(np.ones(4)), Tensor(np.zeros(4))
x = Tensor(rng.normal(size=(1, 4, 8, 8)), requires_grad=True)

y = tsum(K.gelu(K.layer_norm(K.conv2d(x, w), gain, offset)))
backward(y)
print(f"loss {float(y.data):.6f}")
print(f"dL/dx shape {x.grad.shape}, dL/dw norm {np.linalg.norm(w.grad):.4f}")


def f(t):
    return tsum(K.gelu(K.layer_norm(K.conv2d(t, w), gain, offset)))


print(f"max relative error vs central differences (h=1e-5): {gradcheck(f, x.data):.2e}")

# Shapes never broadcast silently; non-finite results are errors unless the policy says otherwise.
try:
    Tensor(np.zeros((3, 4))) + Tensor(np.zeros(4))
except Exception as exc:
    print(f"broadcast refused: {type(exc).__name__}")
try:
    with np.errstate(divide="ignore"):
        log(Tensor(np.array([0.0, 1.0])))
except Exception as exc:
    print(f"log(0) refused: {type(exc).__name__}")
with finite_policy("off"), np.errstate(divide="ignore"):
    print("with the policy off, log(0) =", log(Tensor(np.array([0.0]))).data[0])
