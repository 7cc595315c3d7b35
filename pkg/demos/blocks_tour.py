"""A walk through the building blocks at reduced width.

Shows the channel attention maps of the multi-scale transformer block, the
progressive convolution block, the group-wise fusion, and the five decoder
outputs of the assembled network on a 64x64 input.

Run: python demos/blocks_tour.py
"""

import numpy as np

from glco.cos import COS, GHIM, MTB, PCB
from glco.decoder import GLCONet, ModelConfig
from glco.tensor import Tensor, no_grad

rng = np.random.default_rng(0)
C = 16
e = Tensor(rng.normal(size=(1, C, 8, 8)))

with no_grad():
    mtb = MTB(C, scales=(3, 5, 7), rng=rng)
    g = mtb(e)
    for scale, a in zip(mtb.scales, mtb.last_attention):
        print(f"attention at scale {scale}: {a.shape[-2]}x{a.shape[-1]} over channels, "
              f"row sums in [{a.sum(-1).min():.6f}, {a.sum(-1).max():.6f}]")
    l = PCB(C, rng=rng)(e)
    f = GHIM(C, rng=rng)(g, l)
    print(f"global {g.shape}, local {l.shape}, fused {f.shape}")

    # Zero weights turn every residual block into the identity.
    print("zeroed MTB is identity:", np.array_equal(MTB(C).zero_()(e).data, e.data))
    g2, l2, f2 = COS(C, gpm=False, rng=rng)(e)
    print("COS without the global path returns the local branch:", f2 is l2)

    net = GLCONet(ModelConfig(channels=C, encoder_widths=(8, 16, 16, 16, 16)), seed=0)
    out = net(rng.normal(size=(1, 3, 64, 64)))
    for i in sorted(out):
        print(f"D{i}: {out[i].shape[-2]}x{out[i].shape[-1]} logits")
    lam = net.decoder.ard["l2"].last_lambda
    print(f"reverse-attention gate at level 2 spans [{lam.min():.3f}, {lam.max():.3f}] (bounded by 2)")
    print(f"parameters: {net.num_parameters()}")
