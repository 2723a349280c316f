"""
Three ways to warp a frame
==========================

Backward warping samples the source at displaced locations. Forward
splatting pushes every source pixel to its displaced target and
normalizes. The attention warp samples M candidate locations and lets a
softmax over query/key similarities choose between them.
"""

import numpy as np

from rscorrect.motion import FieldBundle
from rscorrect.warp import AttentionParams, ada_msa_warp, backward_warp, dfw_forward_warp

rng = np.random.default_rng(0)
frame = rng.random((8, 8, 3))

shift = np.zeros((8, 8, 2))
shift[..., 0] = -2.0
print("backward warp by -2 columns equals the shifted frame:",
      np.array_equal(backward_warp(frame, shift)[:, 2:], frame[:, :-2]))

# splatting leaves holes where nothing lands; validity marks them
down = np.zeros((8, 8, 2))
down[..., 1] = 3.0
out = dfw_forward_warp(frame, down)
print("splat hole rows:", np.where(out.validity.max(axis=1) == 0)[0])

# M = 3 candidate fields, identity projections, two heads
fields = np.stack([np.full((8, 8, 2), d) for d in (-0.5, 0.0, 0.5)])
bundle = FieldBundle(fields, np.ones((3, 8, 8)))
params = AttentionParams.identity(channels=3, heads=2)
res = ada_msa_warp(frame, bundle, params)
print("attention weights sum to one:", np.allclose(res.attention.sum(axis=0), 1.0))
print("mean attention per field:", np.round(res.attention.mean(axis=(1, 2)), 3))
