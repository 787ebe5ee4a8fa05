"""
One mutual-excitation graph convolution layer
=============================================

The topology branch builds per-entity correlation maps and adds a beta-scaled
map between the two entities; the feature branch adds a beta-scaled entity
average. With both betas at zero the layer is the plain split-and-fusion layer.
"""
import numpy as np

from megcn.autodiff import Tensor
from megcn.graph import preset, static_adjacency
from megcn.layers import MeGcLayer, baseline_layer_forward, fgb_inter, fgb_intra, layer_forward, mte_parts

rng = np.random.default_rng(1)
adj = static_adjacency(preset("chain6"))
layer = MeGcLayer(8, 16, adj, rng, stride=2, reduction=4)
X = Tensor(rng.normal(size=(2, 8, 12, 6)))  # [entity, channel, frame, joint]

R, L = X[0], X[1]
intra = fgb_intra(R, layer.mte.fgb)
inter = fgb_inter(R, L, layer.mte.fgb)
print("intra map", intra.shape, "inter map", inter.shape, "range", float(inter.data.min()), float(inter.data.max()))

# At initialization both betas are 0, so the mutual terms are silent.
same = np.abs(layer_forward(X, layer).data - baseline_layer_forward(X, layer).data).max()
print("beta = 0, mutual vs baseline max diff:", same)

layer.mte.beta.data[:] = 0.5
layer.mfe.beta.data[:] = 0.5
diff = np.abs(layer_forward(X, layer).data - baseline_layer_forward(X, layer).data).max()
print("beta = 0.5, mutual vs baseline max diff:", round(float(diff), 4))

parts = mte_parts(X, layer.mte, keep_intra_adjacency=True)
print("adjacency per entity and channel:", parts.adjacency.shape)
print("output:", layer(X).shape)
