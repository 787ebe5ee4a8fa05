"""
Static skeleton topology
========================

Bones give a binary adjacency; the layer prior is its symmetric degree
normalization with self-loops, one [1, N, N] matrix shared by every channel.
"""
import numpy as np

from megcn.graph import preset, static_adjacency

for name in ("ntu25", "hand21", "chain6"):
    g = preset(name)
    a = static_adjacency(g)[0]
    radius = np.abs(np.linalg.eigvalsh(a)).max()
    print(f"{name:>7}: {g.num_joints} joints, {len(g.edges)} bones, spectral radius {radius:.6f}")

np.set_printoptions(precision=3, suppress=True)
print(static_adjacency(preset("chain6"))[0])
