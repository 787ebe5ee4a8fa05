"""Skeleton graphs and the normalized physical-connection adjacency."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

# NTU RGB+D 25-joint body, zero-based (1-based NTU joint j is index j-1).
# 0 spine base, 1 spine mid, 2 neck, 3 head, 4-7 left arm, 8-11 right arm,
# 12-15 left leg, 16-19 right leg, 20 spine shoulder, 21-22 left hand tip/thumb,
# 23-24 right hand tip/thumb.
NTU25_EDGES = [
    (0, 1), (1, 20), (2, 20), (3, 2), (4, 20), (5, 4), (6, 5), (7, 6),
    (8, 20), (9, 8), (10, 9), (11, 10), (12, 0), (13, 12), (14, 13), (15, 14),
    (16, 0), (17, 16), (18, 17), (19, 18), (21, 22), (22, 7), (23, 24), (24, 11),
]

# 21-joint hand: 0 wrist, then four bones per finger from the base outward
# (thumb 1-4, index 5-8, middle 9-12, ring 13-16, little 17-20).
HAND21_EDGES = [
    edge
    for base in (1, 5, 9, 13, 17)
    for edge in [(0, base), (base, base + 1), (base + 1, base + 2), (base + 2, base + 3)]
]

PRESETS = {"ntu25": (25, NTU25_EDGES), "hand21": (21, HAND21_EDGES)}


@dataclass(frozen=True)
class SkeletonGraph:
    num_joints: int
    edges: tuple[tuple[int, int], ...]
    name: str = "custom"

    def __post_init__(self):
        canon = set()
        for i, j in self.edges:
            if not (0 <= i < self.num_joints and 0 <= j < self.num_joints):
                raise ValueError(f"edge ({i}, {j}) out of range for {self.num_joints} joints")
            if i == j:
                raise ValueError(f"self-loop on joint {i}")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", tuple(sorted(canon)))

    def binary_adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_joints, self.num_joints))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a


def preset(name: str) -> SkeletonGraph:
    """Look up a named skeleton.

    ``ntu25`` and ``hand21`` are the body and hand trees. ``chain<N>`` is a
    path over N joints, used by the synthetic generator for arbitrary N.
    """
    if name in PRESETS:
        n, edges = PRESETS[name]
        return SkeletonGraph(n, tuple(edges), name)
    m = re.fullmatch(r"chain(\d+)", name)
    if m and int(m.group(1)) >= 1:
        n = int(m.group(1))
        return SkeletonGraph(n, tuple((i, i + 1) for i in range(n - 1)), name)
    raise KeyError(f"unknown skeleton preset {name!r}; known: ntu25, hand21, chain<N>")


def preset_for_joints(n: int) -> str:
    for name, (count, _) in PRESETS.items():
        if count == n:
            return name
    return f"chain{n}"


def static_adjacency(graph: SkeletonGraph) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` as a ``[1, N, N]`` array."""
    a = graph.binary_adjacency() + np.eye(graph.num_joints)
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return (d[:, None] * a * d[None, :])[None]
