"""Mutual-excitation graph convolution and its building blocks.

Feature maps are ``[..., E, C, T, N]`` with the entity axis ``E`` fourth from
the end (``E == 2`` for the mutual path). The same convolution weights serve
both entities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Param,
    ShapeError,
    Tensor,
    add,
    channel_broadcast_add,
    contract_graph,
    mean_over_time,
    mul,
    pairwise_tanh,
    pointwise_conv,
    relu,
    standardize,
    temporal_conv,
    tmean,
)

ENTITY_AXIS = -4


class Module:
    """Parameter container; walks attributes in definition order."""

    buffer_names: tuple[str, ...] = ()

    def _walk(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, (Param, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Param, Module)):
                        yield f"{name}.{i}", item

    def named_params(self, prefix: str = ""):
        for name, value in self._walk(prefix):
            if isinstance(value, Param):
                yield name, value
            else:
                yield from value.named_params(name + ".")

    def named_buffers(self, prefix: str = ""):
        """Non-trainable state arrays (running statistics) that have been populated."""
        for key in self.buffer_names:
            value = getattr(self, key)
            if value is not None:
                yield f"{prefix}{key}", value
        for name, value in self._walk(prefix):
            if isinstance(value, Module):
                yield from value.named_buffers(name + ".")

    def named_modules(self, prefix: str = ""):
        yield prefix, self
        for name, child in self._walk(prefix):
            if isinstance(child, Module):
                yield from child.named_modules(name + ".")

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def scalar_param(value: float) -> Param:
    return Param(np.array([value]), decay=False)


class PointwiseConv(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.weight = Param(_uniform(rng, (c_out, c_in), c_in))
        self.bias = Param(_uniform(rng, (c_out,), c_in), decay=False)

    def __call__(self, x: Tensor) -> Tensor:
        return pointwise_conv(x, self.weight, self.bias)


class RunningNorm(Module):
    """Affine standardization per slot of ``shape`` (aligned to the trailing axes).

    Every other axis is pooled. Training uses batch statistics and updates the
    running averages (the first batch initializes them); evaluation uses the
    running averages.
    """

    buffer_names = ("running_mean", "running_var")

    def __init__(self, shape: tuple[int, ...], momentum: float = 0.1, eps: float = 1e-5):
        self.scale = Param(np.ones(shape))
        self.shift = Param(np.zeros(shape), decay=False)
        self.momentum, self.eps = momentum, eps
        self.running_mean: np.ndarray | None = None
        self.running_var: np.ndarray | None = None

    def pooled_axes(self, ndim: int) -> tuple[int, ...]:
        shape = self.scale.shape
        lead = ndim - len(shape)
        return tuple(i for i in range(ndim) if i < lead or shape[i - lead] == 1)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        shape = self.scale.shape
        if x.ndim < len(shape) or any(s not in (1, e) for s, e in zip(shape, x.shape[x.ndim - len(shape):])):
            raise ShapeError(f"normalization slots {shape} do not fit input {x.shape}")
        axes = self.pooled_axes(x.ndim)
        if training:
            normed, mean, var = standardize(x, axes, self.eps)
            self._update(mean.reshape(self.scale.shape), var.reshape(self.scale.shape))
        else:
            if self.running_mean is None:
                raise RuntimeError("normalization has no statistics; run a training step first")
            normed = (x - Tensor(self.running_mean)) * Tensor(1.0 / np.sqrt(self.running_var + self.eps))
        return normed * self.scale + self.shift

    def _update(self, mean: np.ndarray, var: np.ndarray):
        if self.running_mean is None:
            self.running_mean, self.running_var = mean.copy(), var.copy()
        else:
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var


class FgbParams(Module):
    """Channel-reducing projections shared by the intra and inter correlation maps."""

    def __init__(self, c_in: int, rel_channels: int, rng: np.random.Generator):
        self.psi = PointwiseConv(c_in, rel_channels, rng)
        self.phi = PointwiseConv(c_in, rel_channels, rng)

    def pooled(self, x: Tensor) -> tuple[Tensor, Tensor]:
        return mean_over_time(self.psi(x)), mean_over_time(self.phi(x))


def fgb_intra(R: Tensor, p: FgbParams) -> Tensor:
    """``[..., C, T, N] -> [..., C/r, N, N]`` correlation within one entity."""
    a, b = p.pooled(R)
    return pairwise_tanh(a, b)


def _entity_mean_feature(x: Tensor, p: FgbParams) -> Tensor:
    a, b = p.pooled(x)
    return (a + b) * 0.5


def fgb_inter(R: Tensor, L: Tensor, p: FgbParams) -> Tensor:
    """Correlation between the averaged reduced features of two entities."""
    if R.shape != L.shape:
        raise ShapeError(f"fgb_inter: entity shapes differ {R.shape} vs {L.shape}")
    return pairwise_tanh(_entity_mean_feature(R, p), _entity_mean_feature(L, p))


def ffb_fuse(intra: Tensor, inter: Tensor, beta: Tensor) -> Tensor:
    """``intra + beta * inter``."""
    if intra.shape != inter.shape:
        raise ShapeError(f"ffb_fuse: {intra.shape} vs {inter.shape}")
    return add(intra, mul(beta, inter))


def _split_entities(x: Tensor) -> tuple[Tensor, Tensor]:
    if x.ndim < 4 or x.shape[ENTITY_AXIS] != 2:
        raise ShapeError(f"mutual path needs an entity axis of extent 2, got {x.shape}")
    return x[..., 0, :, :, :], x[..., 1, :, :, :]


class MteParams(Module):
    def __init__(self, c_in: int, c_out: int, rel_channels: int, static_adj: np.ndarray,
                 rng: np.random.Generator, alpha: float = 1.0, beta: float = 0.0):
        self.fgb = FgbParams(c_in, rel_channels, rng)
        self.beta = scalar_param(beta)
        self.xi = PointwiseConv(rel_channels, c_out, rng)
        self.alpha = scalar_param(alpha)
        self.static_adj = Tensor(np.asarray(static_adj, dtype=np.float64).reshape(1, *np.shape(static_adj)[-2:]))


@dataclass
class MteOutput:
    adjacency: Tensor
    adjacency_intra: Tensor | None
    intra: Tensor
    inter: Tensor | None


def mte_parts(X: Tensor, p: MteParams, mutual: bool = True, keep_intra_adjacency: bool = False) -> MteOutput:
    """Topology branch with intermediates exposed.

    ``adjacency_intra`` is the adjacency built from the intra map alone (the
    pre-fusion view), computed only when requested.
    """
    intra = fgb_intra(X, p.fgb)  # [..., E, C/r, N, N]
    prior = mul(p.alpha, p.static_adj)
    inter = None
    fused = intra
    if mutual:
        R, L = _split_entities(X)
        inter = fgb_inter(R, L, p.fgb)
        inter_e = inter.reshape(inter.shape[:-3] + (1,) + inter.shape[-3:])
        fused = add(intra, mul(p.beta, inter_e))
    adjacency = channel_broadcast_add(p.xi(fused), prior)
    adjacency_intra = None
    if keep_intra_adjacency:
        adjacency_intra = adjacency if not mutual else channel_broadcast_add(p.xi(intra), prior)
    return MteOutput(adjacency, adjacency_intra, intra, inter)


def mte_forward(X: Tensor, p: MteParams, mutual: bool = True) -> Tensor:
    """``[..., 2, C_k, T, N] -> [..., 2, C_{k+1}, N, N]`` channel-wise adjacency per entity."""
    return mte_parts(X, p, mutual).adjacency


class MfeParams(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, beta: float = 0.0):
        self.conv = PointwiseConv(c_in, c_out, rng)
        self.beta = scalar_param(beta)


def mfe_forward(X: Tensor, p: MfeParams, mutual: bool = True) -> Tensor:
    """Per-entity local features plus ``beta`` times their entity average."""
    F = p.conv(X)
    if not mutual:
        return F
    if F.shape[ENTITY_AXIS] != 2:
        raise ShapeError(f"mutual path needs an entity axis of extent 2, got {F.shape}")
    shared = tmean(F, axis=ENTITY_AXIS, keepdims=True)
    return add(F, mul(p.beta, shared))


class MeGcLayer(Module):
    """One graph convolution block: MFE features aggregated over the MTE topology,
    then temporal convolution, normalization, residual and ReLU.

    With ``mutual_mte`` and ``mutual_mfe`` both off the block is the plain
    split-and-fusion GC layer.
    """

    def __init__(self, c_in: int, c_out: int, static_adj: np.ndarray, rng: np.random.Generator, *,
                 stride: int = 1, rel_channels: int | None = None, reduction: int = 8,
                 mutual_mte: bool = True, mutual_mfe: bool = True, use_tc: bool = True,
                 residual: bool = True, norm: bool = True, tc_kernel: int = 5, tc_dilations=(1, 2),
                 alpha_init: float = 1.0, beta_init: float = 0.0):
        if rel_channels is None:
            if c_in % reduction:
                raise ValueError(f"input channels {c_in} not divisible by reduction {reduction}")
            rel_channels = c_in // reduction
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        self.mutual_mte, self.mutual_mfe = mutual_mte, mutual_mfe
        self.use_tc, self.residual = use_tc, residual
        self.tc_dilations = tuple(tc_dilations)
        self.mte = MteParams(c_in, c_out, rel_channels, static_adj, rng, alpha_init, beta_init)
        self.mfe = MfeParams(c_in, c_out, rng, beta_init)
        fan_in = c_out * tc_kernel * len(self.tc_dilations)
        self.tc = [Param(_uniform(rng, (c_out, c_out, tc_kernel), fan_in)) for _ in self.tc_dilations] if use_tc else []
        self.bn = RunningNorm((c_out, 1, 1)) if norm else None
        self.down = None
        if residual and (c_in != c_out or stride != 1):
            self.down = PointwiseConv(c_in, c_out, rng)

    def residual_path(self, X: Tensor) -> Tensor | None:
        if not self.residual:
            return None
        if self.stride != 1:
            X = X[..., :: self.stride, :]
        return self.down(X) if self.down is not None else X

    def temporal(self, X: Tensor) -> Tensor:
        if not self.use_tc:
            return X[..., :: self.stride, :] if self.stride != 1 else X
        return temporal_conv(X, [(w, d, self.stride) for w, d in zip(self.tc, self.tc_dilations)])

    def __call__(self, X: Tensor, mutual: bool | None = None, adjacency: Tensor | None = None,
                 training: bool = True) -> Tensor:
        return layer_forward(X, self, mutual=mutual, adjacency=adjacency, training=training)


def layer_forward(X: Tensor, layer: MeGcLayer, mutual: bool | None = None,
                  adjacency: Tensor | None = None, training: bool = True) -> Tensor:
    """``[..., 2, C_k, T_k, N] -> [..., 2, C_{k+1}, T_k / stride, N]``.

    ``mutual`` overrides both per-layer flags; ``adjacency`` replaces the MTE output.
    ``training`` selects batch or running statistics for the output normalization.
    """
    mte_on = layer.mutual_mte if mutual is None else mutual
    mfe_on = layer.mutual_mfe if mutual is None else mutual
    F = mfe_forward(X, layer.mfe, mfe_on)
    A = adjacency if adjacency is not None else mte_forward(X, layer.mte, mte_on)
    Y = layer.temporal(contract_graph(F, A))
    if layer.bn is not None:
        Y = layer.bn(Y, training)
    res = layer.residual_path(X)
    if res is not None:
        Y = add(Y, res)
    return relu(Y)


def baseline_layer_forward(X: Tensor, layer: MeGcLayer, training: bool = True) -> Tensor:
    """The same block with every cross-entity term switched off."""
    return layer_forward(X, layer, mutual=False, training=training)
