"""Finite-difference verification of every differentiable op and of a full tiny model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Param, Tensor, backward, finite_diff_grad
from .config import ModelConfig
from .graph import preset, static_adjacency
from .layers import FgbParams, MeGcLayer, MfeParams, MteParams, fgb_inter, fgb_intra, mfe_forward, mte_forward
from .model import MeGCN

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
# Central differences carry about 1e-9 absolute truncation error at h = 1e-5,
# so gradients smaller than this are compared on an absolute scale.
ERROR_FLOOR = 1e-3


@dataclass
class GroupResult:
    name: str
    max_rel_error: float


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ERROR_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max()) if np.size(analytic) else 0.0


def check_params(loss_fn: Callable[[], Tensor], params: dict[str, Param], h: float = DEFAULT_STEP) -> dict[str, float]:
    """Max relative error between tape and central-difference gradients for each named param."""
    for p in params.values():
        p.zero_grad()
    backward(loss_fn())
    errors = {}
    for name, p in params.items():
        def f(v, p=p):
            old, p.data = p.data, v
            try:
                return float(loss_fn().data)
            finally:
                p.data = old

        errors[name] = relative_error(p.grad, finite_diff_grad(f, p.data, h))
    return errors


def _probe_loss(build: Callable[[], Tensor], seed: int) -> Callable[[], Tensor]:
    """Scalar ``sum(build() * w)`` with fixed random ``w`` so no gradient direction cancels."""
    probe: list[Tensor] = []

    def loss():
        out = build()
        if not probe:
            probe.append(Tensor(np.random.default_rng([seed, 11]).normal(size=out.shape)))
        return ad.tsum(out * probe[0])

    return loss


def op_cases(seed: int = 0) -> list[tuple[str, Callable[[], Tensor], dict[str, Param]]]:
    """``(name, scalar loss, params)`` for every differentiable op and each layer sub-module."""
    rng = np.random.default_rng([seed, 3])
    cases = []

    def P(*shape, scale=1.0):
        return Param(scale * rng.normal(size=shape))

    def case(name, build, params):
        cases.append((name, _probe_loss(build, seed * 1000 + len(cases)), params))

    def op(name, fn, **params):
        case(name, lambda: fn(**params), params)

    op("add", lambda a, b: a + b, a=P(3, 4), b=P(4))
    op("sub", lambda a, b: a - b, a=P(3, 4), b=P(3, 1))
    op("mul", lambda a, b: a * b, a=P(3, 4), b=P(1, 4))
    op("power", lambda a: (a * a + 1.0) ** -0.5, a=P(3, 4))
    op("tanh", ad.tanh_map, x=P(3, 4))
    # keep relu inputs away from the kink, where central differences are meaningless
    op("relu", ad.relu, x=Param(rng.choice([-1.0, 1.0], (3, 4)) * rng.uniform(0.1, 1.0, (3, 4))))
    op("absolute", ad.absolute, x=Param(rng.choice([-1.0, 1.0], (3, 4)) * rng.uniform(0.1, 1.0, (3, 4))))
    op("mean_over_time", ad.mean_over_time, x=P(2, 3, 4, 5))
    op("global_mean", ad.global_mean, x=P(2, 3, 4, 5))
    op("contract_graph", ad.contract_graph, F=P(2, 3, 4, 5), A=P(2, 3, 5, 5))
    op("pointwise_conv", ad.pointwise_conv, X=P(2, 3, 4, 5), W=P(6, 3), b=P(6))
    op("temporal_conv", lambda x, w1, w2: ad.temporal_conv(x, [(w1, 1, 1), (w2, 2, 1)]),
       x=P(2, 3, 8, 4), w1=P(5, 3, 5), w2=P(5, 3, 5))
    op("temporal_conv_strided", lambda x, w: ad.temporal_conv(x, [(w, 2, 2)]), x=P(3, 9, 4), w=P(2, 3, 3))
    op("pairwise_tanh", ad.pairwise_tanh, P=P(2, 3, 5), Q=P(2, 3, 5))
    op("channel_broadcast_add", ad.channel_broadcast_add, V=P(2, 4, 5, 5), A=P(1, 5, 5))
    op("standardize", lambda x: ad.standardize(x, (0, 2, 3))[0], x=P(2, 3, 4, 5, scale=2.0))
    op("linear", ad.linear, x=P(3, 4), W=P(2, 4), b=P(2))
    labels = rng.integers(0, 4, size=3)
    op("softmax_cross_entropy", lambda z: ad.softmax_cross_entropy(z, labels), z=P(3, 4))

    adj = static_adjacency(preset("chain5"))
    R, L, X = P(4, 6, 5), P(4, 6, 5), P(2, 4, 6, 5)
    fgb = FgbParams(4, 2, rng)
    case("fgb_intra", lambda: fgb_intra(R, fgb), {"R": R, **dict(fgb.named_params())})
    case("fgb_inter", lambda: fgb_inter(R, L, fgb), {"R": R, "L": L, **dict(fgb.named_params())})
    mte = MteParams(4, 6, 2, adj, rng, alpha=0.8, beta=0.4)
    case("mte_forward", lambda: mte_forward(X, mte), {"X": X, **dict(mte.named_params())})
    mfe = MfeParams(4, 6, rng, beta=-0.3)
    case("mfe_forward", lambda: mfe_forward(X, mfe), {"X": X, **dict(mfe.named_params())})
    layer = MeGcLayer(4, 6, adj, rng, stride=2, rel_channels=2, beta_init=0.3)
    case("layer_forward", lambda: layer(X), {"X": X, **dict(layer.named_params())})
    return cases


def tiny_model_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(num_classes=2, in_channels=4, channels=(4, 8), strides=(1, 1), reduction=2,
                       preset="chain5", mutual_mte=(True, True), mutual_mfe=(True, True), dropout=0.0,
                       beta_init=0.25, init_seed=seed)


def model_case(seed: int = 0):
    """Full tiny model (two layers, 4 -> 4 -> 8 channels, r = 2, T = 8, N = 5, batch 2)."""
    rng = np.random.default_rng([seed, 7])
    model = MeGCN(tiny_model_config(seed))
    x = rng.normal(size=(2, 2, 4, 8, 5))
    labels = np.array([0, 1])

    def loss():
        return ad.softmax_cross_entropy(model(x, training=True), labels)

    return loss, dict(model.named_params())


def run_suite(scale: str = "tiny", seed: int = 0, h: float = DEFAULT_STEP) -> list[GroupResult]:
    """Every op case, then the full model; one result per parameter group."""
    if scale != "tiny":
        raise ValueError(f"unknown gradcheck scale {scale!r}; only 'tiny' is defined")
    results = []
    for name, loss, params in op_cases(seed):
        for pname, err in check_params(loss, params, h).items():
            results.append(GroupResult(f"op:{name}:{pname}", err))
    loss, params = model_case(seed)
    for pname, err in check_params(loss, params, h).items():
        results.append(GroupResult(f"model:{pname}", err))
    return results
