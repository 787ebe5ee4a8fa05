"""me-GCN assembly: input normalization, stacked layers, inference head, variants."""
from __future__ import annotations

import dataclasses
import struct
from pathlib import Path

import numpy as np

from .autodiff import (
    Param,
    ShapeError,
    Tensor,
    absolute,
    dropout,
    global_mean,
    linear,
    no_grad,
    tsum,
)
from .config import VARIANTS, ConfigError, ModelConfig, RunConfig, dump_config, parse_config
from .graph import preset, static_adjacency
from .layers import MeGcLayer, Module, RunningNorm, mte_parts

EPS = 1e-5


class InputNorm(RunningNorm):
    """Standardize every (channel, joint) slot along time, pooled over batch and entities."""

    def __init__(self, channels: int, joints: int, momentum: float = 0.1):
        super().__init__((channels, 1, joints), momentum, EPS)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.ndim != 5:
            raise ShapeError(f"input batch must be [B, E, C, T, N], got {x.shape}")
        return super().__call__(x, training)


class Head(Module):
    def __init__(self, channels: int, num_classes: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(channels)
        self.weight = Param(rng.uniform(-bound, bound, (num_classes, channels)))
        self.bias = Param(rng.uniform(-bound, bound, num_classes), decay=False)


def inference_head(features: Tensor, head: Head, rate: float = 0.0,
                   rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    """``[B, E, C, T, N]`` features to ``[B, num_classes]`` logits: entity sum, global mean, dropout, fc."""
    if features.ndim != 5:
        raise ShapeError(f"head expects [B, E, C, T, N], got {features.shape}")
    if features.shape[2] != head.weight.shape[1]:
        raise ShapeError(f"head expects {head.weight.shape[1]} channels, got {features.shape[2]}")
    pooled = global_mean(tsum(features, axis=1))
    return linear(dropout(pooled, rate, rng, training), head.weight, head.bias)


class MeGCN(Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.init_seed)
        graph = preset(config.preset)
        adj = static_adjacency(graph)
        self.num_joints = graph.num_joints
        self.early = config.variant == "early_fusion"
        c0 = config.in_channels * (2 if self.early else 1)
        self.norm = InputNorm(c0, graph.num_joints)
        self.layers = []
        c_in = c0
        for k, (c_out, stride) in enumerate(zip(config.channels, config.strides)):
            self.layers.append(MeGcLayer(
                c_in, c_out, adj, rng,
                stride=stride, rel_channels=config.rel_channels(c_in),
                mutual_mte=config.mutual_mte[k], mutual_mfe=config.mutual_mfe[k],
                use_tc=config.use_tc, residual=config.residual, norm=config.layer_norm, tc_kernel=config.tc_kernel,
                tc_dilations=config.tc_dilations, alpha_init=config.alpha_init, beta_init=config.beta_init,
            ))
            c_in = c_out
        self.head = Head(c_in, config.num_classes, rng)

    def embed(self, x, training: bool = False, stop_before: int | None = None) -> Tensor:
        """Run the input layer and the first ``stop_before`` graph layers (all by default)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 5 or x.shape[1] != 2:
            raise ShapeError(f"expected a batch [B, 2, C0, T0, N], got {x.shape}")
        if x.shape[-1] != self.num_joints:
            raise ShapeError(f"model built for {self.num_joints} joints, batch has {x.shape[-1]}")
        if self.early:
            b, e, c, t, n = x.shape
            x = x.reshape(b, 1, e * c, t, n)
        h = self.norm(x, training)
        for layer in self.layers[:stop_before]:
            h = layer(h, training=training)
        return h

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        h = self.embed(x, training)
        return inference_head(h, self.head, self.config.dropout, rng, training)

    __call__ = forward

    def predict(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = []
        with no_grad():
            for i in range(0, len(x), batch_size):
                out.append(self.forward(x[i : i + batch_size], training=False).data)
        return np.concatenate(out, axis=0)

    def state(self) -> dict[str, np.ndarray]:
        """Parameters followed by populated running statistics, keyed by attribute path."""
        return {**{name: p.data for name, p in self.named_params()}, **dict(self.named_buffers())}

    def load_state(self, state: dict[str, np.ndarray]):
        params = dict(self.named_params())
        missing = set(params) - set(state)
        if missing:
            raise ShapeError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        owners = {}
        for prefix, module in self.named_modules():
            for key in module.buffer_names:
                owners[prefix + key] = (module, key)
        for name, value in state.items():
            if name in owners:
                module, key = owners[name]
                if np.shape(value) != module.scale.shape:
                    raise ShapeError(f"{name}: shape {np.shape(value)} vs {module.scale.shape}")
                setattr(module, key, np.array(value, dtype=np.float64, copy=True))
                continue
            if name not in params:
                raise ShapeError(f"checkpoint has unknown entry {name!r}")
            p = params[name]
            if p.shape != value.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} vs model {p.shape}")
            p.data = np.array(value, dtype=np.float64, copy=True)
            p.zero_grad()


def variant_config(kind: str, config: ModelConfig) -> ModelConfig:
    """Model configuration for one of the ablation variants."""
    if kind not in VARIANTS:
        raise ConfigError(f"unknown variant {kind!r}; choose from {', '.join(VARIANTS)}")
    k = config.num_layers
    off = (False,) * k
    if kind == "me_gcn":
        return dataclasses.replace(config, variant=kind)
    if kind in ("baseline_tc", "late_fusion", "early_fusion"):
        return dataclasses.replace(config, variant=kind, mutual_mte=off, mutual_mfe=off)
    return dataclasses.replace(config, variant=kind, mutual_mte=off, mutual_mfe=off, use_tc=False)


def build_variant(kind: str, config: ModelConfig) -> MeGCN:
    return MeGCN(variant_config(kind, config))


def activation_scores(model: MeGCN, sample: np.ndarray) -> dict[str, np.ndarray]:
    """Per-joint share of the last layer's adjacency mass, before and after the fusion block.

    ``sample`` is one preprocessed ``[2, C0, T0, N]`` sequence. Returns
    ``{"pre": [E, N], "post": [E, N]}``, each row summing to one.
    """
    x = np.asarray(sample, dtype=np.float64)[None]
    last = model.layers[-1]
    with no_grad():
        h = model.embed(x, training=False, stop_before=len(model.layers) - 1)
        parts = mte_parts(h, last.mte, mutual=last.mutual_mte, keep_intra_adjacency=True)
    return {
        "pre": adjacency_scores(parts.adjacency_intra.data[0]),
        "post": adjacency_scores(parts.adjacency.data[0]),
    }


def adjacency_scores(adjacency: np.ndarray) -> np.ndarray:
    """``[..., C, N, N] -> [..., N]``: absolute mass per target joint, normalized to sum 1."""
    mass = np.abs(adjacency).sum(axis=(-3, -2))
    total = mass.sum(axis=-1, keepdims=True)
    n = mass.shape[-1]
    return np.where(total > 0, mass / np.where(total > 0, total, 1.0), 1.0 / n)


# ---------------------------------------------------------------- checkpoint

CKPT_MAGIC = b"MEGCCKPT"


def save_checkpoint(model: MeGCN, path, run: RunConfig | None = None) -> None:
    run = run or RunConfig(model=model.config)
    run = RunConfig(model=model.config, train=run.train)
    text = dump_config(run).encode("utf-8")
    chunks = [CKPT_MAGIC, struct.pack("<I", len(text)), text]
    state = model.state()
    chunks.append(struct.pack("<I", len(state)))
    for name, value in state.items():
        raw = name.encode("utf-8")
        value = np.asarray(value, dtype="<f8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path) -> tuple[RunConfig, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (magic {buf[:8]!r})")
    off = 8

    def take(fmt):
        nonlocal off
        vals = struct.unpack_from(fmt, buf, off)
        off += struct.calcsize(fmt)
        return vals

    try:
        (n,) = take("<I")
        run = parse_config(buf[off : off + n].decode("utf-8"), source=f"{path}[config]")
        off += n
        (count,) = take("<I")
        state = {}
        for _ in range(count):
            (ln,) = take("<I")
            name = buf[off : off + ln].decode("utf-8")
            off += ln
            (ndim,) = take("<I")
            shape = take(f"<{ndim}I") if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            if off + 8 * size > len(buf):
                raise ValueError("truncated tensor payload")
            state[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint ({exc})") from None
    return run, state


def load_checkpoint(path) -> tuple[MeGCN, RunConfig]:
    run, state = read_checkpoint(path)
    model = MeGCN(run.model)
    model.load_state(state)
    return model, run
