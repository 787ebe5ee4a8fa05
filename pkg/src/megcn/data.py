"""Skeleton sequences: binary container, manifest, preprocessing, synthetic generator."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MEGCSKL1"
_HEADER = struct.Struct("<5I")
MAX_ELEMENTS = 1 << 28

SYNTH_CLASSES = ("in_phase", "anti_phase", "converge", "diverge")


class SkeletonFormatError(ValueError):
    pass


class MagicMismatchError(SkeletonFormatError):
    pass


class TruncatedPayloadError(SkeletonFormatError):
    pass


class ExtentOverflowError(SkeletonFormatError):
    pass


@dataclass
class SkeletonSequence:
    """One labelled two-entity sample, ``data`` shaped ``[2, C0, T0, N]``."""

    data: np.ndarray
    label: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4 or self.data.shape[0] != 2:
            raise ValueError(f"expected [2, C0, T0, N], got {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValueError(f"empty extent in {self.data.shape}")
        if self.label < 0:
            raise ValueError("label must be non-negative")

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def frames(self) -> int:
        return self.data.shape[2]

    @property
    def joints(self) -> int:
        return self.data.shape[3]


# ---------------------------------------------------------------- binary container

def encode_sequence(s: SkeletonSequence) -> bytes:
    e, c, t, n = s.data.shape
    return MAGIC + _HEADER.pack(e, c, t, n, s.label) + s.data.astype("<f8").tobytes(order="C")


def decode_sequence(buf: bytes) -> SkeletonSequence:
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise MagicMismatchError(f"bad magic {buf[:len(MAGIC)]!r}, expected {MAGIC!r}")
    off = len(MAGIC)
    if len(buf) < off + _HEADER.size:
        raise TruncatedPayloadError("file ends inside the header")
    e, c, t, n, label = _HEADER.unpack_from(buf, off)
    off += _HEADER.size
    if e != 2 or min(c, t, n) < 1:
        raise ExtentOverflowError(f"invalid extents entities={e} C0={c} T0={t} N={n}")
    count = e * c * t * n
    if count > MAX_ELEMENTS:
        raise ExtentOverflowError(f"{count} elements exceeds limit {MAX_ELEMENTS}")
    need = off + 8 * count
    if len(buf) < need:
        raise TruncatedPayloadError(f"payload has {len(buf) - off} bytes, header promises {8 * count}")
    if len(buf) > need:
        raise SkeletonFormatError(f"{len(buf) - need} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(e, c, t, n)
    return SkeletonSequence(data.astype(np.float64), int(label))


def save_sequence(s: SkeletonSequence, path) -> None:
    Path(path).write_bytes(encode_sequence(s))


def load_sequence(path) -> SkeletonSequence:
    return decode_sequence(Path(path).read_bytes())


# ---------------------------------------------------------------- preprocessing

def center_sequence(s: SkeletonSequence, ref_joint: int = 1) -> SkeletonSequence:
    """Subtract each entity's frame-0 position of ``ref_joint`` from all of its joints."""
    if not 0 <= ref_joint < s.joints:
        raise IndexError(f"ref_joint {ref_joint} out of range for {s.joints} joints")
    origin = s.data[:, :, :1, ref_joint : ref_joint + 1]
    return SkeletonSequence(s.data - origin, s.label)


def resize_temporal(s: SkeletonSequence, frames: int) -> SkeletonSequence:
    """Linearly resample the frame axis onto ``frames`` points spanning the original range."""
    if frames < 1:
        raise ValueError("target frame count must be >= 1")
    t0 = s.frames
    if frames == t0:
        return SkeletonSequence(s.data.copy(), s.label)
    pos = np.linspace(0.0, t0 - 1, frames)
    lo = np.minimum(np.floor(pos).astype(int), t0 - 1)
    hi = np.minimum(lo + 1, t0 - 1)
    frac = (pos - lo)[:, None]
    x = s.data
    out = x[:, :, lo, :] * (1.0 - frac) + x[:, :, hi, :] * frac
    # exact endpoints regardless of rounding in the blend
    out[:, :, 0, :] = x[:, :, 0, :]
    if frames > 1:
        out[:, :, -1, :] = x[:, :, -1, :]
    return SkeletonSequence(out, s.label)


def preprocess(s: SkeletonSequence, frames: int, center: bool = True, ref_joint: int = 1):
    if center:
        s = center_sequence(s, ref_joint)
    return resize_temporal(s, frames)


# ---------------------------------------------------------------- synthetic interactions

def synth_generate(seed: int, class_id: int, frames: int = 32, joints: int = 10) -> SkeletonSequence:
    """Two oscillating, drifting bodies whose class lives only in their relation.

    0 in-phase, 1 anti-phase, 2 converging, 3 diverging. Every random draw is
    made regardless of ``class_id`` so classes 0 and 1 share entity 0 exactly.
    """
    if joints < 4:
        raise ValueError("synthetic skeletons need at least 4 joints")
    if class_id not in range(4):
        raise ValueError(f"class_id must be in 0..3, got {class_id}")
    rng = np.random.default_rng([int(seed), 0x4D45])
    t = np.arange(frames, dtype=np.float64)

    period = rng.uniform(frames / 3.0, frames / 2.0)
    omega = 2.0 * np.pi / period
    theta0, theta_free = rng.uniform(0.0, 2.0 * np.pi, size=2)
    sigma0 = rng.choice([-1.0, 1.0])
    side = rng.choice([-1.0, 1.0])
    speed = rng.uniform(0.012, 0.018)
    gap = rng.uniform(1.4, 1.6)
    mid = rng.uniform(-0.5, 0.5)
    amp = rng.uniform(0.15, 0.25)
    direction = np.array([1.0, 0.3, 0.2]) + rng.normal(0.0, 0.05, 3)
    direction /= np.linalg.norm(direction)
    profile = amp * (0.2 + 0.8 * np.arange(joints) / (joints - 1))
    lag = 0.1 * np.arange(joints)
    shapes = np.stack([
        np.stack([rng.normal(0.0, 0.03, joints), 0.15 * np.arange(joints), rng.normal(0.0, 0.03, joints)])
        for _ in range(2)
    ])
    noise = rng.normal(0.0, 0.01, size=(2, 3, frames + 2, joints))
    noise = (noise[:, :, :-2] + noise[:, :, 1:-1] + noise[:, :, 2:]) / 3.0

    if class_id == 0:
        theta1, sigma1 = theta0, sigma0
    elif class_id == 1:
        theta1, sigma1 = theta0 + np.pi, sigma0
    elif class_id == 2:
        theta1, sigma1, side = theta_free, -sigma0, sigma0
    else:
        theta1, sigma1, side = theta_free, -sigma0, -sigma0

    data = np.empty((2, 3, frames, joints))
    for e, (theta, sigma, x0) in enumerate(
        [(theta0, sigma0, mid - side * gap / 2.0), (theta1, sigma1, mid + side * gap / 2.0)]
    ):
        swing = profile[None, :] * np.sin(omega * t[:, None] + theta + lag[None, :])
        body = shapes[e][:, None, :] + direction[:, None, None] * swing[None]
        body[0] += x0 + sigma * speed * t[:, None]
        data[e] = body + noise[e]
    return SkeletonSequence(data, class_id)


# ---------------------------------------------------------------- manifest

@dataclass
class DatasetManifest:
    class_names: list[str]
    records: list[tuple[str, int]] = field(default_factory=list)
    preset: str = "ntu25"
    channels: int = 3
    joints: int = 25

    def __post_init__(self):
        for path, label in self.records:
            if not 0 <= label < len(self.class_names):
                raise ValueError(f"record {path!r} label {label} outside {len(self.class_names)} classes")

    def dumps(self) -> str:
        lines = [
            "format=megcn-manifest-1",
            f"classes={','.join(self.class_names)}",
            f"preset={self.preset}",
            f"channels={self.channels}",
            f"joints={self.joints}",
            "records:",
        ]
        lines += [f"{path} {label}" for path, label in self.records]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "DatasetManifest":
        meta, records, in_records = {}, [], False
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if in_records:
                parts = line.rsplit(None, 1)
                if len(parts) != 2 or not parts[1].lstrip("-").isdigit():
                    raise ValueError(f"manifest line {lineno}: expected '<path> <label>'")
                records.append((parts[0], int(parts[1])))
            elif line == "records:":
                in_records = True
            elif "=" in line:
                key, value = line.split("=", 1)
                meta[key.strip()] = value.strip()
            else:
                raise ValueError(f"manifest line {lineno}: cannot parse {raw!r}")
        try:
            return cls(
                class_names=meta["classes"].split(","),
                records=records,
                preset=meta.get("preset", "ntu25"),
                channels=int(meta.get("channels", 3)),
                joints=int(meta["joints"]),
            )
        except KeyError as exc:
            raise ValueError(f"manifest missing key {exc.args[0]!r}") from None

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.loads(Path(path).read_text())


MANIFEST_NAME = "manifest.txt"


def load_dataset(directory) -> tuple[DatasetManifest, list[SkeletonSequence]]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest at {manifest_path}")
    manifest = DatasetManifest.load(manifest_path)
    samples = []
    for rel, label in manifest.records:
        s = load_sequence(directory / rel)
        if s.channels != manifest.channels or s.joints != manifest.joints:
            raise ValueError(f"{rel}: shape {s.data.shape} disagrees with manifest C0/N")
        if s.label != label:
            raise ValueError(f"{rel}: stored label {s.label} disagrees with manifest label {label}")
        samples.append(s)
    return manifest, samples


def write_synthetic_dataset(directory, per_class: int, frames: int = 32, joints: int = 10,
                            seed: int = 0, classes: int = 4) -> DatasetManifest:
    from .graph import preset_for_joints

    if not 1 <= classes <= 4:
        raise ValueError("the synthetic generator defines 4 classes")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for c in range(classes):
        for i in range(per_class):
            sample_seed = seed * 1_000_003 + i
            name = f"c{c}_{i:04d}.skl"
            save_sequence(synth_generate(sample_seed, c, frames, joints), directory / name)
            records.append((name, c))
    manifest = DatasetManifest(list(SYNTH_CLASSES[:classes]), records, preset_for_joints(joints), 3, joints)
    manifest.save(directory / MANIFEST_NAME)
    return manifest
