"""Synthetic infrared-like scenes with static clutter and unresolved movers.

Cubes are indexed ``[frame, x, y]`` (time, width, height). Targets are
Gaussian point-spread blobs with sub-pixel sigma moving at constant velocity;
decoys are the same kind of blob held still, so only motion separates them.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .tensor_core import jht

LABEL_FRACTION = 0.1


@dataclass(frozen=True)
class Target:
    x: float
    y: float
    vx: float
    vy: float
    peak: float
    sigma: float


@dataclass(frozen=True)
class SceneSpec:
    frames: int = 64
    width: int = 256
    height: int = 256
    background_level: float = 100.0
    field_scale: float = 12.0
    field_amplitude: float = 20.0
    decoy_count: int = 0
    decoy_peak: tuple = (20.0, 60.0)
    decoy_sigma: tuple = (0.5, 0.9)
    targets: tuple = ()
    random_targets: int = 0
    target_peak: tuple = (20.0, 60.0)
    target_sigma: tuple = (0.5, 0.9)
    target_speed: tuple = (0.5, 2.0)
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(t if isinstance(t, Target) else Target(**t) for t in self.targets))
        for name in ("decoy_peak", "decoy_sigma", "target_peak", "target_sigma", "target_speed"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if min(self.frames, self.width, self.height) < 1:
            raise ValueError("cube extents must be positive")
        for t in self.targets:
            if not 0 < t.sigma < 1:
                raise ValueError(f"target sigma {t.sigma} must lie in (0, 1) for an unresolved target")
            if not (0 <= t.x <= self.width - 1 and 0 <= t.y <= self.height - 1):
                raise ValueError(f"target starts outside the cube at ({t.x}, {t.y})")
        for lo, hi in (self.target_sigma, self.decoy_sigma):
            if not 0 < lo <= hi < 1:
                raise ValueError("point-spread sigma ranges must lie in (0, 1)")
        if self.noise_sigma < 0 or self.random_targets < 0 or self.decoy_count < 0:
            raise ValueError("counts and noise must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = [asdict(t) for t in self.targets]
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["targets"] = tuple(Target(**t) for t in d.get("targets", ()))
        return cls(**d)


@dataclass
class DataCube:
    intensity: np.ndarray
    labels: np.ndarray
    mu: Optional[float] = None
    sigma: Optional[float] = None
    targets: tuple = ()

    @property
    def scaled(self) -> bool:
        return self.mu is not None


@dataclass
class Sample:
    input: np.ndarray
    label: np.ndarray
    sample_id: int = 0
    cube_id: int = 0
    offset: tuple = (0, 0, 0)

    def provenance(self) -> dict:
        return {"sample_id": self.sample_id, "cube_id": self.cube_id, "offset": list(self.offset)}


def _deposit(frame: np.ndarray, labels: np.ndarray, x: float, y: float, peak: float, sigma: float) -> bool:
    """Add one blob to ``frame`` and mark its label pixels; False when off-cube."""
    W, H = frame.shape
    r = int(math.ceil(3 * sigma))
    cx, cy = int(round(x)), int(round(y))
    x0, x1 = max(cx - r, 0), min(cx + r + 1, W)
    y0, y1 = max(cy - r, 0), min(cy + r + 1, H)
    if x0 >= x1 or y0 >= y1:
        return False
    gx = np.arange(x0, x1, dtype=np.float64) - x
    gy = np.arange(y0, y1, dtype=np.float64) - y
    blob = peak * np.exp(-(gx[:, None] ** 2 + gy[None, :] ** 2) / (2 * sigma**2))
    frame[x0:x1, y0:y1] += blob
    if labels is not None:
        labels[x0:x1, y0:y1] |= blob > LABEL_FRACTION * blob.max()
    return True


def draw_targets(spec: SceneSpec, rng: np.random.Generator) -> tuple[Target, ...]:
    out = []
    for _ in range(spec.random_targets):
        speed = rng.uniform(*spec.target_speed)
        angle = rng.uniform(0, 2 * np.pi)
        out.append(Target(
            x=float(rng.uniform(0, spec.width - 1)),
            y=float(rng.uniform(0, spec.height - 1)),
            vx=float(speed * np.cos(angle)),
            vy=float(speed * np.sin(angle)),
            peak=float(rng.uniform(*spec.target_peak)),
            sigma=float(rng.uniform(*spec.target_sigma)),
        ))
    return tuple(out)


def generate_cube(spec: SceneSpec) -> DataCube:
    """Render a raw (unscaled) cube and its binary target labels."""
    rng = np.random.default_rng(spec.seed)
    F, W, H = spec.frames, spec.width, spec.height
    background = np.full((W, H), spec.background_level, dtype=np.float64)
    if spec.field_amplitude > 0:
        field_ = gaussian_filter(rng.standard_normal((W, H)), spec.field_scale, mode="wrap")
        std = field_.std()
        if std > 0:
            background += spec.field_amplitude * field_ / std
    for _ in range(spec.decoy_count):
        _deposit(background, None, rng.uniform(0, W - 1), rng.uniform(0, H - 1),
                 rng.uniform(*spec.decoy_peak), rng.uniform(*spec.decoy_sigma))
    targets = spec.targets + draw_targets(spec, rng)
    intensity = np.repeat(background[None], F, axis=0)
    labels = np.zeros((F, W, H), dtype=bool)
    for t in targets:
        for f in range(F):
            _deposit(intensity[f], labels[f], t.x + t.vx * f, t.y + t.vy * f, t.peak, t.sigma)
    if spec.noise_sigma > 0:
        intensity += rng.normal(0.0, spec.noise_sigma, size=intensity.shape)
    return DataCube(intensity.astype(np.float32), labels.astype(np.uint8), targets=targets)


def gaussian_scale(cube: DataCube) -> DataCube:
    """Shift and scale the whole cube to mean 0, population std 1."""
    raw = cube.intensity.astype(np.float64)
    mu = float(raw.mean())
    sigma = float(raw.std())
    if not sigma > 0:
        raise ValueError("cannot scale a constant cube (standard deviation is 0)")
    scaled = ((raw - mu) / sigma).astype(np.float32)
    return DataCube(scaled, cube.labels, mu, sigma, cube.targets)


def tile_origins(shape: Sequence[int], extent: Sequence[int], strides: Optional[Sequence[int]] = None) -> list[tuple]:
    """Corner offsets of every full tile; partial tiles at the far edges are dropped."""
    extent = tuple(int(e) for e in extent)
    strides = extent if strides is None else tuple(int(s) for s in strides)
    if min(strides) < 1:
        raise ValueError("strides must be >= 1")
    if any(e > s for e, s in zip(extent, shape)):
        raise ValueError(f"sample extent {extent} exceeds cube extent {tuple(shape)}")
    axes = [range(0, n - e + 1, st) for n, e, st in zip(shape, extent, strides)]
    return [(t, x, y) for t in axes[0] for x in axes[1] for y in axes[2]]


def carve_samples(cube: DataCube, N: int = 16, W: int = 64, H: int = 64,
                  strides: Optional[Sequence[int]] = None, cube_id: int = 0) -> list[Sample]:
    """Tile the cube into (1, N, W, H) samples; intensity and labels are cut identically."""
    samples = []
    for sid, (t, x, y) in enumerate(tile_origins(cube.intensity.shape, (N, W, H), strides)):
        sl = (slice(t, t + N), slice(x, x + W), slice(y, y + H))
        samples.append(Sample(cube.intensity[sl][None].copy(), cube.labels[sl][None].copy(), sid, cube_id, (t, x, y)))
    return samples


def split_counts(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    n_train = math.floor(fractions[0] * n + 1e-9)
    n_val = math.floor(fractions[1] * n + 1e-9)
    return n_train, n_val, n - n_train - n_val


def split_dataset(samples: Sequence, fractions: Sequence[float] = (0.5, 0.2, 0.3), seed: int = 0):
    """Seeded shuffle then contiguous train/val/test partition; remainder goes to test."""
    if len(samples) == 0:
        raise ValueError("cannot split an empty sample list")
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_train, n_val, _ = split_counts(len(samples), fractions)
    picked = [samples[i] for i in order]
    return picked[:n_train], picked[n_train:n_train + n_val], picked[n_train + n_val:]


# ---------------------------------------------------------------------------
# persistence


def stack_samples(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([s.input for s in samples]).astype(np.float32),
            np.stack([s.label for s in samples]).astype(np.uint8))


def save_subset(directory: Path, name: str, samples: Sequence[Sample]) -> dict:
    inputs, labels = stack_samples(samples)
    jht.save(directory / f"{name}_inputs.jht", inputs)
    jht.save(directory / f"{name}_labels.jht", labels)
    return {"inputs": f"{name}_inputs.jht", "labels": f"{name}_labels.jht",
            "samples": [s.provenance() for s in samples]}


def load_subset(directory: Path, entry: dict) -> list[Sample]:
    inputs = jht.load(directory / entry["inputs"])
    labels = jht.load(directory / entry["labels"])
    return [Sample(inputs[i], labels[i], p["sample_id"], p["cube_id"], tuple(p["offset"]))
            for i, p in enumerate(entry["samples"])]


def save_cube(directory: Path, cube: DataCube, spec: SceneSpec, stem: str = "cube") -> dict:
    jht.save(directory / f"{stem}_intensity.jht", cube.intensity)
    jht.save(directory / f"{stem}_labels.jht", cube.labels)
    sidecar = {
        "spec": spec.to_dict(),
        "seed": spec.seed,
        "scaling": {"mu": cube.mu, "sigma": cube.sigma},
        "targets": [asdict(t) for t in cube.targets],
        "intensity": f"{stem}_intensity.jht",
        "labels": f"{stem}_labels.jht",
    }
    (directory / f"{stem}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return sidecar
