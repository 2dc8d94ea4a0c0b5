"""Hourglass 3-D CNN shared by the mask, background and supervised models."""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor_core as tc
from .tensor_core import Tensor, jht


class Head(str, enum.Enum):
    SIGMOID = "sigmoid"
    FRAME_MEAN = "frame_mean"


class HeadMismatchError(ValueError):
    pass


def _as_triples(v, depth: int, name: str) -> tuple:
    """Accept one (t, w, h) triple for all stages or a list of per-stage triples."""
    v = tuple(v)
    if len(v) == 3 and all(isinstance(x, (int, np.integer)) for x in v):
        return tuple(tuple(int(x) for x in v) for _ in range(depth))
    if len(v) != depth:
        raise ValueError(f"{name}: expected {depth} per-stage triples, got {len(v)}")
    out = tuple(tuple(int(x) for x in t) for t in v)
    if any(len(t) != 3 for t in out):
        raise ValueError(f"{name}: every entry must have 3 values")
    return out


@dataclass(frozen=True)
class HourglassConfig:
    depth: int = 2
    base_channels: int = 8
    kernels: tuple = (3, 3, 3)
    strides: tuple = (1, 1, 1)
    paddings: tuple = (1, 1, 1)
    pool: tuple = (1, 2, 2)
    in_channels: int = 1
    input_extent: tuple = (16, 64, 64)

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ValueError("depth and base_channels must be positive")
        object.__setattr__(self, "kernels", _as_triples(self.kernels, self.depth, "kernels"))
        object.__setattr__(self, "strides", _as_triples(self.strides, self.depth, "strides"))
        object.__setattr__(self, "paddings", _as_triples(self.paddings, self.depth, "paddings"))
        object.__setattr__(self, "pool", tuple(int(x) for x in self.pool))
        object.__setattr__(self, "input_extent", tuple(int(x) for x in self.input_extent))

    @property
    def channels(self) -> list[int]:
        """Encoder output channels per stage; doubles each stage."""
        return [self.base_channels * 2**s for s in range(self.depth)]

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(map(list, v)) if k in ("kernels", "strides", "paddings") else (list(v) if isinstance(v, tuple) else v))
                for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "HourglassConfig":
        return cls(**d)


def closed_form_parameter_count(cfg: HourglassConfig) -> int:
    kv = [int(np.prod(k)) for k in cfg.kernels]
    ch = cfg.channels
    total = 0
    prev = cfg.in_channels
    for s in range(cfg.depth):
        total += prev * ch[s] * kv[s] + ch[s]
        prev = ch[s]
    for s in range(cfg.depth):
        out = cfg.base_channels if s == 0 else ch[s - 1]
        total += 2 * ch[s] * out * kv[s] + out
    total += cfg.base_channels + 1
    return total


def _glorot(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    rf = int(np.prod(shape[2:]))
    bound = np.sqrt(6.0 / ((shape[0] + shape[1]) * rf))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


@dataclass
class Model:
    """Encoder/decoder graph over named parameter tensors.

    Encoder stage ``s``: conv3d, ReLU, maxpool (indices kept). Decoder stage
    ``s`` (deepest first): maxunpool, concatenate the stage-``s`` encoder
    activation, conv_transpose3d, ReLU. A 1x1x1 conv projects to one channel
    and the head is applied last.
    """

    config: HourglassConfig
    head: Head
    seed: int
    params: dict = field(default_factory=dict)
    epoch: int = 0

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def describe(self) -> list[tuple]:
        """Layer listing used to compare architectures."""
        cfg = self.config
        layers = []
        for s in range(cfg.depth):
            layers.append(("conv3d", f"enc{s}", self.params[f"enc{s}.weight"].shape, cfg.strides[s], cfg.paddings[s]))
            layers.append(("relu",))
            layers.append(("maxpool3d", cfg.pool))
        for s in reversed(range(cfg.depth)):
            layers.append(("maxunpool3d", cfg.pool))
            layers.append(("concat_channels", f"enc{s}"))
            layers.append(("conv_transpose3d", f"dec{s}", self.params[f"dec{s}.weight"].shape, cfg.strides[s], cfg.paddings[s]))
            layers.append(("relu",))
        layers.append(("conv3d", "proj", self.params["proj.weight"].shape, (1, 1, 1), (0, 0, 0)))
        return layers

    def forward_features(self, x: Tensor) -> Tensor:
        """Last-layer activation before the head, shape (K, 1, N, W, H)."""
        cfg = self.config
        if x.ndim != 5 or x.shape[1] != cfg.in_channels:
            raise ValueError(f"expected input (K, {cfg.in_channels}, N, W, H), got {x.shape}")
        p = self.params
        skips = []
        h = x
        for s in range(cfg.depth):
            a = tc.relu(tc.conv3d(h, p[f"enc{s}.weight"], p[f"enc{s}.bias"], cfg.strides[s], cfg.paddings[s]))
            pooled, idx = tc.maxpool3d(a, cfg.pool)
            skips.append((a, idx))
            h = pooled
        for s in reversed(range(cfg.depth)):
            a, idx = skips[s]
            up = tc.maxunpool3d(h, idx, a.shape)
            h = tc.concat_channels(up, a)
            h = tc.relu(tc.conv_transpose3d(h, p[f"dec{s}.weight"], p[f"dec{s}.bias"], cfg.strides[s], cfg.paddings[s]))
        return tc.conv3d(h, p["proj.weight"], p["proj.bias"])

    def __call__(self, x: Tensor) -> Tensor:
        feats = self.forward_features(x)
        if self.head is Head.SIGMOID:
            return tc.sigmoid(feats)
        return tc.mean_over_time(feats)

    def astype(self, dtype) -> "Model":
        """Copy with parameters cast (float64 copies back gradient checks)."""
        params = {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad, dtype=dtype) for k, v in self.params.items()}
        return Model(self.config, self.head, self.seed, params, self.epoch)

    def state_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(self.params[k].data.tobytes())
        return h.hexdigest()


def check_geometry(cfg: HourglassConfig) -> None:
    ext = cfg.input_extent
    for s in range(cfg.depth):
        k, st, pd = cfg.kernels[s], cfg.strides[s], cfg.paddings[s]
        conv_ext = tuple((n + 2 * p - kk) // ss + 1 for n, p, kk, ss in zip(ext, pd, k, st))
        back = tuple((n - 1) * ss - 2 * p + kk for n, p, kk, ss in zip(conv_ext, pd, k, st))
        if min(conv_ext) < 1 or back != ext:
            raise ValueError(f"stage {s}: conv geometry maps {ext} to {conv_ext}, transpose does not restore it")
        for n, q in zip(conv_ext, cfg.pool):
            if n % q:
                raise ValueError(
                    f"stage {s}: extent {conv_ext} not divisible by pool {cfg.pool} "
                    f"(spatial size must be divisible by 2^depth)"
                )
        ext = tuple(n // q for n, q in zip(conv_ext, cfg.pool))


def build_hourglass(config: HourglassConfig, head: Head | str, seed: int) -> Model:
    head = Head(head)
    check_geometry(config)
    rng = np.random.default_rng(seed)
    ch = config.channels
    params: dict[str, Tensor] = {}

    def add(name, shape):
        params[f"{name}.weight"] = Tensor(_glorot(rng, shape), requires_grad=True, name=f"{name}.weight")
        out_ch = shape[0] if name.startswith(("enc", "proj")) else shape[1]
        params[f"{name}.bias"] = Tensor(np.zeros(out_ch, np.float32), requires_grad=True, name=f"{name}.bias")

    prev = config.in_channels
    for s in range(config.depth):
        add(f"enc{s}", (ch[s], prev) + config.kernels[s])
        prev = ch[s]
    for s in reversed(range(config.depth)):
        out = config.base_channels if s == 0 else ch[s - 1]
        add(f"dec{s}", (2 * ch[s], out) + config.kernels[s])
    add("proj", (1, config.base_channels, 1, 1, 1))
    return Model(config, head, int(seed), params)


def forward_jekyll(model: Model, x: Tensor) -> Tensor:
    if model.head is not Head.SIGMOID:
        raise HeadMismatchError(f"mask model needs a sigmoid head, got {model.head.value}")
    return model(x)


def forward_hyde(model: Model, x: Tensor) -> Tensor:
    if model.head is not Head.FRAME_MEAN:
        raise HeadMismatchError(f"background model needs a frame-mean head, got {model.head.value}")
    return model(x)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Model, directory: str | Path, extra: Optional[dict] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, t in model.params.items():
        fname = f"{name}.jht"
        jht.save(directory / fname, t.data.astype(np.float32, copy=False))
        files[name] = fname
    manifest = {
        "config": model.config.to_dict(),
        "head": model.head.value,
        "seed": model.seed,
        "epoch": model.epoch,
        "parameters": files,
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory: str | Path) -> Model:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    cfg = HourglassConfig.from_dict(manifest["config"])
    model = build_hourglass(cfg, manifest["head"], manifest["seed"])
    for name, fname in manifest["parameters"].items():
        if name not in model.params:
            raise KeyError(f"checkpoint has unknown parameter {name}")
        arr = jht.load(directory / fname)
        if arr.shape != model.params[name].shape:
            raise ValueError(f"{name}: checkpoint shape {arr.shape} != {model.params[name].shape}")
        model.params[name] = Tensor(arr, requires_grad=True, name=name)
    model.epoch = int(manifest.get("epoch", 0))
    return model
