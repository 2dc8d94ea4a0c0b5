"""Experiment configuration: strict JSON schema and conversion to runtime objects."""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .model_zoo import HourglassConfig, check_geometry
from .pipeline import TrainConfig
from .scene_sim import SceneSpec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TargetSection(_Strict):
    x: float
    y: float
    vx: float
    vy: float
    peak: float
    sigma: float


class SceneSection(_Strict):
    frames: int = Field(64, ge=1)
    width: int = Field(256, ge=1)
    height: int = Field(256, ge=1)
    background_level: float = 100.0
    field_scale: float = Field(8.0, gt=0)
    field_amplitude: float = Field(10.0, ge=0)
    decoy_count: int = Field(40, ge=0)
    decoy_peak: tuple[float, float] = (50.0, 150.0)
    decoy_sigma: tuple[float, float] = (0.5, 0.9)
    targets: list[TargetSection] = []
    random_targets: int = Field(24, ge=0)
    target_peak: tuple[float, float] = (50.0, 150.0)
    target_sigma: tuple[float, float] = (0.5, 0.9)
    target_speed: tuple[float, float] = (0.5, 2.0)
    noise_sigma: float = Field(1.0, ge=0)


class CarveSection(_Strict):
    N: int = Field(16, ge=1)
    W: int = Field(64, ge=1)
    H: int = Field(64, ge=1)
    strides: Optional[tuple[int, int, int]] = None


class SplitSection(_Strict):
    fractions: tuple[float, float, float] = (0.5, 0.2, 0.3)

    @field_validator("fractions")
    @classmethod
    def _sum_to_one(cls, v):
        if any(f < 0 for f in v) or abs(sum(v) - 1) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")
        return v


class ModelSection(_Strict):
    depth: int = Field(2, ge=1)
    base_channels: int = Field(8, ge=1)
    kernels: list = [3, 3, 3]
    strides: list = [1, 1, 1]
    paddings: list = [1, 1, 1]
    pool: tuple[int, int, int] = (1, 2, 2)


class TrainSection(_Strict):
    epochs: int = Field(100, ge=1)
    batch_size: int = Field(8, ge=1)
    lr_hyde: float = Field(5.0e-4, gt=0)
    lr_jekyll: float = Field(5.0e-5, gt=0)
    lr_utterson: float = Field(5.0e-4, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    alpha: float = Field(1.0, ge=0)
    epsilon: float = Field(1e-3, gt=0)
    shuffle: bool = True


class EvalSection(_Strict):
    thresholds: list[float] = [round(0.05 * i, 10) for i in range(1, 20)]

    @field_validator("thresholds")
    @classmethod
    def _increasing(cls, v):
        if not v or any(b <= a for a, b in zip(v, v[1:])) or v[0] < 0 or v[-1] > 1:
            raise ValueError("thresholds must be strictly increasing within [0, 1]")
        return v


class PathsSection(_Strict):
    workspace: str = "workspace"


class ExperimentConfig(_Strict):
    """One document drives generation, training, evaluation and rendering.

    A single ``seed`` feeds the scene, the split and training; one model
    section is shared by all three networks, which differ only in head/loss.
    """

    seed: int = Field(0, ge=0, lt=2**64)
    scene: SceneSection = SceneSection()
    carve: CarveSection = CarveSection()
    split: SplitSection = SplitSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    eval: EvalSection = EvalSection()
    paths: PathsSection = PathsSection()

    @model_validator(mode="after")
    def _geometry(self):
        self.scene_spec()
        check_geometry(self.hourglass())
        return self

    def scene_spec(self) -> SceneSpec:
        d = self.scene.model_dump()
        d["targets"] = tuple(d["targets"])
        return SceneSpec(seed=self.seed, **d)

    def hourglass(self) -> HourglassConfig:
        return HourglassConfig(input_extent=(self.carve.N, self.carve.W, self.carve.H), **self.model.model_dump())

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.train.model_dump())

    def canonical_json(self) -> str:
        # the workspace location is not part of the experiment's identity
        return json.dumps(self.model_dump(mode="json", exclude={"paths"}), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def bundled_config_path(name: str = "desk") -> Path:
    return Path(str(resources.files("jekyll_hyde") / "configs" / f"{name}.json"))


def load_config(path: str | Path | None = None, seed: Optional[int] = None,
                workspace: str | Path | None = None) -> ExperimentConfig:
    """Read and validate a config file; ``seed``/``workspace`` override its values."""
    path = bundled_config_path() if path is None else Path(path)
    raw = json.loads(Path(path).read_text())
    if seed is not None:
        raw["seed"] = int(seed)
    if workspace is not None:
        raw.setdefault("paths", {})["workspace"] = str(workspace)
    return ExperimentConfig.model_validate(raw)
