"""Training loops for the mask/background pair and the supervised baseline, plus evaluation."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor_core as tc
from .evaluation import SweepTable, rescale_unit, sweep
from .loss import bce_loss, dual_loss
from .model_zoo import Head, HourglassConfig, Model, build_hourglass, forward_hyde, forward_jekyll
from .scene_sim import Sample
from .tensor_core import Adam, Tensor

logger = logging.getLogger(__name__)

_SEED_TAGS = {"jekyll": 1, "hyde": 2, "utterson": 1, "shuffle": 3}


def derive_seed(seed: int, role: str) -> int:
    """Stable per-role seed. The baseline shares the mask model's initialisation."""
    return int(np.random.SeedSequence([int(seed), _SEED_TAGS[role]]).generate_state(1)[0])


class DivergenceError(FloatingPointError):
    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    lr_hyde: float = 5.0e-4
    lr_jekyll: float = 5.0e-5
    lr_utterson: float = 5.0e-4
    weight_decay: float = 0.01
    alpha: float = 1.0
    epsilon: float = 1e-3
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if min(self.lr_hyde, self.lr_jekyll, self.lr_utterson) <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class RunRecord:
    mode: str
    config: dict
    epochs: list = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoints: dict = field(default_factory=dict)
    optimizer_steps: dict = field(default_factory=dict)

    def train_losses(self) -> list[float]:
        return [e["train_loss"] for e in self.epochs]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.epochs)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("epochs")
        return d


def _batches(samples: Sequence[Sample], batch_size: int, order: Sequence[int]):
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        x = np.stack([samples[i].input for i in idx]).astype(np.float32)
        y = np.stack([samples[i].label for i in idx])
        yield idx, x, y


def _diagnostics(epoch: int, batch: int, idx, sample_ids, values: dict, models: dict) -> dict:
    return {
        "epoch": epoch,
        "batch": batch,
        "sample_ids": [int(sample_ids[i]) for i in idx],
        "values": {k: float(v) for k, v in values.items()},
        "parameter_norms": {
            name: {k: float(np.linalg.norm(p.data)) for k, p in m.params.items()} for name, m in models.items()
        },
    }


def _epoch_order(n: int, config: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(n) if config.shuffle else np.arange(n)


def unsupervised_batch_loss(jekyll: Model, hyde: Model, x: np.ndarray, config: TrainConfig):
    xt = Tensor(x)
    mask = forward_jekyll(jekyll, xt)
    background = forward_hyde(hyde, xt)
    return dual_loss(xt, mask, background, config.alpha, config.epsilon), mask


def train_unsupervised(train: Sequence[Sample], val: Sequence[Sample], config: TrainConfig,
                       model_config: HourglassConfig | None = None, jekyll: Model | None = None,
                       hyde: Model | None = None, on_epoch: Optional[Callable[[dict], None]] = None,
                       dump_dir: str | Path | None = None):
    """Joint training: one backward pass per batch, then one Adam step per model."""
    if not train:
        raise ValueError("empty training set")
    model_config = model_config or HourglassConfig()
    jekyll = jekyll or build_hourglass(model_config, Head.SIGMOID, derive_seed(config.seed, "jekyll"))
    hyde = hyde or build_hourglass(model_config, Head.FRAME_MEAN, derive_seed(config.seed, "hyde"))
    if jekyll.config != hyde.config:
        raise ValueError("mask and background models must share geometry")
    opt_j = Adam(jekyll.parameters(), lr=config.lr_jekyll, weight_decay=config.weight_decay)
    opt_h = Adam(hyde.parameters(), lr=config.lr_hyde, weight_decay=config.weight_decay)
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    record = RunRecord("unsupervised", {"train": asdict(config), "model": model_config.to_dict()})
    ids = [s.sample_id for s in train]
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        sums = {"total": 0.0, "background_term": 0.0, "mask_cost": 0.0}
        above = 0
        n_seen = 0
        order = _epoch_order(len(train), config, rng)
        for b, (idx, x, _) in enumerate(_batches(train, config.batch_size, order)):
            parts, mask = unsupervised_batch_loss(jekyll, hyde, x, config)
            vals = parts.to_dict()
            if not np.isfinite(vals["total"]):
                dump = _diagnostics(epoch, b, idx, ids, vals, {"jekyll": jekyll, "hyde": hyde})
                _write_dump(dump, dump_dir)
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}", dump)
            opt_j.zero_grad()
            opt_h.zero_grad()
            tc.backward(parts.total)
            opt_j.step()
            opt_h.step()
            k = len(idx)
            for key in sums:
                sums[key] += vals[key] * k
            above += int(np.count_nonzero(mask.data > 1 - config.epsilon))
            n_seen += k
        row = {
            "epoch": epoch,
            "train_loss": sums["total"] / n_seen,
            "train_background_term": sums["background_term"] / n_seen,
            "train_mask_cost": sums["mask_cost"] / n_seen,
            # entries where -ln(J + eps) < 0, i.e. the mask earns negative loss
            "mask_above_1_minus_eps": above / (n_seen * int(np.prod(train[0].input.shape))),
            "val_loss": validate_unsupervised(jekyll, hyde, val, config) if val else None,
        }
        record.epochs.append(row)
        jekyll.epoch = hyde.epoch = epoch
        logger.info("epoch %d train %.6f val %s", epoch, row["train_loss"], row["val_loss"])
        if on_epoch:
            on_epoch(row)
    record.wall_clock = time.perf_counter() - start
    record.optimizer_steps = {"jekyll": opt_j.state.step, "hyde": opt_h.state.step}
    return jekyll, hyde, record


def validate_unsupervised(jekyll: Model, hyde: Model, val: Sequence[Sample], config: TrainConfig) -> float:
    total = 0.0
    with tc.no_grad():
        for idx, x, _ in _batches(val, config.batch_size, np.arange(len(val))):
            parts, _ = unsupervised_batch_loss(jekyll, hyde, x, config)
            total += parts.total.item() * len(idx)
    return total / len(val)


def train_supervised(train: Sequence[Sample], val: Sequence[Sample], config: TrainConfig,
                     model_config: HourglassConfig | None = None, utterson: Model | None = None,
                     on_epoch: Optional[Callable[[dict], None]] = None, dump_dir: str | Path | None = None):
    """Baseline: same architecture as the mask model, BCE against the label cubes."""
    if not train:
        raise ValueError("empty training set")
    model_config = model_config or HourglassConfig()
    utterson = utterson or build_hourglass(model_config, Head.SIGMOID, derive_seed(config.seed, "utterson"))
    opt = Adam(utterson.parameters(), lr=config.lr_utterson, weight_decay=config.weight_decay)
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    record = RunRecord("supervised", {"train": asdict(config), "model": model_config.to_dict()})
    ids = [s.sample_id for s in train]
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        n_seen = 0
        order = _epoch_order(len(train), config, rng)
        for b, (idx, x, y) in enumerate(_batches(train, config.batch_size, order)):
            loss = bce_loss(forward_jekyll(utterson, Tensor(x)), y)
            value = loss.item()
            if not np.isfinite(value):
                dump = _diagnostics(epoch, b, idx, ids, {"bce": value}, {"utterson": utterson})
                _write_dump(dump, dump_dir)
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}", dump)
            opt.zero_grad()
            tc.backward(loss)
            opt.step()
            total += value * len(idx)
            n_seen += len(idx)
        row = {"epoch": epoch, "train_loss": total / n_seen,
               "val_loss": validate_supervised(utterson, val, config) if val else None}
        record.epochs.append(row)
        utterson.epoch = epoch
        logger.info("epoch %d train %.6f val %s", epoch, row["train_loss"], row["val_loss"])
        if on_epoch:
            on_epoch(row)
    record.wall_clock = time.perf_counter() - start
    record.optimizer_steps = {"utterson": opt.state.step}
    return utterson, record


def validate_supervised(model: Model, val: Sequence[Sample], config: TrainConfig) -> float:
    total = 0.0
    with tc.no_grad():
        for idx, x, y in _batches(val, config.batch_size, np.arange(len(val))):
            total += bce_loss(forward_jekyll(model, Tensor(x)), y).item() * len(idx)
    return total / len(val)


def _write_dump(dump: dict, dump_dir) -> None:
    if dump_dir is None:
        return
    path = Path(dump_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / "divergence.json").write_text(json.dumps(dump, indent=2, sort_keys=True) + "\n")


def predict(model: Model, samples: Sequence[Sample], batch_size: int = 8) -> np.ndarray:
    """Stacked head outputs for ``samples`` (no graph recorded)."""
    outs = []
    with tc.no_grad():
        for _, x, _ in _batches(samples, batch_size, np.arange(len(samples))):
            outs.append(model(Tensor(x)).data)
    return np.concatenate(outs, axis=0)


def evaluate(models: dict, test: Sequence[Sample], thresholds=None, batch_size: int = 8) -> dict:
    """Sweep tables on the test subset for ``{"jekyll": m, "utterson": m}``.

    Baseline outputs are min/max rescaled over the whole subset first.
    """
    if not test:
        raise ValueError("empty test set")
    labels = np.stack([s.label for s in test])
    tables: dict[str, SweepTable] = {}
    for name, model in models.items():
        out = predict(model, test, batch_size)
        if name == "utterson":
            out = rescale_unit(out)
        tables[name] = sweep(out, labels, thresholds)
    return tables
