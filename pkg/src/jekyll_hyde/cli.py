"""``jekyll-hyde`` command line: generate, train, eval, render.

Everything lives under one workspace directory::

    data/     cube, carved subsets, manifest.json
    runs/     unsupervised/{jekyll,hyde}, supervised/utterson, record.jsonl, run.json
    eval/     <model>_sweep.csv, sweeps.png, eval.json
    figures/  sample_<id>.{pgm,png} and sample_<id>_cells.jht
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from . import __version__
from .config import ExperimentConfig, load_config
from .figures import plot_sweeps, render_panels, save_panel
from .model_zoo import load_checkpoint, save_checkpoint
from .pipeline import DivergenceError, evaluate, predict, train_supervised, train_unsupervised
from .scene_sim import carve_samples, gaussian_scale, generate_cube, load_subset, save_cube, save_subset, split_dataset

logger = logging.getLogger("jekyll_hyde")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_DIVERGED = 0, 2, 3, 4
SUBSETS = ("train", "val", "test")
MODELS = {"unsupervised": ("jekyll", "hyde"), "supervised": ("utterson",)}


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _data_hash(cfg: ExperimentConfig) -> str:
    """Identity of the dataset alone; training settings don't invalidate it."""
    d = cfg.model_dump(mode="json", include={"seed", "scene", "carve", "split"})
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _workspace_dir(cfg: ExperimentConfig, sub: str) -> Path:
    path = Path(cfg.paths.workspace) / sub
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"workspace not writable: {exc}", EXIT_MISSING) from exc
    return path


def _load_dataset(cfg: ExperimentConfig) -> tuple[dict, dict]:
    data = Path(cfg.paths.workspace) / "data"
    manifest_path = data / "manifest.json"
    if not manifest_path.exists():
        raise CommandError(f"no dataset at {data}; run `jekyll-hyde generate` with this config first", EXIT_MISSING)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("data_hash") != _data_hash(cfg):
        raise CommandError(f"dataset in {data} was generated from a different scene/carve/split/seed; "
                           "rerun `jekyll-hyde generate`", EXIT_MISSING)
    return manifest, {name: load_subset(data, manifest["subsets"][name]) for name in SUBSETS}


def _load_models(cfg: ExperimentConfig, names, required: bool) -> dict:
    runs = Path(cfg.paths.workspace) / "runs"
    models = {}
    for name in names:
        mode = "supervised" if name == "utterson" else "unsupervised"
        path = runs / mode / name
        if not (path / "manifest.json").exists():
            if required:
                raise CommandError(f"missing checkpoint {path}; run `jekyll-hyde train --mode {mode}` first",
                                   EXIT_MISSING)
            continue
        models[name] = load_checkpoint(path)
        stored = json.loads((path / "manifest.json").read_text()).get("config_hash")
        if stored != cfg.config_hash():
            logger.warning("checkpoint %s was trained under config %s", path, stored)
    if not models:
        raise CommandError(f"no checkpoints under {runs}; run `jekyll-hyde train` first", EXIT_MISSING)
    return models


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    data = _workspace_dir(cfg, "data")
    spec = cfg.scene_spec()
    cube = gaussian_scale(generate_cube(spec))
    samples = carve_samples(cube, cfg.carve.N, cfg.carve.W, cfg.carve.H, cfg.carve.strides)
    subsets = dict(zip(SUBSETS, split_dataset(samples, cfg.split.fractions, cfg.seed)))
    manifest = {
        "config_hash": cfg.config_hash(),
        "data_hash": _data_hash(cfg),
        "cube": save_cube(data, cube, spec),
        "sample_count": len(samples),
        "counts": {k: len(v) for k, v in subsets.items()},
        "subsets": {k: save_subset(data, k, v) for k, v in subsets.items()},
    }
    _write_json(data / "manifest.json", manifest)
    print(f"generated {len(samples)} samples "
          + " ".join(f"{k}={n}" for k, n in manifest["counts"].items()) + f" in {data}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    _, subsets = _load_dataset(cfg)
    out = _workspace_dir(cfg, f"runs/{args.mode}")
    tcfg, mcfg = cfg.train_config(), cfg.hourglass()
    try:
        if args.mode == "unsupervised":
            jekyll, hyde, record = train_unsupervised(subsets["train"], subsets["val"], tcfg, mcfg, dump_dir=out)
            trained = {"jekyll": jekyll, "hyde": hyde}
        else:
            utterson, record = train_supervised(subsets["train"], subsets["val"], tcfg, mcfg, dump_dir=out)
            trained = {"utterson": utterson}
    except DivergenceError as exc:
        raise CommandError(f"{exc}; diagnostics in {out / 'divergence.json'}", EXIT_DIVERGED) from exc
    extra = {"config_hash": cfg.config_hash()}
    for name, model in trained.items():
        record.checkpoints[name] = str(save_checkpoint(model, out / name, extra))
    (out / "record.jsonl").write_text(record.to_jsonl())
    _write_json(out / "run.json", {**record.summary(), "config_hash": cfg.config_hash()})
    first, last = record.train_losses()[0], record.train_losses()[-1]
    print(f"trained {', '.join(trained)} for {len(record.epochs)} epochs: "
          f"loss {first:.6f} -> {last:.6f} in {record.wall_clock:.1f}s; checkpoints in {out}")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    _, subsets = _load_dataset(cfg)
    models = _load_models(cfg, ("jekyll", "utterson"), required=False)
    out = _workspace_dir(cfg, "eval")
    tables = evaluate(models, subsets["test"], cfg.eval.thresholds, cfg.train.batch_size)
    files = {name: str(table.write_csv(out / f"{name}_sweep.csv")) for name, table in tables.items()}
    figure = plot_sweeps(tables, out / "sweeps.png", cfg.config_hash())
    _write_json(out / "eval.json", {
        "config_hash": cfg.config_hash(),
        "test_samples": len(subsets["test"]),
        "csv": files,
        "figure": str(figure),
        "checkpoint_epochs": {name: m.epoch for name, m in models.items()},
    })
    for name, table in tables.items():
        row = table.row_at(0.1) if 0.1 in table.thresholds else table.rows[0]
        m = row.metrics.as_floats()
        print(f"{name}: t={row.threshold:g} sensitivity={m['sensitivity']} specificity={m['specificity']} -> "
              f"{files[name]}")
    return EXIT_OK


def cmd_render(cfg: ExperimentConfig, args) -> int:
    _, subsets = _load_dataset(cfg)
    by_id = {s.sample_id: s for s in subsets["test"]}
    if args.sample not in by_id:
        shown = sorted(by_id)[:10]
        raise CommandError(f"sample {args.sample} is not in the test subset (test ids start {shown})", EXIT_CONFIG)
    sample = by_id[args.sample]
    models = _load_models(cfg, ("jekyll", "hyde", "utterson"), required=True)
    outs = {name: predict(m, [sample])[0] for name, m in models.items()}
    n_frames = sample.input.shape[1]
    frames = [f for f in (0, 4, 8, 12) if f < n_frames] or [0]
    panel = render_panels(sample.input, outs["jekyll"], outs["hyde"], outs["utterson"], sample.label,
                          frames=frames, gutter=args.gutter)
    out = _workspace_dir(cfg, "figures")
    files = save_panel(panel, out / f"sample_{args.sample}", cfg.config_hash())
    print(f"rendered sample {args.sample} ({len(frames)}x6 grid) -> {files['pgm']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jekyll-hyde", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="experiment JSON (default: bundled desk scenario)")
    p.add_argument("--seed", type=int, help="override the config seed (u64)")
    p.add_argument("--workspace", help="override the workspace directory")
    p.add_argument("-q", "--quiet", action="store_true", help="suppress per-epoch logging")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", help="render the scene, carve and split it into data/")
    t = sub.add_parser("train", help="train models into runs/")
    t.add_argument("--mode", choices=sorted(MODELS), default="unsupervised")
    t.add_argument("--epochs", type=int, help="override train.epochs")
    sub.add_parser("eval", help="threshold sweeps on the test subset into eval/")
    r = sub.add_parser("render", help="qualitative panel for one test sample into figures/")
    r.add_argument("--sample", type=int, required=True, help="sample id (see data/manifest.json)")
    r.add_argument("--gutter", type=int, default=2)
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config, seed=args.seed, workspace=args.workspace)
    if getattr(args, "epochs", None) is not None:
        cfg = ExperimentConfig.model_validate({**cfg.model_dump(), "train": {**cfg.train.model_dump(),
                                                                            "epochs": args.epochs}})
    return cfg


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "render": cmd_render}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError, ValidationError) as exc:
        # pydantic and json errors both subclass ValueError
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"config {cfg.config_hash()}")
    try:
        return COMMANDS[args.command](cfg, args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
