"""Qualitative panels and sweep curves.

A panel is a 4-row grid (one row per displayed frame) with the columns
Input, Hyde, Jekyll, Subtr, Utterson, Label. Cells are shown with x across
and y down, i.e. each ``[x, y]`` frame is transposed before display.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from matplotlib.figure import Figure

from .evaluation import SweepTable
from .tensor_core import jht

COLUMNS = ("Input", "Hyde", "Jekyll", "Subtr", "Utterson", "Label")
DEFAULT_FRAMES = (0, 4, 8, 12)
GUTTER_VALUE = 255


@dataclass
class Panel:
    image: np.ndarray  # uint8, (rows, cols) in display orientation
    cells: np.ndarray  # float32, (frames, 6, W, H) before normalization
    frames: tuple
    gutter: int

    @property
    def grid(self) -> tuple[int, int]:
        return self.cells.shape[0], self.cells.shape[1]


def _frames_first(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    while a.ndim > 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 3:
        raise ValueError(f"{name} must reduce to (frames, W, H), got shape {np.shape(a)}")
    return a


def _normalize(cell: np.ndarray) -> np.ndarray:
    lo, hi = float(cell.min()), float(cell.max())
    if hi <= lo:
        return np.zeros(cell.shape, np.uint8)
    return np.round((cell - lo) / (hi - lo) * 255).astype(np.uint8)


def render_panels(sample_input, jekyll_out, hyde_out, utterson_out, labels,
                  frames: Sequence[int] = DEFAULT_FRAMES, gutter: int = 2) -> Panel:
    """Lay out one sample as a grayscale grid; every cell is min-max scaled on its own.

    ``hyde_out`` is the single background frame; Subtr is input minus that frame.
    Label cells are drawn as 0/255 directly so they stay pure black and white.
    """
    x = _frames_first(sample_input, "input")
    j = _frames_first(jekyll_out, "jekyll output")
    u = _frames_first(utterson_out, "utterson output")
    y = _frames_first(labels, "labels")
    h = np.asarray(hyde_out).reshape(x.shape[1:])
    if not (x.shape == j.shape == u.shape == y.shape):
        raise ValueError("input, outputs and labels must share a shape")
    frames = tuple(int(f) for f in frames)
    if any(not 0 <= f < x.shape[0] for f in frames):
        raise ValueError(f"frames {frames} out of range for {x.shape[0]} frames")
    if gutter < 0:
        raise ValueError("gutter must be non-negative")

    W, H = x.shape[1:]
    cells = np.empty((len(frames), len(COLUMNS), W, H), np.float32)
    for r, f in enumerate(frames):
        cells[r] = [x[f], h, j[f], x[f] - h, u[f], y[f]]

    image = np.full((len(frames) * (H + gutter), len(COLUMNS) * (W + gutter)), GUTTER_VALUE, np.uint8)
    for r in range(len(frames)):
        for c in range(len(COLUMNS)):
            cell = cells[r, c]
            shown = (cell > 0).astype(np.uint8) * 255 if c == len(COLUMNS) - 1 else _normalize(cell)
            top, left = r * (H + gutter), c * (W + gutter)
            image[top:top + H, left:left + W] = shown.T
    return Panel(image, cells, frames, gutter)


def write_pgm(path, image: np.ndarray, comment: Optional[str] = None) -> Path:
    """Binary graymap (P5, maxval 255)."""
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError("PGM output needs a 2-D uint8 image")
    header = b"P5\n"
    if comment:
        header += b"".join(b"# " + line.encode() + b"\n" for line in comment.splitlines())
    header += f"{image.shape[1]} {image.shape[0]}\n255\n".encode()
    path = Path(path)
    path.write_bytes(header + image.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5" or tokens[3] != b"255":
        raise ValueError("not an 8-bit binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos + 1:pos + 1 + w * h], np.uint8).reshape(h, w)


def save_panel(panel: Panel, stem, config_hash: str = "") -> dict:
    """Write ``stem``.pgm, ``stem``.png and the raw cells as ``stem``_cells.jht."""
    stem = Path(stem)
    pgm = write_pgm(stem.with_suffix(".pgm"), panel.image,
                    f"config {config_hash}\ncolumns {' '.join(COLUMNS)}\nframes {' '.join(map(str, panel.frames))}")
    cells = jht.save(stem.with_name(stem.name + "_cells.jht"), panel.cells)

    rows = len(panel.frames)
    fig = Figure(figsize=(1.6 * len(COLUMNS), 1.6 * rows))
    axes = fig.subplots(rows, len(COLUMNS), squeeze=False)
    W, H = panel.cells.shape[2:]
    for r in range(rows):
        for c in range(len(COLUMNS)):
            ax = axes[r, c]
            top, left = r * (H + panel.gutter), c * (W + panel.gutter)
            ax.imshow(panel.image[top:top + H, left:left + W], cmap="gray", vmin=0, vmax=255,
                      interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(COLUMNS[c], fontsize=9)
            if c == 0:
                ax.set_ylabel(f"frame {panel.frames[r] + 1}", fontsize=8)
    if config_hash:
        fig.suptitle(f"config {config_hash}", fontsize=7)
    fig.tight_layout()
    png = stem.with_suffix(".png")
    fig.savefig(png, dpi=120)
    return {"pgm": str(pgm), "png": str(png), "cells": str(cells)}


def plot_sweeps(tables: Mapping[str, SweepTable], path, config_hash: str = "") -> Path:
    """PPV, NPV, Sensitivity and Specificity against threshold, one line per model."""
    fig = Figure(figsize=(8, 6))
    axes = fig.subplots(2, 2, sharex=True)
    for ax, (col, title) in zip(axes.ravel(), (("ppv", "PPV"), ("npv", "NPV"),
                                               ("sensitivity", "Sensitivity"), ("specificity", "Specificity"))):
        for name, table in tables.items():
            values = [np.nan if v is None else v for v in table.column(col)]
            ax.plot(table.thresholds, values, marker=".", label=name.capitalize())
        ax.set_title(title, fontsize=10)
        ax.set_ylim(-0.02, 1.02)
        ax.grid(alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("threshold")
    axes[0, 0].legend(fontsize=8)
    if config_hash:
        fig.suptitle(f"config {config_hash}", fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    return path
