#!/usr/bin/env python3
"""Optional figure rendering for run artifacts (requires matplotlib).

Turns a learning-curve CSV, a map PGM, or a replay PPM into PNGs. The
pipeline itself never depends on plotting; this is presentation only.

Usage:
    python scripts/render_figures.py out/train/learning_curve.csv
    python scripts/render_figures.py out/map/map.pgm out/replay/replay.ppm
"""

import csv
import pathlib
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def render_curve(path: pathlib.Path) -> pathlib.Path:
    episodes, scores, rolling = [], [], []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            episodes.append(int(row["episode"]))
            scores.append(float(row["score"]))
            rolling.append(float(row["rolling_avg"]))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(episodes, scores, alpha=0.35, label="episode score")
    ax.plot(episodes, rolling, lw=2, label="rolling average")
    ax.set_xlabel("episode")
    ax.set_ylabel("score")
    ax.legend()
    fig.tight_layout()
    out = path.with_suffix(".png")
    fig.savefig(out, dpi=150)
    return out


def _read_pnm(path: pathlib.Path) -> np.ndarray:
    data = path.read_bytes()
    magic, dims, _maxval, payload = data.split(b"\n", 3)
    width, height = (int(v) for v in dims.split())
    if magic == b"P5":
        return np.frombuffer(payload[: width * height], np.uint8).reshape(height, width)
    if magic == b"P6":
        return np.frombuffer(payload[: width * height * 3], np.uint8).reshape(height, width, 3)
    raise ValueError(f"{path}: not a binary PGM/PPM")


def render_image(path: pathlib.Path) -> pathlib.Path:
    img = _read_pnm(path)
    fig, ax = plt.subplots(figsize=(6, 6))
    if img.ndim == 2:
        ax.imshow(img, cmap="gray", vmin=0, vmax=255)
    else:
        ax.imshow(img)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    out = path.with_suffix(".png")
    fig.savefig(out, dpi=150)
    return out


def main(argv):
    if not argv:
        print(__doc__)
        return 1
    for name in argv:
        path = pathlib.Path(name)
        if path.suffix == ".csv":
            out = render_curve(path)
        else:
            out = render_image(path)
        print(f"{path} -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
