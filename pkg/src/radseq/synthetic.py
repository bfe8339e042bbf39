"""Synthetic two-class texture images for desk-scale end-to-end runs.

Benign images carry horizontal stripes, malignant ones vertical stripes; period,
phase, colour and noise are randomized per image. Files are written as P6 PPM
together with a ``manifest.csv``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import data as D


def texture(label: int, size: int, rng: np.random.Generator, noise: float = 0.15) -> np.ndarray:
    period = rng.uniform(4.0, 8.0)
    phase = rng.uniform(0, 2 * np.pi)
    coord = np.arange(size, dtype=np.float64)
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * coord / period + phase)
    plane = np.tile(wave[:, None], (1, size)) if label == D.BENIGN else np.tile(wave[None, :], (size, 1))
    tint = rng.uniform(0.5, 1.0, size=(3, 1, 1))
    img = tint * plane[None] + noise * rng.standard_normal((3, size, size))
    return np.clip(img, 0, 1).astype(np.float32)


def make_texture_dataset(out_dir, n_benign: int, n_malignant: int, size: int = 48, seed: int = 0) -> Path:
    """Write images plus ``manifest.csv`` into ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    labels = np.array([D.BENIGN] * n_benign + [D.MALIGNANT] * n_malignant)
    labels = labels[rng.permutation(len(labels))]
    records = []
    for i, label in enumerate(labels):
        rel = f"images/{i:05d}.ppm"
        (out / rel).write_bytes(D.encode_ppm(texture(int(label), size, rng)))
        records.append(D.Record(rel, int(label)))
    path = out / "manifest.csv"
    D.write_manifest(D.DatasetManifest(records, out), path)
    return path
