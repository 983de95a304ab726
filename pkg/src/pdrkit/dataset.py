"""Synthetic K-class image dataset.

Each class is a distinct geometric texture (stripes, disk, checkerboard,
rings, ...) rendered procedurally with per-sample jitter in geometry and
color plus pixel noise. Every sample gets its own RNG stream keyed by
(seed, split, index), so generation is deterministic, order-independent,
and train/test are disjoint by construction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

MAX_CLASSES = 8


@dataclass
class DatasetSpec:
    seed: int = 0
    k: int = 4
    n_train: int = 400
    n_test: int = 200
    size: int = 32

    def __post_init__(self):
        if not 2 <= self.k <= MAX_CLASSES:
            raise ValueError(f"k must be in [2, {MAX_CLASSES}], got {self.k}")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be >= 1")
        if self.size < 8:
            raise ValueError(f"size must be >= 8, got {self.size}")


@dataclass
class Dataset:
    spec: DatasetSpec
    x_train: np.ndarray  # (n_train, 3, size, size)
    y_train: np.ndarray  # (n_train,) int64
    x_test: np.ndarray
    y_test: np.ndarray


def _coords(size: int):
    axis = np.linspace(-1.0, 1.0, size)
    return np.meshgrid(axis, axis, indexing="ij")


def _pattern(kind: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Grayscale mask in [0, 1] for one of the eight texture families."""
    yy, xx = _coords(size)
    freq = rng.uniform(2.0, 3.5)
    phase = rng.uniform(0, 2 * np.pi)
    if kind == 0:    # horizontal stripes
        return 0.5 + 0.5 * np.sin(freq * np.pi * yy + phase)
    if kind == 1:    # vertical stripes
        return 0.5 + 0.5 * np.sin(freq * np.pi * xx + phase)
    if kind == 2:    # filled disk
        cy, cx = rng.uniform(-0.25, 0.25, size=2)
        radius = rng.uniform(0.45, 0.65)
        return ((yy - cy) ** 2 + (xx - cx) ** 2 < radius ** 2).astype(np.float64)
    if kind == 3:    # checkerboard
        cells = rng.integers(3, 5)
        shift = rng.uniform(0, 2)
        board = np.floor(cells * (yy + 1) / 2 + shift) + np.floor(cells * (xx + 1) / 2 + shift)
        return np.mod(board, 2.0)
    if kind == 4:    # diagonal stripes
        return 0.5 + 0.5 * np.sin(freq * np.pi * (xx + yy) / np.sqrt(2) + phase)
    if kind == 5:    # ring
        cy, cx = rng.uniform(-0.15, 0.15, size=2)
        r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        mid = rng.uniform(0.5, 0.65)
        return (np.abs(r - mid) < 0.18).astype(np.float64)
    if kind == 6:    # square frame
        half = rng.uniform(0.5, 0.7)
        inner = half - rng.uniform(0.22, 0.3)
        box = np.maximum(np.abs(yy), np.abs(xx))
        return ((box < half) & (box > inner)).astype(np.float64)
    # kind == 7: bright centered blob on dark field
    spread = rng.uniform(0.25, 0.4)
    return np.exp(-(yy ** 2 + xx ** 2) / (2 * spread ** 2))


# per-class base colors (foreground, background); jittered per sample
_FG = np.array([
    [0.85, 0.25, 0.25], [0.25, 0.75, 0.30], [0.25, 0.35, 0.85], [0.85, 0.75, 0.25],
    [0.75, 0.30, 0.75], [0.25, 0.75, 0.75], [0.90, 0.55, 0.25], [0.60, 0.60, 0.60],
])
_BG = np.array([
    [0.20, 0.30, 0.45], [0.40, 0.25, 0.40], [0.45, 0.40, 0.20], [0.25, 0.25, 0.30],
    [0.30, 0.45, 0.25], [0.45, 0.25, 0.25], [0.25, 0.40, 0.45], [0.20, 0.20, 0.40],
])


def render_sample(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    mask = _pattern(label % MAX_CLASSES, size, rng)
    fg = np.clip(_FG[label % MAX_CLASSES] + rng.uniform(-0.08, 0.08, 3), 0, 1)
    bg = np.clip(_BG[label % MAX_CLASSES] + rng.uniform(-0.08, 0.08, 3), 0, 1)
    # moderate contrast keeps the classes learnable while leaving the class
    # margins small enough that attacks behave interestingly across the
    # whole budget range
    contrast = rng.uniform(0.30, 0.50)
    img = bg[:, None, None] + contrast * (fg - bg)[:, None, None] * mask
    img += rng.uniform(-0.03, 0.03, size=img.shape)
    return np.clip(img, 0.02, 0.98)


def _split(spec: DatasetSpec, split_code: int, count: int):
    xs = np.empty((count, 3, spec.size, spec.size))
    ys = np.arange(count, dtype=np.int64) % spec.k
    for idx in range(count):
        rng = np.random.default_rng([spec.seed, split_code, idx])
        xs[idx] = render_sample(int(ys[idx]), spec.size, rng)
    return xs, ys


def gen_dataset(spec: DatasetSpec) -> Dataset:
    x_train, y_train = _split(spec, 0, spec.n_train)
    x_test, y_test = _split(spec, 1, spec.n_test)
    return Dataset(spec, x_train, y_train, x_test, y_test)


def save_dataset(dataset: Dataset, path: str) -> None:
    np.savez(path, spec=json.dumps(asdict(dataset.spec)),
             x_train=dataset.x_train, y_train=dataset.y_train,
             x_test=dataset.x_test, y_test=dataset.y_test)


def load_dataset(path: str) -> Dataset:
    with np.load(path, allow_pickle=False) as archive:
        spec = DatasetSpec(**json.loads(str(archive["spec"])))
        return Dataset(spec, archive["x_train"], archive["y_train"],
                       archive["x_test"], archive["y_test"])
