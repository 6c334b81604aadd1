"""Synthetic multi-task datasets: procedural shape images with shared-latent labels.

Every sample is one 8x8 single-channel rendering of a random shape; the
tasks (4-way shape class, area regression, centroid-x regression) all read
off the same underlying mask, so a shared encoder genuinely helps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .errors import FormatError
from .supernet import DEFAULT_TASKS, TaskSpec

SHAPE_CLASSES = ("disk", "frame", "cross", "diag")


@dataclass(frozen=True)
class DatasetSpec:
    n_samples: int = 512
    side: int = 8
    tasks: tuple = DEFAULT_TASKS
    noise: float = 0.2

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.side < 4:
            raise ValueError("side must be >= 4")
        if len(self.tasks) < 2:
            raise ValueError("need at least 2 tasks over the shared latent")
        known = {t.name for t in DEFAULT_TASKS}
        for t in self.tasks:
            if t.name not in known:
                raise ValueError(f"unknown procedural task {t.name!r}; choose from {sorted(known)}")


@dataclass
class MtlDataset:
    """Shared inputs plus one label array per task."""

    inputs: np.ndarray  # S x 1 x side x side
    labels: dict  # task name -> (S,) int64 or (S, 1) float64
    tasks: tuple
    seed: int

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    def task_labels(self) -> list:
        return [self.labels[t.name] for t in self.tasks]

    def subset(self, idx) -> "MtlDataset":
        return MtlDataset(
            inputs=self.inputs[idx],
            labels={k: v[idx] for k, v in self.labels.items()},
            tasks=self.tasks,
            seed=self.seed,
        )

    def batches(self, batch_size: int):
        for start in range(0, self.n_samples, batch_size):
            yield self.inputs[start : start + batch_size]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train fraction must be in (0, 1)")


@dataclass
class TrainSplit:
    """Gradient-update data; the only split train_supernet accepts."""

    data: MtlDataset


@dataclass
class HoldoutSplit:
    """Held-out data for predictor pairs and search-side validation only."""

    data: MtlDataset


def _render_mask(cls: int, cx: float, cy: float, r: float, side: int) -> np.ndarray:
    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    if cls == 0:  # filled disk
        mask = dx * dx + dy * dy <= r * r
    elif cls == 1:  # hollow square frame
        cheb = np.maximum(np.abs(dx), np.abs(dy))
        mask = (cheb <= r) & (cheb >= r - 1.0)
    elif cls == 2:  # axis-aligned cross
        mask = ((np.abs(dx) <= 0.6) | (np.abs(dy) <= 0.6)) & (np.maximum(np.abs(dx), np.abs(dy)) <= r)
    else:  # diagonal stroke
        mask = (np.abs(dx - dy) <= 0.8) & (np.maximum(np.abs(dx), np.abs(dy)) <= r)
    return mask.astype(np.float64)


def gen_synthetic_mtl(spec: DatasetSpec, seed: int) -> MtlDataset:
    """Deterministic procedural dataset; labels come from the clean mask."""
    rng = np.random.default_rng(seed)
    side = spec.side
    images = np.zeros((spec.n_samples, 1, side, side))
    shape_cls = np.zeros(spec.n_samples, dtype=np.int64)
    area = np.zeros((spec.n_samples, 1))
    centroid_x = np.zeros((spec.n_samples, 1))
    lo, hi = side / 2 - 1.0, side / 2 + 1.0
    for i in range(spec.n_samples):
        cls = int(rng.integers(0, len(SHAPE_CLASSES)))
        cx = rng.uniform(lo, hi)
        cy = rng.uniform(lo, hi)
        r = rng.uniform(1.8, 2.9)
        mask = _render_mask(cls, cx, cy, r, side)
        if mask.sum() == 0:  # degenerate draw; retry deterministically
            mask = _render_mask(cls, side / 2, side / 2, 2.5, side)
        shape_cls[i] = cls
        area[i, 0] = mask.sum() / (side * side)
        ys, xs = np.nonzero(mask)
        centroid_x[i, 0] = xs.mean() / (side - 1)
        images[i, 0] = mask + rng.normal(0.0, spec.noise, (side, side))
    all_labels = {"shape": shape_cls, "area": area, "cx": centroid_x}
    return MtlDataset(
        inputs=images,
        labels={t.name: all_labels[t.name] for t in spec.tasks},
        tasks=spec.tasks,
        seed=seed,
    )


def split(dataset: MtlDataset, spec: SplitSpec) -> tuple:
    """Seeded shuffle then partition into (TrainSplit, HoldoutSplit)."""
    if dataset.n_samples < 10:
        raise ValueError("need at least 10 samples to split")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(dataset.n_samples)
    cut = int(round(dataset.n_samples * spec.train_fraction))
    return TrainSplit(dataset.subset(perm[:cut])), HoldoutSplit(dataset.subset(perm[cut:]))


def save_dataset(dataset: MtlDataset, path) -> None:
    arrays = [dataset.inputs]
    manifest = [["inputs", list(dataset.inputs.shape)]]
    for t in dataset.tasks:
        arr = np.asarray(dataset.labels[t.name], dtype=np.float64)
        arrays.append(arr)
        manifest.append([f"label.{t.name}", list(arr.shape)])
    header = {
        "format": "dataset",
        "version": 1,
        "seed": dataset.seed,
        "tasks": [{"name": t.name, "kind": t.kind, "dim": t.dim} for t in dataset.tasks],
        "manifest": manifest,
    }
    write_container(path, header, arrays)


def load_dataset(path) -> MtlDataset:
    header, arrays = read_container(path)
    if header.get("format") != "dataset":
        raise FormatError(f"{path}: not a dataset file")
    tasks = tuple(TaskSpec(**t) for t in header["tasks"])
    labels = {}
    for t, arr in zip(tasks, arrays[1:]):
        labels[t.name] = arr.astype(np.int64) if t.kind == "classification" else arr
    return MtlDataset(inputs=arrays[0], labels=labels, tasks=tasks, seed=header["seed"])
