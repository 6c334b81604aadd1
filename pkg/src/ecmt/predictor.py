"""Width-vector accuracy predictor: the cheap fitness oracle for search.

A small feed-forward regressor maps the flattened width-ratio vector of a
configuration to one predicted validation loss per task. Training pairs are
collected by sampling configurations, recalibrating normalization
statistics, and measuring task losses on held-out data.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .container import read_container, write_container
from .datasets import HoldoutSplit, MtlDataset
from .errors import DimensionError, FormatError
from .supernet import SuperNet, WidthConfig, WidthList, sample_config
from .training import task_losses

TRUNK_WIDTHS = (100, 100, 50)

# desk-scale default number of measured (config, losses) pairs; one tenth
# of the full-scale collection count
DEFAULT_PAIR_COUNT = 200


def encode_config(cfg: WidthConfig) -> np.ndarray:
    """Flatten to the fixed order: encoder ratios, then decoders task by task."""
    return np.asarray(cfg.flatten(), dtype=np.float64)


def decode_vector(vec, net: SuperNet) -> WidthConfig:
    """Inverse of :func:`encode_config` for a given net's layout."""
    vec = list(np.asarray(vec, dtype=np.float64))
    n_enc = net.encoder_slim_count()
    counts = net.decoder_slim_counts()
    if len(vec) != n_enc + sum(counts):
        raise DimensionError(f"vector length {len(vec)} != config length {n_enc + sum(counts)}")
    encoder = tuple(vec[:n_enc])
    decoders = []
    pos = n_enc
    for c in counts:
        decoders.append(tuple(vec[pos : pos + c]))
        pos += c
    return WidthConfig(encoder=encoder, decoders=tuple(decoders))


@dataclass
class AccuracyRecord:
    arch: np.ndarray  # width-ratio vector
    losses: np.ndarray  # measured per-task validation loss


def measure_config(net: SuperNet, cfg: WidthConfig, data: MtlDataset,
                   calib_batch_size: int = 32, eval_batch_size: int = 64) -> np.ndarray:
    """Recalibrate normalization stats for cfg, then mean per-task loss on data."""
    stats = net.bn_recalibrate(cfg, data.batches(calib_batch_size))
    labels = data.task_labels()
    sums = np.zeros(net.n_tasks)
    n = 0
    for start in range(0, data.n_samples, eval_batch_size):
        idx = slice(start, start + eval_batch_size)
        outs, _ = net.forward(cfg, data.inputs[idx], stats=stats)
        losses = task_losses(outs, [lab[idx] for lab in labels], net.tasks)
        count = data.inputs[idx].shape[0]
        sums += np.array([loss.item() for loss in losses]) * count
        n += count
    return sums / n


def collect_pairs(net: SuperNet, widths: WidthList, m: int, val_data, rng) -> list:
    """Measure m uniformly sampled configs on held-out data; seeded and repeatable."""
    if m < 1:
        raise ValueError("need at least one record")
    data = val_data.data if isinstance(val_data, HoldoutSplit) else val_data
    if data.n_samples == 0:
        raise ValueError("validation data is empty")
    records = []
    for _ in range(m):
        cfg = sample_config(rng, widths, net)
        losses = measure_config(net, cfg, data)
        records.append(AccuracyRecord(arch=encode_config(cfg), losses=losses))
    return records


@dataclass
class PredictorParams:
    params: dict  # name -> Tensor
    arch_len: int
    n_tasks: int

    def named(self):
        return self.params


def init_predictor(arch_len: int, n_tasks: int, rng) -> PredictorParams:
    params = {}
    sizes = (arch_len,) + TRUNK_WIDTHS
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        params[f"trunk{i}.w"] = ad.Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)))
        params[f"trunk{i}.b"] = ad.Tensor(np.zeros(fan_out))
    for t in range(n_tasks):
        params[f"head{t}.w"] = ad.Tensor(rng.normal(0.0, np.sqrt(2.0 / sizes[-1]), (sizes[-1], 1)))
        params[f"head{t}.b"] = ad.Tensor(np.zeros(1))
    return PredictorParams(params=params, arch_len=arch_len, n_tasks=n_tasks)


def _forward(pp: PredictorParams, x: ad.Tensor) -> list:
    h = x
    for i in range(len(TRUNK_WIDTHS)):
        h = ad.relu(ad.add(ad.matmul(h, pp.params[f"trunk{i}.w"]), pp.params[f"trunk{i}.b"]))
    return [
        ad.add(ad.matmul(h, pp.params[f"head{t}.w"]), pp.params[f"head{t}.b"])
        for t in range(pp.n_tasks)
    ]


def predict(pp: PredictorParams, cfg) -> np.ndarray:
    """Per-task predicted losses for one config (or raw width vector)."""
    vec = encode_config(cfg) if isinstance(cfg, WidthConfig) else np.asarray(cfg, np.float64)
    if vec.shape != (pp.arch_len,):
        raise DimensionError(f"width vector has shape {vec.shape}, expected ({pp.arch_len},)")
    outs = _forward(pp, ad.Tensor(vec[None, :]))
    return np.array([o.value[0, 0] for o in outs])


@dataclass(frozen=True)
class PredictorHyper:
    epochs: int = 150
    lr: float = 1e-3
    batch_size: int = 16
    holdout_fraction: float = 0.2
    seed: int = 0


def train_predictor(records, hyper: PredictorHyper = PredictorHyper()) -> tuple:
    """Fit the regressor on (width vector, losses) records with L1 loss.

    An internal seeded 80/20 split reports holdout quality. Returns
    (params, per-task holdout L1). If every record carries identical
    losses, training is pointless: a constant-mean predictor is returned
    with a warning.
    """
    if len(records) < 2:
        raise ValueError("need at least 2 records to train")
    arch = np.stack([r.arch for r in records])
    targets = np.stack([r.losses for r in records])
    arch_len, n_tasks = arch.shape[1], targets.shape[1]
    rng = np.random.default_rng(hyper.seed)

    if np.allclose(targets, targets[0], atol=1e-15):
        warnings.warn("all records carry identical losses; returning the mean predictor")
        pp = init_predictor(arch_len, n_tasks, rng)
        for name, t in pp.params.items():
            t.value = np.zeros_like(t.value)
        for t in range(n_tasks):
            pp.params[f"head{t}.b"].value = targets[0, t : t + 1].copy()
        return pp, np.zeros(n_tasks)

    perm = rng.permutation(len(records))
    cut = max(1, int(round(len(records) * (1 - hyper.holdout_fraction))))
    cut = min(cut, len(records) - 1)
    train_idx, hold_idx = perm[:cut], perm[cut:]

    pp = init_predictor(arch_len, n_tasks, rng)
    adam = ad.AdamState(lr=hyper.lr)
    for _ in range(hyper.epochs):
        order = rng.permutation(len(train_idx))
        for start in range(0, len(order), hyper.batch_size):
            idx = train_idx[order[start : start + hyper.batch_size]]
            ad.zero_grads(pp.params)
            outs = _forward(pp, ad.Tensor(arch[idx]))
            loss = None
            for t, out in enumerate(outs):
                term = ad.l1(out, ad.Tensor(targets[idx, t : t + 1]))
                loss = term if loss is None else ad.add(loss, term)
            loss = ad.mul(loss, 1.0 / n_tasks)
            ad.backward(loss)
            ad.adam_step(pp.params, adam)

    hold_outs = _forward(pp, ad.Tensor(arch[hold_idx]))
    holdout_l1 = np.array([
        np.abs(out.value[:, 0] - targets[hold_idx, t]).mean()
        for t, out in enumerate(hold_outs)
    ])
    return pp, holdout_l1


# -- persistence ---------------------------------------------------------------


def save_predictor(pp: PredictorParams, path) -> None:
    manifest = [[name, list(t.value.shape)] for name, t in pp.params.items()]
    header = {
        "format": "predictor",
        "version": 1,
        "arch_len": pp.arch_len,
        "n_tasks": pp.n_tasks,
        "manifest": manifest,
    }
    write_container(path, header, [t.value for t in pp.params.values()])


def load_predictor(path) -> PredictorParams:
    header, arrays = read_container(path)
    if header.get("format") != "predictor":
        raise FormatError(f"{path}: not a predictor checkpoint")
    params = {name: ad.Tensor(arr) for (name, _), arr in zip(header["manifest"], arrays)}
    return PredictorParams(params=params, arch_len=header["arch_len"], n_tasks=header["n_tasks"])


def write_records(path, records) -> None:
    if not records:
        raise ValueError("no records to write")
    arch_len = len(records[0].arch)
    n_tasks = len(records[0].losses)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [f"arch_{i}" for i in range(arch_len)] + [f"loss_task{t}" for t in range(n_tasks)]
        )
        for r in records:
            writer.writerow([repr(float(v)) for v in r.arch] + [repr(float(v)) for v in r.losses])


def read_records(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader)
        arch_len = sum(1 for c in head if c.startswith("arch_"))
        records = []
        for row in reader:
            vals = [float(v) for v in row]
            records.append(
                AccuracyRecord(
                    arch=np.array(vals[:arch_len]), losses=np.array(vals[arch_len:])
                )
            )
    return records
