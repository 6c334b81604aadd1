"""Supernet training: weighted multi-task loss, feature distillation, sandwich steps.

Each step trains the largest-width model from labels, then b-1 child widths
(b-2 random draws plus the smallest) from the same labels plus a
distillation term that pulls each child's channel-averaged encoder feature
toward the (detached) full-width feature. Gradients accumulate across all b
backward passes before a single optimizer step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .datasets import TrainSplit
from .errors import DimensionError, NumericError
from .supernet import SuperNet, extremes, sample_config


@dataclass(frozen=True)
class TrainingRecipe:
    b: int = 4
    kd_weight: float = 1.0
    task_weights: tuple | None = None  # defaults to all ones
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.b < 2:
            raise ValueError("sandwich size b must be >= 2")
        if self.kd_weight < 0:
            raise ValueError("distillation weight must be >= 0")
        if self.task_weights is not None:
            if any(w <= 0 for w in self.task_weights):
                raise ValueError("task loss weights must be positive")
            object.__setattr__(self, "task_weights", tuple(float(w) for w in self.task_weights))

    def weights_for(self, n_tasks: int) -> tuple:
        if self.task_weights is None:
            return (1.0,) * n_tasks
        if len(self.task_weights) != n_tasks:
            raise ValueError(
                f"{len(self.task_weights)} task weights for {n_tasks} tasks"
            )
        return self.task_weights


def task_losses(outputs, labels, tasks) -> list:
    """Per-task loss tensors: cross-entropy for classification, MSE otherwise."""
    if not (len(outputs) == len(labels) == len(tasks)):
        raise ValueError(
            f"got {len(outputs)} outputs, {len(labels)} labels, {len(tasks)} tasks"
        )
    losses = []
    for out, lab, task in zip(outputs, labels, tasks):
        if task.kind == "classification":
            losses.append(ad.softmax_cross_entropy(out, lab))
        else:
            losses.append(ad.mse(out, ad.Tensor(np.asarray(lab, dtype=np.float64))))
    return losses


def weighted_task_loss(outputs, labels, tasks, weights) -> ad.Tensor:
    """Weighted sum of per-task losses."""
    if len(weights) != len(tasks):
        raise ValueError(f"{len(weights)} weights for {len(tasks)} tasks")
    total = None
    for loss, w in zip(task_losses(outputs, labels, tasks), weights):
        term = ad.mul(loss, float(w))
        total = term if total is None else ad.add(total, term)
    return total


def cikd_loss(teacher_z, child_zs) -> ad.Tensor:
    """Mean over children of MSE between channel-averaged features.

    Channel averaging makes the target independent of each child's channel
    count. The teacher feature must be detached; gradients flow only into
    the child branches.
    """
    if isinstance(teacher_z, ad.Tensor):
        if teacher_z.parents:
            raise ValueError("teacher feature must be detached from the graph")
        teacher = teacher_z
    else:
        teacher = ad.Tensor(np.asarray(teacher_z, dtype=np.float64))
    if not child_zs:
        raise ValueError("need at least one child feature")
    t_mean = ad.channel_mean(teacher)
    total = None
    for child in child_zs:
        c_mean = ad.channel_mean(child)
        if c_mean.value.shape != t_mean.value.shape:
            raise DimensionError(
                f"channel-averaged shapes differ: teacher {t_mean.value.shape} "
                f"vs child {c_mean.value.shape}"
            )
        term = ad.mse(t_mean, c_mean)
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, 1.0 / len(child_zs))


def sandwich_step(net: SuperNet, inputs, labels, recipe: TrainingRecipe,
                  adam: ad.AdamState, rng: np.random.Generator) -> dict:
    """One accumulated training step over b width configurations.

    Caller must have cleared gradient buffers. Runs: largest model on the
    task loss, then b-2 random children and the smallest model, each on the
    task loss plus the weighted distillation term against the detached
    full-width encoder feature. Ends with a single optimizer step.
    """
    weights = recipe.weights_for(net.n_tasks)
    largest, smallest = extremes(net.widths, net)

    outs, z = net.forward(largest, inputs)
    per_task = task_losses(outs, labels, net.tasks)
    teacher_loss = None
    for loss, w in zip(per_task, weights):
        term = ad.mul(loss, float(w))
        teacher_loss = term if teacher_loss is None else ad.add(teacher_loss, term)
    ad.backward(teacher_loss)
    record = {"largest": {
        "task_losses": [loss.item() for loss in per_task],
        "total": teacher_loss.item(),
    }}

    z_detached = z.detach()
    children = [sample_config(rng, net.widths, net) for _ in range(recipe.b - 2)]
    children.append(smallest)
    for i, cfg in enumerate(children):
        tag = "smallest" if i == len(children) - 1 else f"child{i}"
        outs_c, z_c = net.forward(cfg, inputs)
        per_task_c = task_losses(outs_c, labels, net.tasks)
        loss_c = None
        for loss, w in zip(per_task_c, weights):
            term = ad.mul(loss, float(w))
            loss_c = term if loss_c is None else ad.add(loss_c, term)
        entry = {"task_losses": [loss.item() for loss in per_task_c]}
        if recipe.kd_weight > 0:
            kd = cikd_loss(z_detached, [z_c])
            loss_c = ad.add(loss_c, ad.mul(kd, recipe.kd_weight))
            entry["kd"] = kd.item()
        entry["total"] = loss_c.item()
        record[tag] = entry
        ad.backward(loss_c)

    ad.adam_step(net.params, adam)
    return record


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    config_tag: str
    task_id: str
    loss: float


def train_supernet(net: SuperNet, data: TrainSplit, recipe: TrainingRecipe) -> list:
    """Sandwich-rule training over shuffled mini-batches; deterministic per seed.

    Returns per-epoch mean task losses of the largest and smallest
    configurations. Only a :class:`TrainSplit` is accepted; holdout data
    must never drive gradient updates.
    """
    if not isinstance(data, TrainSplit):
        raise TypeError("train_supernet only accepts a TrainSplit")
    dataset = data.data
    recipe.weights_for(net.n_tasks)  # fail fast on a bad weight count
    rng = np.random.default_rng(recipe.seed)
    adam = ad.AdamState(lr=recipe.lr)
    history: list[HistoryRow] = []
    labels = dataset.task_labels()
    for epoch in range(recipe.epochs):
        perm = rng.permutation(dataset.n_samples)
        sums = {"largest": np.zeros(net.n_tasks), "smallest": np.zeros(net.n_tasks)}
        n_steps = 0
        for start in range(0, dataset.n_samples, recipe.batch_size):
            idx = perm[start : start + recipe.batch_size]
            ad.zero_grads(net.params)
            try:
                record = sandwich_step(
                    net, dataset.inputs[idx], [lab[idx] for lab in labels], recipe, adam, rng
                )
            except NumericError as exc:
                raise NumericError(f"{exc} (epoch {epoch}, batch {n_steps})") from exc
            for tag in ("largest", "smallest"):
                vals = record[tag]["task_losses"]
                if not all(np.isfinite(v) for v in vals):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}, batch {n_steps}"
                    )
                sums[tag] += vals
            n_steps += 1
        for tag in ("largest", "smallest"):
            for task, mean in zip(net.tasks, sums[tag] / n_steps):
                history.append(HistoryRow(epoch, tag, task.name, float(mean)))
    return history


def write_loss_history(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "config_tag", "task_id", "loss"])
        for r in rows:
            writer.writerow([r.epoch, r.config_tag, r.task_id, repr(float(r.loss))])
