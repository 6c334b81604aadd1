"""Controllability evaluation: preference sampling, hypervolume, sweep reports.

Hypervolume is the Lebesgue measure of the loss-space region dominated by a
point set relative to a reference point (minimization everywhere). Exact
recursive slicing handles up to 4 tasks; a seeded Monte-Carlo estimator
covers higher task counts.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .datasets import MtlDataset
from .predictor import PredictorParams, measure_config
from .search import PreferenceQuery, SearchConfig, search
from .supernet import SuperNet, WidthConfig
from .training import task_losses

DIRICHLET_ALPHA_DENSE = 0.2
DIRICHLET_ALPHA_CLASSIFICATION = 1.0
DEFAULT_PREFERENCE_COUNT = 20


def dirichlet_sample(alpha, count: int = DEFAULT_PREFERENCE_COUNT,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """``count`` simplex draws via normalized Gamma variables."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ValueError("Dirichlet concentrations must be positive")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    gammas = rng.gamma(shape=alpha, scale=1.0, size=(count, alpha.size))
    return gammas / gammas.sum(axis=1, keepdims=True)


def _clip_to_ref(points: np.ndarray, ref: np.ndarray) -> np.ndarray:
    # points worse than the reference in some coordinate contribute zero
    # volume there; clipping keeps them harmless without dropping them.
    return np.minimum(points, ref)


def hypervolume_exact(points, ref) -> float:
    """Exact dominated volume by recursive dimension slicing; N <= 4."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    ref = np.asarray(ref, dtype=np.float64)
    if points.shape[1] != ref.size:
        raise ValueError(f"points have {points.shape[1]} dims, reference {ref.size}")
    if ref.size > 4:
        raise ValueError("exact mode supports at most 4 tasks; use hypervolume_mc")
    if points.shape[0] == 0:
        return 0.0
    pts = _clip_to_ref(points, ref)

    def recurse(pts: np.ndarray, ref: np.ndarray) -> float:
        if pts.shape[0] == 0:
            return 0.0
        if ref.size == 1:
            return float(max(0.0, ref[0] - pts[:, 0].min()))
        xs = np.unique(pts[:, 0])
        vol = 0.0
        for j, lo in enumerate(xs):
            hi = xs[j + 1] if j + 1 < len(xs) else ref[0]
            if hi <= lo:
                continue
            covering = pts[pts[:, 0] <= lo][:, 1:]
            vol += (hi - lo) * recurse(covering, ref[1:])
        return vol

    return recurse(pts, ref)


def hypervolume_mc(points, ref, samples: int = 1_000_000,
                   rng: np.random.Generator | None = None) -> tuple:
    """Monte-Carlo dominated-volume estimate with its standard error.

    Uniform sampling over the box spanned by the per-dimension minima and
    the reference point; works for any task count.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    ref = np.asarray(ref, dtype=np.float64)
    if points.shape[0] == 0 or points.size == 0:
        warnings.warn("no points given; hypervolume is 0")
        return 0.0, 0.0
    if samples < 10_000:
        raise ValueError("need at least 10^4 samples for a usable estimate")
    rng = rng if rng is not None else np.random.default_rng(0)
    pts = _clip_to_ref(points, ref)
    lower = pts.min(axis=0)
    box = np.prod(ref - lower)
    if box <= 0:
        return 0.0, 0.0
    dominated = 0
    chunk = 100_000
    remaining = samples
    while remaining > 0:
        n = min(chunk, remaining)
        draws = rng.uniform(lower, ref, size=(n, ref.size))
        covered = (draws[:, None, :] >= pts[None, :, :]).all(axis=2).any(axis=1)
        dominated += int(covered.sum())
        remaining -= n
    frac = dominated / samples
    estimate = frac * box
    stderr = box * np.sqrt(max(frac * (1 - frac), 0.0) / samples)
    return float(estimate), float(stderr)


def evaluate_subnet(net: SuperNet, cfg: WidthConfig, data: MtlDataset, calib,
                    calib_batch_size: int = 32, eval_batch_size: int = 64) -> tuple:
    """Measured per-task losses plus readable metrics for one config.

    Normalization statistics are recalibrated on ``calib`` first; the
    parameters are untouched. Metrics: classification accuracy, regression
    rmse.
    """
    if data.n_samples == 0:
        raise ValueError("evaluation data is empty")
    calib_data = calib if isinstance(calib, MtlDataset) else None
    if calib_data is not None:
        batches = calib_data.batches(calib_batch_size)
    else:
        batches = calib
    stats = net.bn_recalibrate(cfg, batches)
    labels = data.task_labels()
    sums = np.zeros(net.n_tasks)
    metric_sums = np.zeros(net.n_tasks)
    n = 0
    for start in range(0, data.n_samples, eval_batch_size):
        idx = slice(start, start + eval_batch_size)
        outs, _ = net.forward(cfg, data.inputs[idx], stats=stats)
        losses = task_losses(outs, [lab[idx] for lab in labels], net.tasks)
        count = data.inputs[idx].shape[0]
        sums += np.array([loss.item() for loss in losses]) * count
        for t, (task, out) in enumerate(zip(net.tasks, outs)):
            if task.kind == "classification":
                metric_sums[t] += (out.value.argmax(axis=1) == labels[t][idx]).sum()
            else:
                metric_sums[t] += ((out.value - labels[t][idx]) ** 2).sum()
        n += count
    metrics = {}
    for t, task in enumerate(net.tasks):
        if task.kind == "classification":
            metrics[task.name] = {"accuracy": float(metric_sums[t] / n)}
        else:
            metrics[task.name] = {"rmse": float(np.sqrt(metric_sums[t] / (n * task.dim)))}
    return sums / n, metrics


@dataclass
class ControllabilityReport:
    reference_point: np.ndarray
    queries: list  # [{"prefs": [...], "budget": int}]
    loss_points: np.ndarray  # len(queries) x N measured losses
    hv: float
    hv_stderr: float | None
    marginals: dict  # task name -> [{"pref": float, "mean_loss": float}]
    configs: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        out = {
            "reference_point": [float(v) for v in self.reference_point],
            "queries": self.queries,
            "loss_points": [[float(v) for v in row] for row in self.loss_points],
            "hv": self.hv,
            "marginals": self.marginals,
            "configs": self.configs,
        }
        if self.hv_stderr is not None:
            out["hv_stderr"] = self.hv_stderr
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    def write_csv(self, path) -> None:
        n = self.loss_points.shape[1] if self.loss_points.size else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["query"]
                + [f"pref_{t}" for t in range(n)]
                + ["budget"]
                + [f"loss_{t}" for t in range(n)]
            )
            for i, (q, point) in enumerate(zip(self.queries, self.loss_points)):
                writer.writerow(
                    [i] + [repr(float(p)) for p in q["prefs"]] + [q["budget"]]
                    + [repr(float(v)) for v in point]
                )


def controllability_sweep(net: SuperNet, predictor: PredictorParams, budget: int,
                          prefs, search_cfg: SearchConfig, data: MtlDataset,
                          calib: MtlDataset | None = None, ref=None) -> ControllabilityReport:
    """Search at the budget for every preference vector, measure each result,
    and report hypervolume against the reference point.

    Hypervolume always uses measured (post-recalibration) losses; predicted
    losses never leave the search. Marginal curves per task pair that
    task's preference value with its measured loss across the sweep.
    """
    prefs = np.atleast_2d(np.asarray(prefs, dtype=np.float64))
    ref = np.asarray(ref if ref is not None else [4.0] * net.n_tasks, dtype=np.float64)
    calib = calib if calib is not None else data
    queries = []
    points = []
    configs = []
    for i, tau in enumerate(prefs):
        query = PreferenceQuery(budget_macs=budget, prefs=tuple(tau))
        cfg = SearchConfig(pool_size=search_cfg.pool_size, cycles=search_cfg.cycles,
                           step=search_cfg.step, seed=search_cfg.seed + i)
        result = search(net, predictor, query, cfg)
        losses, _ = evaluate_subnet(net, result.config, data, calib)
        queries.append({"prefs": [float(v) for v in tau], "budget": int(budget)})
        points.append(losses)
        configs.append(result.to_json_dict()["config"])
    points = np.stack(points)
    if net.n_tasks <= 4:
        hv = hypervolume_exact(points, ref)
        stderr = None
    else:
        hv, stderr = hypervolume_mc(points, ref, rng=np.random.default_rng(search_cfg.seed))
    marginals = {}
    for t, task in enumerate(net.tasks):
        pairs = sorted(zip(prefs[:, t], points[:, t]))
        marginals[task.name] = [
            {"pref": float(p), "mean_loss": float(v)} for p, v in pairs
        ]
    return ControllabilityReport(
        reference_point=ref,
        queries=queries,
        loss_points=points,
        hv=float(hv),
        hv_stderr=stderr,
        marginals=marginals,
        configs=configs,
    )
