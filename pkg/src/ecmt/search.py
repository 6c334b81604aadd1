"""Joint budget- and preference-constrained subnet search.

Step 1 maps normalized task preferences straight onto decoder width ratios.
Step 2 evolves a pool of uniform-width encoder candidates: each cycle
mutates one random encoder layer one grid step toward the budget, admits
the mutant if it fits, and evicts the candidate with the worst predicted
loss on the preferred task.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleBudgetError
from .predictor import PredictorParams, predict
from .supernet import SuperNet, WidthConfig, WidthList


@dataclass(frozen=True)
class PreferenceQuery:
    budget_macs: int
    prefs: tuple

    def __post_init__(self):
        object.__setattr__(self, "prefs", tuple(float(p) for p in self.prefs))
        if not self.prefs:
            raise ValueError("need at least one task preference")
        for p in self.prefs:
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"preference {p} outside [0, 1]")
        if self.budget_macs < 1:
            raise ValueError("budget must be positive")


@dataclass(frozen=True)
class SearchConfig:
    pool_size: int = 50
    cycles: int = 150
    step: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.pool_size < 1:
            raise ValueError("pool size must be >= 1")
        if self.cycles < 0:
            raise ValueError("cycle count must be >= 0")

    @classmethod
    def for_net(cls, net: SuperNet, **kw) -> "SearchConfig":
        """Default cycle count by decoder style: 10 when decoders carry conv
        layers (dense-prediction style), 150 for plain classifier heads."""
        dense_style = any(
            spec.kind == "conv2d" for dec in net.decoders for spec in dec
        )
        kw.setdefault("cycles", 10 if dense_style else 150)
        return cls(**kw)


@dataclass
class Candidate:
    cfg: WidthConfig
    macs: int
    predicted: np.ndarray | None = None


def normalize_prefs(prefs) -> np.ndarray:
    """Min-max normalization; an all-equal vector maps to all ones so every
    task counts as most-preferred."""
    prefs = np.asarray(prefs, dtype=np.float64)
    lo, hi = prefs.min(), prefs.max()
    if hi - lo < 1e-12:
        return np.ones_like(prefs)
    return (prefs - lo) / (hi - lo)


def preference_decoder_widths(norm_prefs, widths: WidthList) -> list:
    """Map each normalized preference to a decoder ratio on the grid.

    Linear map from [0,1] onto [w_min, w_max], snapped to the nearest grid
    member with ties upward; the most-preferred task lands on w_max.
    """
    out = []
    span = widths.w_max - widths.w_min
    for p in np.asarray(norm_prefs, dtype=np.float64):
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"normalized preference {p} outside [0, 1]")
        out.append(widths.snap(widths.w_min + span * p))
    return out


def decoder_config_for(net: SuperNet, query: PreferenceQuery) -> tuple:
    """Fixed per-task decoder ratios for a query (every decoder layer of
    task i gets task i's ratio)."""
    if len(query.prefs) != net.n_tasks:
        raise ValueError(f"{len(query.prefs)} preferences for {net.n_tasks} tasks")
    ratios = preference_decoder_widths(normalize_prefs(query.prefs), net.widths)
    counts = net.decoder_slim_counts()
    return tuple((r,) * c for r, c in zip(ratios, counts))


def mutate(net: SuperNet, cfg: WidthConfig, layer_index: int, budget: int,
           widths: WidthList, eta: float = 0.1) -> WidthConfig:
    """Nudge one encoder layer's ratio one grid step toward the budget.

    Moves up when under budget, down when over, stays put at an exact
    match; clamped to the grid ends. Decoder layers are fixed by the
    preference mapping and cannot be mutated.
    """
    if abs(eta - widths.spacing) > 1e-9:
        raise ValueError(f"mutation step {eta} must equal the grid spacing {widths.spacing}")
    if not (0 <= layer_index < len(cfg.encoder)):
        raise ValueError(
            f"layer index {layer_index} outside the encoder range [0, {len(cfg.encoder)})"
        )
    direction = int(np.sign(budget - net.count_macs(cfg)))
    idx = widths.index_of(cfg.encoder[layer_index])
    new_idx = min(len(widths) - 1, max(0, idx + direction))
    encoder = list(cfg.encoder)
    encoder[layer_index] = widths.ratios[new_idx]
    return WidthConfig(encoder=tuple(encoder), decoders=cfg.decoders)


def init_pool(net: SuperNet, query: PreferenceQuery, widths: WidthList, pool_size: int,
              rng: np.random.Generator, predictor: PredictorParams | None = None) -> list:
    """Uniform-encoder-width candidates that fit the budget.

    Each candidate repeats one feasible ratio across all encoder layers;
    draws are uniform over the feasible ratios, so duplicates appear when
    few ratios fit.
    """
    decoders = decoder_config_for(net, query)
    n_enc = net.encoder_slim_count()
    feasible = []
    for r in widths:
        cfg = WidthConfig(encoder=(r,) * n_enc, decoders=decoders)
        macs = net.count_macs(cfg)
        if macs <= query.budget_macs:
            feasible.append((cfg, macs))
    if not feasible:
        min_cfg = WidthConfig(encoder=(widths.w_min,) * n_enc, decoders=decoders)
        raise InfeasibleBudgetError(query.budget_macs, net.count_macs(min_cfg))
    pool = []
    for i in rng.integers(0, len(feasible), size=pool_size):
        cfg, macs = feasible[i]
        pred = predict(predictor, cfg) if predictor is not None else None
        pool.append(Candidate(cfg=cfg, macs=macs, predicted=pred))
    return pool


@dataclass
class SearchResult:
    config: WidthConfig
    macs: int
    predicted_losses: np.ndarray
    preferred_task: int
    trace: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "config": {
                "encoder": list(self.config.encoder),
                "decoders": [list(d) for d in self.config.decoders],
            },
            "macs": self.macs,
            "predicted_losses": [float(v) for v in self.predicted_losses],
            "preferred_task": self.preferred_task,
            "trace": self.trace,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def _score(cand: Candidate, preferred: int, prefs) -> tuple:
    """Eviction/selection key: predicted preferred-task loss, then
    preference-weighted total predicted loss as the tiebreak."""
    weighted = float(np.dot(prefs, cand.predicted))
    return (float(cand.predicted[preferred]), weighted)


def search(net: SuperNet, predictor: PredictorParams, query: PreferenceQuery,
           search_cfg: SearchConfig) -> SearchResult:
    """Evolutionary encoder search under a budget, deterministic per seed.

    Every admitted candidate satisfies the budget; over-budget mutants are
    discarded with the cycle consumed. Returns the pool member with the
    lowest predicted loss on the preferred task.
    """
    rng = np.random.default_rng(search_cfg.seed)
    prefs = np.asarray(query.prefs)
    preferred = int(np.argmax(prefs))  # ties -> lowest task index
    pool = init_pool(net, query, net.widths, search_cfg.pool_size, rng, predictor)
    n_enc = net.encoder_slim_count()
    trace = []

    def log(cycle):
        best = min(pool, key=lambda c: _score(c, preferred, prefs))
        trace.append({
            "cycle": cycle,
            "best_predicted": float(best.predicted[preferred]),
            "macs": best.macs,
            "pool_size": len(pool),
        })

    log(0)
    for cycle in range(1, search_cfg.cycles + 1):
        parent = pool[int(rng.integers(0, len(pool)))]
        layer = int(rng.integers(0, n_enc))
        mutant_cfg = mutate(net, parent.cfg, layer, query.budget_macs, net.widths,
                            eta=search_cfg.step)
        macs = net.count_macs(mutant_cfg)
        if macs <= query.budget_macs:
            pool.append(Candidate(cfg=mutant_cfg, macs=macs,
                                  predicted=predict(predictor, mutant_cfg)))
            worst = max(range(len(pool)), key=lambda i: _score(pool[i], preferred, prefs))
            pool.pop(worst)
        log(cycle)

    best = min(pool, key=lambda c: _score(c, preferred, prefs))
    return SearchResult(
        config=best.cfg,
        macs=best.macs,
        predicted_losses=best.predicted,
        preferred_task=preferred,
        trace=trace,
    )
