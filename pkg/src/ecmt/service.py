"""HTTP facade over a frozen supernet + predictor for interactive search.

The model never mutates after startup; every request works on read-only
state plus per-request search scratch, so concurrent queries are safe. A
ring buffer keeps the last 256 search interactions for the explorer UI.
"""

from __future__ import annotations

import threading
import uuid
from collections import deque

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .datasets import MtlDataset, SplitSpec, split
from .errors import ConfigError, InfeasibleBudgetError
from .evaluation import evaluate_subnet
from .predictor import PredictorParams
from .search import PreferenceQuery, SearchConfig, search
from .supernet import SuperNet, WidthConfig, extremes

HISTORY_CAPACITY = 256


def create_app(net: SuperNet | None = None, predictor: PredictorParams | None = None,
               dataset: MtlDataset | None = None, split_seed: int = 0) -> FastAPI:
    app = FastAPI(title="ecmt", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    history: deque = deque(maxlen=HISTORY_CAPACITY)
    history_lock = threading.Lock()

    eval_train = eval_holdout = None
    if dataset is not None:
        train_split, holdout_split = split(dataset, SplitSpec(seed=split_seed))
        eval_train, eval_holdout = train_split.data, holdout_split.data

    if net is not None:
        macs_min = net.count_macs(extremes(net.widths, net)[1])
        macs_max = net.count_macs(extremes(net.widths, net)[0])
        default_cycles = SearchConfig.for_net(net).cycles

    def _error(status: int, message: str, **extra):
        return JSONResponse(status_code=status, content={"error": message, **extra})

    @app.exception_handler(RequestValidationError)
    async def _malformed(request: Request, exc: RequestValidationError):
        return _error(400, "malformed request body")

    @app.exception_handler(Exception)
    async def _internal(request: Request, exc: Exception):
        return _error(500, "internal error", id=str(uuid.uuid4()))

    @app.get("/api/model")
    def model_info():
        if net is None:
            return _error(503, "no model loaded")
        return {
            "tasks": [
                {"id": t_idx, "name": task.name, "kind": task.kind}
                for t_idx, task in enumerate(net.tasks)
            ],
            "width_list": list(net.widths.ratios),
            "layer_counts": {
                "encoder": net.encoder_slim_count(),
                "decoders": net.decoder_slim_counts(),
            },
            "macs_min": macs_min,
            "macs_max": macs_max,
        }

    @app.post("/api/search")
    async def run_search(request: Request):
        if net is None or predictor is None:
            return _error(503, "no model loaded")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "malformed request body")
        if not isinstance(body, dict):
            return _error(400, "malformed request body")
        budget = body.get("budget_macs")
        prefs = body.get("preferences")
        if not isinstance(budget, int) or not isinstance(prefs, list):
            return _error(400, "budget_macs (int) and preferences (list) are required")
        if len(prefs) != net.n_tasks:
            return _error(400, f"expected {net.n_tasks} preferences, got {len(prefs)}")
        try:
            prefs = tuple(float(p) for p in prefs)
        except (TypeError, ValueError):
            return _error(400, "preferences must be numbers")
        if any(not (0.0 <= p <= 1.0) for p in prefs):
            return _error(400, "preferences must lie in [0, 1]")
        if budget < macs_min:
            return _error(422, "budget below the minimal achievable cost", macs_min=macs_min)
        seed = body.get("seed", 0)
        cycles = body.get("cycles", default_cycles)
        if not isinstance(seed, int) or not isinstance(cycles, int) or cycles < 0:
            return _error(400, "seed and cycles must be non-negative integers")
        query = PreferenceQuery(budget_macs=budget, prefs=prefs)
        cfg = SearchConfig(pool_size=int(body.get("pool_size", 50)), cycles=cycles, seed=seed)
        try:
            result = search(net, predictor, query, cfg)
        except InfeasibleBudgetError as exc:
            return _error(422, str(exc), macs_min=exc.min_macs)
        payload = result.to_json_dict()
        with history_lock:
            history.append({"request": dict(body), "result": payload})
        return payload

    @app.post("/api/evaluate")
    async def run_evaluate(request: Request):
        if net is None:
            return _error(503, "no model loaded")
        if eval_holdout is None:
            return _error(409, "no dataset attached; start the server with --dataset")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "malformed request body")
        block = body.get("config") if isinstance(body, dict) else None
        if not isinstance(block, dict) or "encoder" not in block or "decoders" not in block:
            return _error(400, "body must carry config.encoder and config.decoders")
        try:
            cfg = WidthConfig(
                encoder=tuple(block["encoder"]),
                decoders=tuple(tuple(d) for d in block["decoders"]),
            )
            net.validate_config(cfg)
        except (ConfigError, TypeError, ValueError) as exc:
            return _error(400, f"invalid config: {exc}")
        losses, metrics = evaluate_subnet(net, cfg, eval_holdout, eval_train)
        return {
            "losses": [float(v) for v in losses],
            "metrics": metrics,
            "macs": net.count_macs(cfg),
        }

    @app.get("/api/history")
    def get_history():
        with history_lock:
            return {"entries": list(history)}

    return app
