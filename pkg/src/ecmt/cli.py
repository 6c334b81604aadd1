"""Command-line front end: one subcommand per pipeline stage.

Exit codes: 0 success, 1 domain error (infeasible budget, bad file format),
2 usage error. Every failure prints a single ``error: ...`` line to stderr.
All numeric settings can come from a JSON config file; flags override it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import DatasetSpec, SplitSpec, gen_synthetic_mtl, load_dataset, save_dataset, split
from .errors import EcmtError
from .evaluation import (
    DEFAULT_PREFERENCE_COUNT,
    controllability_sweep,
    dirichlet_sample,
    evaluate_subnet,
    hypervolume_exact,
    hypervolume_mc,
)
from .predictor import (
    DEFAULT_PAIR_COUNT,
    PredictorHyper,
    collect_pairs,
    load_predictor,
    read_records,
    save_predictor,
    train_predictor,
    write_records,
)
from .search import PreferenceQuery, SearchConfig, search
from .supernet import SuperNet, WidthConfig, WidthList, build_toy_supernet
from .training import TrainingRecipe, train_supernet, write_loss_history

log = logging.getLogger("ecmt")


class UsageError(Exception):
    """Bad invocation: unknown flags, missing files named on the command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _comma_floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}") from exc


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(command: str, args, out: Path, artifacts: list, started: str) -> None:
    manifest = {
        "command": command,
        "config": getattr(args, "config", None),
        "seed": getattr(args, "seed", None),
        "out": str(out),
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "artifacts": {str(p): _sha256(Path(p)) for p in artifacts},
    }
    Path(f"{out}.manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))


def _load_config(args) -> dict:
    path = getattr(args, "config", None)
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {p} is not valid JSON: {exc}") from exc


def _setting(args, cfg: dict, key: str, default=None):
    """Flag value if given, else config-file value, else default."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    return cfg.get(key, default)


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


# -- command handlers -----------------------------------------------------------


def _cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    started = datetime.now(timezone.utc).isoformat()
    seed = int(_setting(args, cfg, "seed", 0))
    samples = int(_setting(args, cfg, "samples", 512))
    out = Path(_require(args, cfg, "out"))
    dataset = gen_synthetic_mtl(DatasetSpec(n_samples=samples), seed=seed)
    save_dataset(dataset, out)
    log.info("wrote %d samples to %s", samples, out)
    _write_manifest("gen-data", args, out, [out], started)
    return 0


def _require(args, cfg, key: str):
    val = _setting(args, cfg, key)
    if val is None:
        raise UsageError(f"missing required setting --{key.replace('_', '-')}")
    return val


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    started = datetime.now(timezone.utc).isoformat()
    data_path = Path(_require(args, cfg, "dataset"))
    out = Path(_setting(args, cfg, "checkpoint", None) or _require(args, cfg, "out"))
    seed = int(_setting(args, cfg, "seed", 0))
    widths = WidthList(tuple(_setting(args, cfg, "widths", (0.6, 0.7, 0.8, 0.9, 1.0))))
    recipe = TrainingRecipe(
        b=int(_setting(args, cfg, "b", 4)),
        kd_weight=float(_setting(args, cfg, "lambda", 1.0)),
        task_weights=tuple(cfg["rho"]) if "rho" in cfg else None,
        epochs=int(_setting(args, cfg, "epochs", 30)),
        batch_size=int(_setting(args, cfg, "batch_size", 32)),
        lr=float(_setting(args, cfg, "lr", 1e-3)),
        seed=seed,
    )
    dataset = load_dataset(data_path)
    train, _ = split(dataset, SplitSpec(seed=seed))
    net = build_toy_supernet(widths=widths, tasks=dataset.tasks, seed=seed)
    history = train_supernet(net, train, recipe)
    net.save(out)
    history_path = Path(f"{out}.history.csv")
    write_loss_history(history_path, history)
    log.info("trained %d epochs; checkpoint %s", recipe.epochs, out)
    _write_manifest("train", args, out, [out, history_path], started)
    return 0


def _cmd_collect_pairs(args) -> int:
    cfg = _load_config(args)
    started = datetime.now(timezone.utc).isoformat()
    net = SuperNet.load(Path(_require(args, cfg, "net")))
    dataset = load_dataset(Path(_require(args, cfg, "dataset")))
    seed = int(_setting(args, cfg, "seed", 0))
    m = int(_setting(args, cfg, "pairs", DEFAULT_PAIR_COUNT))
    out = Path(_require(args, cfg, "out"))
    _, holdout = split(dataset, SplitSpec(seed=seed))
    records = collect_pairs(net, net.widths, m, holdout, np.random.default_rng(seed))
    write_records(out, records)
    log.info("measured %d configurations into %s", m, out)
    _write_manifest("collect-pairs", args, out, [out], started)
    return 0


def _cmd_train_predictor(args) -> int:
    cfg = _load_config(args)
    started = datetime.now(timezone.utc).isoformat()
    records = read_records(Path(_require(args, cfg, "records")))
    out = Path(_require(args, cfg, "out"))
    hyper = PredictorHyper(
        epochs=int(_setting(args, cfg, "epochs", 150)),
        lr=float(_setting(args, cfg, "lr", 1e-3)),
        batch_size=int(_setting(args, cfg, "batch_size", 16)),
        seed=int(_setting(args, cfg, "seed", 0)),
    )
    pp, holdout_l1 = train_predictor(records, hyper)
    save_predictor(pp, out)
    log.info("predictor holdout L1 per task: %s", [round(v, 6) for v in holdout_l1])
    _dump_json(Path(f"{out}.quality.json"), {"holdout_l1": [float(v) for v in holdout_l1]})
    _write_manifest("train-predictor", args, out, [out, Path(f"{out}.quality.json")], started)
    return 0


def _cmd_search(args) -> int:
    cfg = _load_config(args)
    started = datetime.now(timezone.utc).isoformat()
    net = SuperNet.load(Path(_require(args, cfg, "net")))
    pp = load_predictor(Path(_require(args, cfg, "predictor")))
    prefs = _setting(args, cfg, "prefs")
    if prefs is None:
        raise UsageError("missing required setting --prefs")
    query = PreferenceQuery(budget_macs=int(_require(args, cfg, "budget")), prefs=tuple(prefs))
    search_cfg = SearchConfig(
        pool_size=int(_setting(args, cfg, "pool", 50)),
        cycles=int(_setting(args, cfg, "cycles", SearchConfig.for_net(net).cycles)),
        seed=int(_setting(args, cfg, "seed", 0)),
    )
    result = search(net, pp, query, search_cfg)
    out = Path(_require(args, cfg, "out"))
    payload = result.to_json_dict()
    payload["budget_macs"] = query.budget_macs
    payload["preferences"] = list(query.prefs)
    payload["seed"] = search_cfg.seed
    _dump_json(out, payload)
    log.info("best config %s at %d MACs", payload["config"], result.macs)
    _write_manifest("search", args, out, [out], started)
    return 0


def _parse_config_payload(payload: dict) -> WidthConfig:
    block = payload.get("config", payload)
    return WidthConfig(
        encoder=tuple(block["encoder"]),
        decoders=tuple(tuple(d) for d in block["decoders"]),
    )


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    started = datetime.now(timezone.utc).isoformat()
    net = SuperNet.load(Path(_require(args, cfg, "net")))
    dataset = load_dataset(Path(_require(args, cfg, "dataset")))
    seed = int(_setting(args, cfg, "seed", 0))
    train, holdout = split(dataset, SplitSpec(seed=seed))
    out = Path(_require(args, cfg, "out"))
    cfg_path = _setting(args, cfg, "subnet")
    if cfg_path is not None:
        width_cfg = _parse_config_payload(json.loads(Path(cfg_path).read_text()))
        losses, metrics = evaluate_subnet(net, width_cfg, holdout.data, train.data)
        payload = {
            "losses": [float(v) for v in losses],
            "metrics": metrics,
            "macs": net.count_macs(width_cfg),
        }
    else:
        pp = load_predictor(Path(_require(args, cfg, "predictor")))
        budget = int(_require(args, cfg, "budget"))
        count = int(_setting(args, cfg, "prefs_count", DEFAULT_PREFERENCE_COUNT))
        alpha_val = float(_setting(args, cfg, "alpha", 0.2))
        prefs = dirichlet_sample(
            [alpha_val] * net.n_tasks, count, np.random.default_rng(seed)
        )
        search_cfg = SearchConfig(
            pool_size=int(_setting(args, cfg, "pool", 50)),
            cycles=int(_setting(args, cfg, "cycles", SearchConfig.for_net(net).cycles)),
            seed=seed,
        )
        ref = _setting(args, cfg, "ref", None)
        report = controllability_sweep(
            net, pp, budget, prefs, search_cfg, holdout.data, calib=train.data,
            ref=tuple(ref) if ref else None,
        )
        payload = report.to_json_dict()
        report.write_csv(Path(f"{out}.csv"))
    _dump_json(out, payload)
    artifacts = [out] + ([Path(f"{out}.csv")] if cfg_path is None else [])
    _write_manifest("eval", args, out, artifacts, started)
    return 0


def _cmd_hv(args) -> int:
    cfg = _load_config(args)
    started = datetime.now(timezone.utc).isoformat()
    points_path = Path(_require(args, cfg, "points"))
    if not points_path.exists():
        raise UsageError(f"points file not found: {points_path}")
    ref = _setting(args, cfg, "ref")
    if ref is None:
        raise UsageError("missing required setting --ref")
    rows = []
    for line in points_path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError:
            continue  # header line
    points = np.asarray(rows)
    if len(ref) <= 4:
        value = hypervolume_exact(points, ref)
        stderr = None
    else:
        value, stderr = hypervolume_mc(
            points, ref, rng=np.random.default_rng(int(_setting(args, cfg, "seed", 0)))
        )
    print(value)
    out = getattr(args, "out", None)
    if out:
        payload = {"hv": value, "reference_point": list(ref)}
        if stderr is not None:
            payload["hv_stderr"] = stderr
        _dump_json(Path(out), payload)
        _write_manifest("hv", args, Path(out), [Path(out)], started)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = _load_config(args)
    net = SuperNet.load(Path(_require(args, cfg, "net")))
    pp = load_predictor(Path(_require(args, cfg, "predictor")))
    dataset_path = _setting(args, cfg, "dataset")
    dataset = load_dataset(Path(dataset_path)) if dataset_path else None
    app = create_app(net=net, predictor=pp, dataset=dataset)
    host = _setting(args, cfg, "host", "127.0.0.1")
    port = int(_setting(args, cfg, "port", 8000))
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ecmt", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--seed", type=int, help="RNG seed (default 0)")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("gen-data", help="generate a synthetic multi-task dataset")
    common(p)
    p.add_argument("--samples", type=int, help="number of samples (default 512)")
    p.set_defaults(handler=_cmd_gen_data)

    p = sub.add_parser("train", help="train the supernet with the sandwich rule")
    common(p)
    p.add_argument("--dataset", help="dataset container path")
    p.add_argument("--widths", type=_comma_floats, help="width ratio grid, e.g. 0.6,0.7,...,1.0")
    p.add_argument("--b", type=int, help="sandwich size (default 4)")
    p.add_argument("--lambda", dest="lambda_", type=float, help="distillation weight (default 1)")
    p.add_argument("--epochs", type=int, help="training epochs (default 30)")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("collect-pairs", help="measure sampled configs for the predictor")
    common(p)
    p.add_argument("--net", help="supernet checkpoint")
    p.add_argument("--dataset", help="dataset container path")
    p.add_argument("--pairs", type=int, help="number of configs to measure (default 200)")
    p.set_defaults(handler=_cmd_collect_pairs)

    p = sub.add_parser("train-predictor", help="fit the accuracy predictor on records")
    common(p)
    p.add_argument("--records", help="records CSV from collect-pairs")
    p.add_argument("--epochs", type=int, help="default 150")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="default 16")
    p.add_argument("--lr", type=float, help="default 0.001")
    p.set_defaults(handler=_cmd_train_predictor)

    p = sub.add_parser("search", help="find a subnet for a budget and preferences")
    common(p)
    p.add_argument("--net", help="supernet checkpoint")
    p.add_argument("--predictor", help="predictor checkpoint")
    p.add_argument("--budget", type=int, help="compute budget in MACs")
    p.add_argument("--prefs", type=_comma_floats, help="per-task preferences in [0,1]")
    p.add_argument("--cycles", type=int, help="search cycles")
    p.add_argument("--pool", type=int, help="pool size (default 50)")
    p.set_defaults(handler=_cmd_search)

    p = sub.add_parser("eval", help="measured evaluation: one subnet, or a preference sweep")
    common(p)
    p.add_argument("--net", help="supernet checkpoint")
    p.add_argument("--dataset", help="dataset container path")
    p.add_argument("--subnet", help="JSON file with a width config (single-config mode)")
    p.add_argument("--predictor", help="predictor checkpoint (sweep mode)")
    p.add_argument("--budget", type=int, help="budget for the sweep")
    p.add_argument("--prefs-count", dest="prefs_count", type=int, help="default 20")
    p.add_argument("--alpha", type=float, help="Dirichlet concentration (default 0.2)")
    p.add_argument("--cycles", type=int)
    p.add_argument("--pool", type=int)
    p.add_argument("--ref", type=_comma_floats, help="hypervolume reference point")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("hv", help="hypervolume of a CSV of loss points")
    common(p)
    p.add_argument("--points", help="CSV of loss points, one row per point")
    p.add_argument("--ref", type=_comma_floats, help="reference point, e.g. 4,4,4")
    p.set_defaults(handler=_cmd_hv)

    p = sub.add_parser("serve", help="serve search/evaluate over HTTP")
    common(p)
    p.add_argument("--net", help="supernet checkpoint")
    p.add_argument("--predictor", help="predictor checkpoint")
    p.add_argument("--dataset", help="optional dataset for /api/evaluate")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(handler=_cmd_serve)

    return parser


_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def main(argv=None) -> int:
    level = _LOG_LEVELS.get(os.environ.get("ECMT_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    # the train flag is spelled --lambda; argparse stores it as lambda_
    if hasattr(args, "lambda_"):
        args.__dict__["lambda"] = args.lambda_
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EcmtError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
