"""Start the HTTP service on a tiny in-memory model for frontend tests.

The predictor is fitted on a synthetic width->loss surface so the whole
thing is ready in a couple of seconds; the dataset is attached so
/api/evaluate works.
"""

import argparse

import numpy as np
import uvicorn

from ecmt.datasets import DatasetSpec, gen_synthetic_mtl
from ecmt.predictor import AccuracyRecord, PredictorHyper, train_predictor
from ecmt.service import create_app
from ecmt.supernet import build_toy_supernet


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--port", type=int, default=8731)
    parser.add_argument("--host", default="127.0.0.1")
    args = parser.parse_args()

    net = build_toy_supernet(seed=0)
    rng = np.random.default_rng(0)
    grid = np.array(list(net.widths))
    records = []
    for _ in range(300):
        arch = rng.choice(grid, size=net.config_length)
        base = 2.0 - arch.mean()
        records.append(AccuracyRecord(arch=arch, losses=np.array([base, base / 2, base / 3])))
    predictor, _ = train_predictor(records, PredictorHyper(epochs=80, seed=0))
    dataset = gen_synthetic_mtl(DatasetSpec(n_samples=64), seed=5)
    app = create_app(net=net, predictor=predictor, dataset=dataset)
    uvicorn.run(app, host=args.host, port=args.port, log_level="error")


if __name__ == "__main__":
    main()
