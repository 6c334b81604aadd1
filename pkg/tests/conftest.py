import numpy as np
import pytest

from ecmt.datasets import DatasetSpec, SplitSpec, gen_synthetic_mtl, split
from ecmt.predictor import PredictorHyper, collect_pairs, train_predictor
from ecmt.supernet import build_toy_supernet
from ecmt.training import TrainingRecipe, train_supernet


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of a scalar function at x, elementwise."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    scale = max(np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / scale


@pytest.fixture(scope="session")
def toy_dataset():
    return gen_synthetic_mtl(DatasetSpec(n_samples=512), seed=7)


@pytest.fixture(scope="session")
def toy_splits(toy_dataset):
    return split(toy_dataset, SplitSpec(seed=1))


@pytest.fixture(scope="session")
def trained_net(toy_splits):
    """Supernet trained with the default recipe; shared by the heavy tests."""
    net = build_toy_supernet(seed=0)
    train_supernet(net, toy_splits[0], TrainingRecipe(seed=0))
    return net


@pytest.fixture(scope="session")
def predictor_bundle(trained_net, toy_splits):
    """(params, records, holdout_l1) for the default 200-record collection."""
    rng = np.random.default_rng(11)
    records = collect_pairs(trained_net, trained_net.widths, 200, toy_splits[1], rng)
    params, holdout_l1 = train_predictor(records, PredictorHyper(seed=0))
    return params, records, holdout_l1
