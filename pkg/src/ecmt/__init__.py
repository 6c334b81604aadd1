"""Train-once slimmable multi-task supernet with per-deployment subnet search."""

__version__ = "0.1.0"

from .supernet import (  # noqa: F401
    LayerSpec,
    NormStats,
    SuperNet,
    TaskSpec,
    WidthConfig,
    WidthList,
    active_count,
    build_toy_supernet,
    extremes,
    sample_config,
)
from .datasets import (  # noqa: F401
    DatasetSpec,
    MtlDataset,
    SplitSpec,
    gen_synthetic_mtl,
    load_dataset,
    save_dataset,
    split,
)
from .training import TrainingRecipe, sandwich_step, train_supernet  # noqa: F401
from .predictor import (  # noqa: F401
    AccuracyRecord,
    PredictorHyper,
    collect_pairs,
    encode_config,
    predict,
    train_predictor,
)
from .search import PreferenceQuery, SearchConfig, SearchResult, search  # noqa: F401
from .evaluation import (  # noqa: F401
    controllability_sweep,
    dirichlet_sample,
    evaluate_subnet,
    hypervolume_exact,
    hypervolume_mc,
)
