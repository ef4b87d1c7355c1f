"""Python front end for the MAW novelty detector.

Arrays are numpy float64 with one point per row. Configuration and report
objects are plain dicts.
"""

import json

import numpy as np

from . import _maw
from ._maw import (
    ConfigError,
    DomainError,
    Error,
    Model,
    NumericalError,
    ParseError,
    ShapeError,
    ap,
    auc,
    empirical_w1,
    kl_gaussian,
    prop2_analytic,
    scalar_objective_f,
    stream_seed,
    w2_gaussian,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "Error",
    "Model",
    "NumericalError",
    "ParseError",
    "ShapeError",
    "ap",
    "auc",
    "empirical_w1",
    "gen_synthetic",
    "hyperparams",
    "kl_gaussian",
    "load_csv",
    "outlierness",
    "prop2_analytic",
    "run_experiment",
    "scalar_objective_f",
    "score",
    "stream_seed",
    "train",
    "verification_report",
    "w2_gaussian",
]


def gen_synthetic(dim=20, rank=1, inliers=500, c=0.2, noise=0.1, seed=0):
    """Unit-norm points near a random rank-`rank` subspace plus outliers.

    Returns (features, labels); label 1 marks an outlier.
    """
    x, y = _maw.gen_synthetic(dim, rank, inliers, c, noise, seed)
    return np.asarray(x), np.asarray(y, dtype=np.int64)


def load_csv(path):
    x, y = _maw.load_csv(str(path))
    return np.asarray(x), np.asarray(y, dtype=np.int64)


def train(data, seed=0, **hyperparams):
    """Train on the rows of `data`. Keyword arguments override defaults
    (latent_dim, feature_dim, eta, samples, epochs, batch_size, lr_vae,
    lr_gen, lr_critic, clip, variant).

    Returns (model, trace) where trace holds one dict per epoch.
    """
    x = np.ascontiguousarray(data, dtype=np.float64)
    return _maw.train(x, json.dumps(hyperparams), seed)


def hyperparams(model):
    return json.loads(model.hyperparams_json)


def score(model, data, samples=None, seed=None):
    """Normality scores in [-1, 1]; higher means more typical."""
    x = np.ascontiguousarray(data, dtype=np.float64)
    if samples is None:
        samples = hyperparams(model)["samples"]
    if seed is None:
        seed = stream_seed(model.seed, 2)
    return np.asarray(model.score(x, samples, seed))


def outlierness(model, data, **kwargs):
    """Negated scores, ready for auc/ap with outliers as positives."""
    return -score(model, data, **kwargs)


def run_experiment(config=None):
    """Run an evaluation (or a sweep, when config has a "sweep" section)."""
    return json.loads(_maw.run_experiment(json.dumps(config or {})))


def verification_report(seed=0):
    return json.loads(_maw.verification_report(seed))
