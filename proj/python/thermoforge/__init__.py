"""Python access to the thermoforge core."""

import json

from ._thermoforge import (
    ConfigGraph,
    IoError,
    RangeError,
    StructureError,
    ValidationError,
    composite_config_count as _composite_config_count,
    config_list_hash,
    enumerate_all,
    enumerate_multi_split,
    enumerate_single_split,
    featurize,
    knn_predict as _knn_predict,
    lhs_sample,
    merge_patterns,
    run_study as _run_study,
    simulate_endurance as _simulate_endurance,
    solve as _solve,
    train_knn as _train_knn,
)

__all__ = [
    "ConfigGraph",
    "IoError",
    "RangeError",
    "StructureError",
    "ValidationError",
    "composite_config_count",
    "config_list_hash",
    "enumerate_all",
    "enumerate_multi_split",
    "enumerate_single_split",
    "featurize",
    "knn_predict",
    "lhs_sample",
    "merge_patterns",
    "run_study",
    "simulate_endurance",
    "solve",
    "train_knn",
]


def _dump(obj):
    return "" if obj is None else json.dumps(obj)


def composite_config_count(system):
    return _composite_config_count(json.dumps(system))


def simulate_endurance(config, loads, t_max=500.0, dt=0.02, params=None):
    return _simulate_endurance(config, list(loads), t_max, dt, _dump(params))


def solve(config, loads, options=None, params=None):
    """Optimal control of one configuration; returns the solution as a dict."""
    return json.loads(_solve(config, list(loads), _dump(options), _dump(params)))


def run_study(spec, csv_path, workers=1):
    return _run_study(json.dumps(spec), str(csv_path), workers)


def train_knn(features, labels, k):
    return json.loads(_train_knn(features, labels, k))


def knn_predict(model, row):
    return _knn_predict(json.dumps(model), list(row))
