"""Hyperparameter selection and the moving-window method comparison."""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from sklearn.base import clone

from .core import HierarchicalDataset, InvalidInputError, SubTaskData
from .data_io import extract_season, load_gridded_csv, split_moving_window, table_from_dataset
from .estimators import (
    BestESMRegressor,
    HMTLRegressor,
    MMARegressor,
    MSSLRegressor,
    OLSRegressor,
    S2M2RRegressor,
    hierarchical_rmse,
)
from .synthetic import ClimateSynthSpec, SyntheticSpec, generate_hierarchical_dataset, generate_synthetic_climate

METHODS = ("hmtl", "mssl", "ols", "mma", "best_esm", "s2m2r")
FITTED = ("hmtl", "mssl", "s2m2r")
DEFAULT_GRIDS = {
    "hmtl": {"lambda0": [0.1], "lambda1": [0.0002], "lambda2": [0.01]},
    "mssl": {"lambda0": [0.1], "lambda1": [0.0002]},
    "s2m2r": {"lambda_": [1000.0]},
}


def expand_grid(grid):
    """Grid points in declared order.

    ``grid`` is either a mapping of parameter name to candidate values
    (expanded as a product, last name varying fastest) or a list of
    explicit parameter dicts.
    """
    if grid is None:
        raise InvalidInputError("empty hyperparameter grid")
    if isinstance(grid, dict):
        if not grid:
            return [{}]
        names = list(grid)
        values = [list(v) if isinstance(v, (list, tuple)) else [v] for v in grid.values()]
        if any(len(v) == 0 for v in values):
            raise InvalidInputError("every grid entry needs at least one value")
        return [dict(zip(names, combo)) for combo in itertools.product(*values)]
    points = [dict(p) for p in grid]
    if not points:
        raise InvalidInputError("empty hyperparameter grid")
    return points


def temporal_split(dataset, fraction=0.8):
    """First ``floor(fraction · n)`` rows of every sub-task to fit, the rest to validate."""
    fit, val = [], []
    for st in dataset:
        f_row, v_row = [], []
        for sub in st:
            if sub.n < 5:
                raise InvalidInputError(f"validation split needs at least 5 timestamps, got {sub.n}")
            cut = int(math.floor(fraction * sub.n + 1e-9))
            f_row.append(SubTaskData(sub.X[:cut], sub.y[:cut]))
            v_row.append(SubTaskData(sub.X[cut:], sub.y[cut:]))
        fit.append(tuple(f_row))
        val.append(tuple(v_row))
    return HierarchicalDataset(tuple(fit)), HierarchicalDataset(tuple(val))


def _nested(dataset):
    return [[sub.X for sub in st] for st in dataset], [[sub.y for sub in st] for st in dataset]


def mean_rmse(estimator, dataset):
    X, y = _nested(dataset)
    return float(np.mean(hierarchical_rmse(estimator.predict(X), y)))


@dataclass
class GridSearchResult:
    best_params: dict
    scores: list = field(default_factory=list)  # (params, validation RMSE or None, error or None)

    def to_dict(self):
        return {"best_params": self.best_params,
                "scores": [{"params": p, "rmse": s, "error": e} for p, s, e in self.scores]}


def grid_search(estimator, dataset, grid, fraction=0.8):
    """Pick the grid point with the lowest mean validation RMSE.

    The first ``fraction`` of every sub-task's rows fits, the rest
    validates. Ties go to the earliest point. A single-point grid is
    returned without fitting.
    """
    points = expand_grid(grid)
    if len(points) == 1:
        return GridSearchResult(points[0], [(points[0], None, None)])
    fit, val = temporal_split(dataset, fraction)
    X, y = _nested(fit)
    scores = []
    for p in points:
        try:
            est = clone(estimator).set_params(**p).fit(X, y)
            scores.append((p, mean_rmse(est, val), None))
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            scores.append((p, None, f"{type(exc).__name__}: {exc}"))
    valid = [(i, s) for i, (_, s, _) in enumerate(scores) if s is not None and np.isfinite(s)]
    if not valid:
        raise RuntimeError("every grid point failed: " + "; ".join(e for _, _, e in scores if e))
    best = min(valid, key=lambda item: (item[1], item[0]))[0]
    return GridSearchResult(points[best], scores)


def make_estimator(method, grid_spec=None, seed=0):
    if method == "hmtl":
        return HMTLRegressor(random_state=seed)
    if method == "mssl":
        return MSSLRegressor(random_state=seed)
    if method == "ols":
        return OLSRegressor()
    if method == "mma":
        return MMARegressor()
    if method == "best_esm":
        return BestESMRegressor()
    if method == "s2m2r":
        return S2M2RRegressor(grid=grid_spec)
    raise InvalidInputError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


@dataclass
class ExperimentConfig:
    """Everything a benchmark run depends on; loaded from JSON.

    ``data`` selects the source: ``{"source": "csv", "path": ..., "grid": ...}``,
    ``{"source": "synthetic_climate", ...ClimateSynthSpec fields}`` or
    ``{"source": "synthetic", ...SyntheticSpec fields}``. Relative paths are
    resolved against the config file's directory.
    """

    methods: tuple = ("hmtl", "mssl", "ols", "mma", "best_esm", "s2m2r")
    data: dict = field(default_factory=lambda: {"source": "synthetic_climate"})
    seasons: tuple = ("year",)
    season_mapping: dict | None = None
    train_years: tuple = (20, 30, 50)
    test_years: int = 10
    step_years: int | None = None
    grids: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "results"
    threads: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if not self.methods:
            raise InvalidInputError("config needs at least one method")
        unknown = [mth for mth in self.methods if mth not in METHODS]
        if unknown:
            raise InvalidInputError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise InvalidInputError("methods must be distinct")
        self.seasons = tuple(self.seasons)
        self.train_years = tuple(int(v) for v in self.train_years)
        if not self.seasons or not self.train_years:
            raise InvalidInputError("config needs at least one season and one training length")
        extra = [k for k in self.grids if k not in METHODS]
        if extra:
            raise InvalidInputError(f"grids given for unknown method(s) {extra}")
        for mth in self.methods:
            if mth in FITTED:
                expand_grid(self.grid_for(mth))
        if self.threads < 1:
            raise InvalidInputError("threads must be >= 1")
        if "source" not in self.data:
            raise InvalidInputError("data section needs a 'source'")

    def grid_for(self, method):
        return self.grids.get(method, DEFAULT_GRIDS.get(method, {}))

    def to_dict(self):
        out = asdict(self)
        out["methods"] = list(self.methods)
        out["seasons"] = list(self.seasons)
        out["train_years"] = list(self.train_years)
        return out

    @classmethod
    def from_dict(cls, raw, base_dir=None):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise InvalidInputError(f"unknown config key(s): {', '.join(unknown)}")
        raw = dict(raw)
        if base_dir is not None and "data" in raw:
            data = dict(raw["data"])
            for key in ("path", "grid"):
                if data.get(key) and not os.path.isabs(data[key]):
                    data[key] = os.path.normpath(os.path.join(base_dir, data[key]))
            raw["data"] = data
        return cls(**raw)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def load_table(data):
    """Build the ClimateTable described by a config ``data`` section."""
    data = dict(data)
    source = data.pop("source")
    if source == "csv":
        if "path" not in data:
            raise InvalidInputError("csv source needs a 'path'")
        return load_gridded_csv(data["path"], data.get("grid"))
    if source == "synthetic_climate":
        return generate_synthetic_climate(ClimateSynthSpec(**data))
    if source == "synthetic":
        dataset, _, _ = generate_hierarchical_dataset(SyntheticSpec(**data))
        return table_from_dataset(dataset)
    raise InvalidInputError(f"unknown data source {source!r}")


@dataclass
class CellResult:
    """Outcome of one (season, training length, window, method) cell."""

    season: str
    train_years: int
    window: int
    split: object
    method: str
    rmse: np.ndarray | None = None  # (V, m)
    params: dict | None = None
    reason: str = ""


def _run_cell(cell, config, table):
    season, length, w, split, method = cell
    result = CellResult(season, length, w, split, method)
    try:
        train = split.train.to_dataset()
        test = split.test.to_dataset()
        est = make_estimator(method, table.grid, config.seed)
        params = {}
        if method in FITTED:
            params = grid_search(est, train, config.grid_for(method)).best_params
            est.set_params(**params)
        X, y = _nested(train)
        est.fit(X, y)
        Xt, yt = _nested(test)
        rmse = hierarchical_rmse(est.predict(Xt), yt)
        if not np.all(np.isfinite(rmse)):
            raise ArithmeticError("non-finite test RMSE")
        result.rmse, result.params = rmse, params
    except Exception as exc:  # a failed cell is reported, the sweep goes on
        result.reason = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    return result


def _fmt(value):
    return "" if value is None else repr(float(value))


@dataclass
class ExperimentResult:
    cells: list
    summary: list
    paths: dict


def run_experiment(config, output_dir=None, threads=None):
    """Run every (season, training length, window, method) cell and write reports.

    Writes ``summary.csv`` (mean and population std over windows of the
    location-averaged RMSE), ``windows.csv`` (one row per cell and
    variable), ``per_location.csv`` (one row per cell, variable and
    location) and ``manifest.json``. Outputs depend only on the config and
    seed, not on ``threads``.
    """
    output_dir = output_dir or config.output_dir
    threads = threads or config.threads
    table = load_table(config.data)
    cells = []
    for season in config.seasons:
        seasonal = extract_season(table, season, config.season_mapping)
        for length in config.train_years:
            for w, split in enumerate(split_moving_window(seasonal, length, config.test_years,
                                                          config.step_years)):
                for method in config.methods:
                    cells.append((season, length, w, split, method))

    def work(cell):
        return _run_cell(cell, config, table)

    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, cells))
    else:
        results = [work(c) for c in cells]

    os.makedirs(output_dir, exist_ok=True)
    paths = {name: os.path.join(output_dir, name)
             for name in ("summary.csv", "windows.csv", "per_location.csv", "manifest.json")}
    _write_windows(paths["windows.csv"], results, table)
    _write_per_location(paths["per_location.csv"], results, table)
    summary = summarize(results, table, config)
    _write_summary(paths["summary.csv"], summary)
    _write_manifest(paths["manifest.json"], config, table, len(results),
                    sum(r.rmse is None for r in results))
    return ExperimentResult(results, summary, paths)


def summarize(results, table, config):
    """Rows of (season, variable, train_years, method, mean, std, windows, missing)."""
    rows = []
    for season in config.seasons:
        for v, variable in enumerate(table.variables):
            for length in config.train_years:
                for method in config.methods:
                    group = [r for r in results
                             if r.season == season and r.train_years == length and r.method == method]
                    values = [float(np.mean(r.rmse[v])) for r in group if r.rmse is not None]
                    missing = sum(r.rmse is None for r in group)
                    mean = float(np.mean(values)) if values else None
                    std = float(np.std(values)) if values else None
                    rows.append((season, variable, length, method, mean, std, len(values), missing))
    return rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_summary(path, summary):
    _write_csv(path, ["season", "variable", "train_years", "method", "mean_rmse", "std_rmse",
                      "windows", "missing"],
               [(s, v, n, mth, _fmt(mean), _fmt(std), k, miss)
                for s, v, n, mth, mean, std, k, miss in summary])


def _write_windows(path, results, table):
    rows = []
    for r in results:
        sp = r.split
        base = [r.season, r.train_years, r.window, sp.train_years[0], sp.train_years[1],
                sp.test_years[0], sp.test_years[1], r.method]
        params = json.dumps(r.params, sort_keys=True) if r.params is not None else ""
        for v, variable in enumerate(table.variables):
            if r.rmse is None:
                rows.append(base + [variable, "", "missing", r.reason, ""])
            else:
                rows.append(base + [variable, _fmt(np.mean(r.rmse[v])), "ok", "", params])
    _write_csv(path, ["season", "train_years", "window", "train_start", "train_end", "test_start",
                      "test_end", "method", "variable", "rmse", "status", "reason", "params"], rows)


def _write_per_location(path, results, table):
    rows = []
    for r in results:
        if r.rmse is None:
            continue
        for v, variable in enumerate(table.variables):
            for k, loc in enumerate(table.location_ids):
                row, col = table.grid.position(k)
                rows.append([r.season, r.train_years, r.window, r.method, variable, loc, row, col,
                             _fmt(table.lat[k]), _fmt(table.lon[k]), _fmt(r.rmse[v, k])])
    _write_csv(path, ["season", "train_years", "window", "method", "variable", "location_id",
                      "row", "col", "lat", "lon", "rmse"], rows)


def _versions():
    import scipy
    import sklearn

    from . import __version__

    return {"hmtl": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def _write_manifest(path, config, table, n_cells, n_missing):
    cfg = config.to_dict()
    # the thread count does not influence results; leave it out so manifests compare equal
    cfg.pop("threads", None)
    cfg.pop("output_dir", None)
    payload = {
        "config": cfg,
        "seed": config.seed,
        "versions": _versions(),
        "data": {"variables": list(table.variables), "locations": table.m, "models": table.d,
                 "timestamps": table.n,
                 "grid": {"rows": table.grid.rows, "cols": table.grid.cols}},
        "cells": n_cells,
        "missing_cells": n_missing,
        "outputs": ["summary.csv", "windows.csv", "per_location.csv"],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
