"""Alternating minimization over weights and precisions, plus model files."""

from __future__ import annotations

import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    FitReport,
    HierarchicalDataset,
    HmtlModel,
    Hyperparams,
    InvalidInputError,
    SolverError,
    group_penalty,
    hmtl_objective,
    logdet_pd,
    sample_covariance,
)
from .omega import AdmmConfig, ADMMConvergenceWarning, _solve_omega_step
from .theta import ThetaSolveConfig, _Tasks, solve_theta_step

MODEL_FORMAT = "hmtl-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class DriverConfig:
    outer_tol: float = 1e-4
    max_outer_iters: int = 50
    rng_seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if not self.outer_tol > 0:
            raise InvalidInputError("outer_tol must be positive")
        if self.max_outer_iters < 1:
            raise InvalidInputError("max_outer_iters must be >= 1")


def init_weights(T, d, m, seed):
    """Uniform(-0.5, 0.5) starting weights from one stream, super-task by super-task."""
    rng = np.random.default_rng(seed)
    return [rng.uniform(-0.5, 0.5, size=(d, m)) for _ in range(T)]


def _omega_step_value(omegas, s_set, hyper):
    value = sum(-logdet_pd(om) + hyper.lambda0 * float(np.sum(s * om))
                for om, s in zip(omegas, s_set))
    return value + group_penalty(omegas, hyper.lambda1, hyper.lambda2)


def _as_dataset(data):
    return data if isinstance(data, HierarchicalDataset) else HierarchicalDataset(data)


def _map(fn, items, n_jobs):
    if n_jobs is None or n_jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def fit_hmtl(data, hyper=None, cfg=None, theta_cfg=None, admm_cfg=None,
             theta_init=None, callback=None):
    """Fit weights and precision matrices for every super-task jointly.

    Starts from identity precisions and uniform random weights, then
    alternates the weight update (one L-BFGS solve per super-task) with the
    joint ADMM precision update until the relative change of the full
    objective falls below ``cfg.outer_tol``.

    Parameters
    ----------
    data : HierarchicalDataset or nested sequence of SubTaskData
    hyper : Hyperparams
    cfg : DriverConfig
    theta_cfg : ThetaSolveConfig
    admm_cfg : AdmmConfig
    theta_init : list of (d, m) arrays, optional
        Overrides the seeded random initialization.
    callback : callable, optional
        Receives every (T', m, m) stack of ADMM Ω iterates.

    Returns
    -------
    HmtlModel
    """
    data = _as_dataset(data)
    hyper = hyper or Hyperparams()
    cfg = cfg or DriverConfig()
    theta_cfg = theta_cfg or ThetaSolveConfig()
    admm_cfg = admm_cfg or AdmmConfig()
    T, m, d = data.T, data.m, data.d

    if theta_init is None:
        thetas = init_weights(T, d, m, cfg.rng_seed)
    else:
        thetas = [np.array(th, dtype=float) for th in theta_init]
        if len(thetas) != T or any(th.shape != (d, m) for th in thetas):
            raise InvalidInputError(f"theta_init must hold {T} matrices of shape {(d, m)}")

    if hyper.lambda2 == 0 and T > 1:
        # no coupling: each super-task is its own problem with its own stopping test
        parts = [fit_mssl(data[t], hyper, cfg, theta_cfg, admm_cfg, [thetas[t]], callback)
                 for t in range(T)]
        return _merge_independent(parts, hyper)

    start = time.perf_counter()
    omegas = [np.eye(m) for _ in range(T)]
    # without the trace term the precision update is unbounded; keep the identity
    update_omega = hyper.lambda0 > 0
    report = FitReport()
    state = None
    stacks = [_Tasks(st) for st in data]
    prev = hmtl_objective(data, thetas, omegas, hyper)
    report.objective_trace.append(prev)

    for it in range(1, cfg.max_outer_iters + 1):
        thetas = _map(
            lambda t: solve_theta_step(stacks[t], omegas[t], hyper.lambda0, thetas[t], theta_cfg),
            list(range(T)), cfg.n_jobs)

        if update_omega:
            s_set = [sample_covariance(th) for th in thetas]
            candidate, admm_report = _solve_omega_step(s_set, hyper, admm_cfg, state, callback)
            report.admm_warnings += not admm_report.converged
            report.admm_iterations.append(admm_report.iterations)
            state = admm_report.state
            # ADMM stops at a tolerance; never accept a worse point than the current one
            if _omega_step_value(candidate, s_set, hyper) <= _omega_step_value(omegas, s_set, hyper):
                omegas = [c for c in candidate]
        else:
            report.admm_iterations.append(0)

        obj = hmtl_objective(data, thetas, omegas, hyper)
        if not np.isfinite(obj):
            raise SolverError(f"objective became non-finite at outer iteration {it}",
                              (thetas, omegas))
        report.objective_trace.append(obj)
        report.outer_iterations = it
        if abs(obj - prev) / max(1.0, abs(prev)) < cfg.outer_tol:
            report.converged = True
            break
        prev = obj

    report.elapsed = time.perf_counter() - start
    if report.admm_warnings:
        warnings.warn(
            f"ADMM hit max_iters in {report.admm_warnings} of {len(report.admm_iterations)} "
            "precision updates", ADMMConvergenceWarning, stacklevel=2)
    return HmtlModel(thetas, omegas, hyper, report)


def _merge_independent(parts, hyper):
    n = max(len(p.report.objective_trace) for p in parts)
    trace = np.zeros(n)
    for p in parts:
        tr = p.report.objective_trace
        trace += np.concatenate([tr, np.full(n - len(tr), tr[-1])])
    admm = np.zeros(n - 1, dtype=int)
    for p in parts:
        a = p.report.admm_iterations
        admm[:len(a)] += a
    report = FitReport(
        objective_trace=[float(v) for v in trace],
        outer_iterations=max(p.report.outer_iterations for p in parts),
        admm_iterations=[int(v) for v in admm],
        converged=all(p.report.converged for p in parts),
        admm_warnings=sum(p.report.admm_warnings for p in parts),
        elapsed=sum(p.report.elapsed for p in parts),
    )
    return HmtlModel([p.thetas[0] for p in parts], [p.omegas[0] for p in parts], hyper, report)


def fit_mssl(super_task, hyper=None, cfg=None, theta_cfg=None, admm_cfg=None,
             theta_init=None, callback=None):
    """Single super-task fit: the decoupled case with ``lambda2 = 0``."""
    hyper = replace(hyper or Hyperparams(), lambda2=0.0)
    return fit_hmtl(HierarchicalDataset((tuple(super_task),)), hyper, cfg, theta_cfg,
                    admm_cfg, theta_init, callback)


def _matrix_to_list(a):
    return [float(v) for v in np.asarray(a, dtype=float).ravel(order="C")]


def save_model(model, path):
    """Write a fitted model as JSON; matrices are stored row-major.

    Floats are written with ``repr`` precision, so a save/load round trip
    is exact.
    """
    T = model.T
    d, m = model.thetas[0].shape
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "T": T, "m": m, "d": d,
        "hyperparams": {"lambda0": model.hyper.lambda0, "lambda1": model.hyper.lambda1,
                        "lambda2": model.hyper.lambda2},
        "thetas": [_matrix_to_list(th) for th in model.thetas],
        "omegas": [_matrix_to_list(om) for om in model.omegas],
        "report": model.report.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != MODEL_FORMAT:
        raise InvalidInputError(f"{path} is not an HMTL model file")
    T, m, d = payload["T"], payload["m"], payload["d"]
    thetas = [np.array(v, dtype=float).reshape(d, m) for v in payload["thetas"]]
    omegas = [np.array(v, dtype=float).reshape(m, m) for v in payload["omegas"]]
    if len(thetas) != T or len(omegas) != T:
        raise InvalidInputError(f"{path}: expected {T} weight and precision matrices")
    return HmtlModel(thetas, omegas, Hyperparams(**payload["hyperparams"]),
                     FitReport.from_dict(payload["report"]))
