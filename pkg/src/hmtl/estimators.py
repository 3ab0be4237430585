"""scikit-learn style estimators over hierarchical (super-task / sub-task) data.

``X`` is a nested sequence ``X[t][k]`` of (n, d) arrays and ``y`` the matching
``y[t][k]`` of (n,) arrays; ``predict`` returns predictions nested the same way.
``score`` is the negated mean per-sub-task RMSE, so larger is better.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .baselines import GridSpec, build_grid_laplacian, fit_ols, fit_s2m2r, predict_mma, select_best_esm
from .core import HierarchicalDataset, Hyperparams, InvalidInputError, SubTaskData, rmse
from .driver import DriverConfig, _merge_independent, fit_hmtl, fit_mssl, init_weights
from .omega import AdmmConfig
from .theta import ThetaSolveConfig


def check_hierarchical_X(X, d=None):
    """Validate nested inputs and return them as a list of lists of float arrays."""
    if isinstance(X, HierarchicalDataset):
        X = [[sub.X for sub in st] for st in X]
    out = []
    for t, st in enumerate(X):
        row = []
        for k, x in enumerate(st):
            x = np.asarray(x, dtype=float)
            if x.ndim != 2:
                raise InvalidInputError(f"X[{t}][{k}] must be 2-D, got shape {x.shape}")
            if not np.all(np.isfinite(x)):
                raise InvalidInputError(f"X[{t}][{k}] contains non-finite values")
            if d is not None and x.shape[1] != d:
                raise InvalidInputError(f"X[{t}][{k}] has {x.shape[1]} columns, expected {d}")
            row.append(x)
        out.append(row)
    if not out or not out[0]:
        raise InvalidInputError("X needs at least one super-task with one sub-task")
    m = len(out[0])
    if any(len(row) != m for row in out):
        raise InvalidInputError("every super-task must have the same number of sub-tasks")
    return out


def check_hierarchical_Xy(X, y):
    """Validate a nested (X, y) pair and build a HierarchicalDataset."""
    if isinstance(X, HierarchicalDataset) and y is None:
        return X
    X = check_hierarchical_X(X)
    if len(y) != len(X):
        raise InvalidInputError(f"y has {len(y)} super-tasks, X has {len(X)}")
    tasks = []
    for t, (xs, ys) in enumerate(zip(X, y)):
        if len(ys) != len(xs):
            raise InvalidInputError(f"y[{t}] has {len(ys)} sub-tasks, X[{t}] has {len(xs)}")
        tasks.append(tuple(SubTaskData(x, np.asarray(v, dtype=float).ravel()) for x, v in zip(xs, ys)))
    return HierarchicalDataset(tuple(tasks))


def hierarchical_rmse(pred, y):
    """(T, m) array of per-sub-task RMSE."""
    return np.array([[rmse(p, o) for p, o in zip(ps, os)] for ps, os in zip(pred, y)])


class _HierarchicalRegressor(RegressorMixin, BaseEstimator):
    """Shared predict/score for estimators that store weights in ``coef_`` (T, d, m)."""

    def _check_predict_X(self, X):
        check_is_fitted(self, "coef_")
        X = check_hierarchical_X(X, d=self.coef_.shape[1])
        if len(X) != self.coef_.shape[0] or len(X[0]) != self.coef_.shape[2]:
            raise InvalidInputError(
                f"fitted on {self.coef_.shape[0]} x {self.coef_.shape[2]} sub-tasks, "
                f"got {len(X)} x {len(X[0])}")
        return X

    def predict(self, X):
        X = self._check_predict_X(X)
        return [[x @ self.coef_[t, :, k] for k, x in enumerate(st)] for t, st in enumerate(X)]

    def score(self, X, y, sample_weight=None):
        return -float(np.mean(hierarchical_rmse(self.predict(X), y)))


class HMTLRegressor(_HierarchicalRegressor):
    """Joint multitask regression across super-tasks with group-sparse precisions.

    Parameters
    ----------
    lambda0, lambda1, lambda2 : float
        Trace-coupling weight, off-diagonal ℓ1 weight and cross-super-task
        group weight.
    outer_tol, max_outer_iters : float, int
        Stopping rule of the alternating loop.
    grad_tol, max_theta_iters : float, int
        L-BFGS settings for the weight update.
    rho, admm_abs_tol, admm_rel_tol, admm_max_iters : float, float, float, int
        ADMM settings for the precision update.
    random_state : int
        Seed of the uniform weight initialization.
    n_jobs : int
        Threads used for the per-super-task weight updates.

    Attributes
    ----------
    coef_ : ndarray of shape (T, d, m)
    precision_ : ndarray of shape (T, m, m)
    report_ : FitReport
    """

    def __init__(self, lambda0=0.1, lambda1=0.0002, lambda2=0.01, outer_tol=1e-4,
                 max_outer_iters=50, grad_tol=1e-6, max_theta_iters=200, rho=1.0,
                 admm_abs_tol=1e-5, admm_rel_tol=1e-4, admm_max_iters=500,
                 random_state=0, n_jobs=1):
        self.lambda0 = lambda0
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.outer_tol = outer_tol
        self.max_outer_iters = max_outer_iters
        self.grad_tol = grad_tol
        self.max_theta_iters = max_theta_iters
        self.rho = rho
        self.admm_abs_tol = admm_abs_tol
        self.admm_rel_tol = admm_rel_tol
        self.admm_max_iters = admm_max_iters
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _configs(self):
        return (
            DriverConfig(self.outer_tol, self.max_outer_iters, self.random_state, self.n_jobs),
            ThetaSolveConfig(grad_tol=self.grad_tol, max_iters=self.max_theta_iters),
            AdmmConfig(self.rho, self.admm_abs_tol, self.admm_rel_tol, self.admm_max_iters),
        )

    def _hyper(self):
        return Hyperparams(self.lambda0, self.lambda1, self.lambda2)

    def fit(self, X, y=None):
        data = check_hierarchical_Xy(X, y)
        model = fit_hmtl(data, self._hyper(), *self._configs())
        self._store(model)
        return self

    def _store(self, model):
        self.model_ = model
        self.coef_ = np.stack(model.thetas)
        self.precision_ = np.stack(model.omegas)
        self.report_ = model.report


class MSSLRegressor(HMTLRegressor):
    """One independent multitask fit per super-task (no cross-super-task coupling).

    Starting weights come from the same seeded stream as HMTLRegressor, so
    the result equals HMTLRegressor with ``lambda2=0``.
    """

    def __init__(self, lambda0=0.1, lambda1=0.1, outer_tol=1e-4, max_outer_iters=50,
                 grad_tol=1e-6, max_theta_iters=200, rho=1.0, admm_abs_tol=1e-5,
                 admm_rel_tol=1e-4, admm_max_iters=500, random_state=0, n_jobs=1):
        self.lambda0 = lambda0
        self.lambda1 = lambda1
        self.outer_tol = outer_tol
        self.max_outer_iters = max_outer_iters
        self.grad_tol = grad_tol
        self.max_theta_iters = max_theta_iters
        self.rho = rho
        self.admm_abs_tol = admm_abs_tol
        self.admm_rel_tol = admm_rel_tol
        self.admm_max_iters = admm_max_iters
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _hyper(self):
        return Hyperparams(self.lambda0, self.lambda1, 0.0)

    def fit(self, X, y=None):
        data = check_hierarchical_Xy(X, y)
        inits = init_weights(data.T, data.d, data.m, self.random_state)
        parts = [fit_mssl(data[t], self._hyper(), *self._configs(), theta_init=[inits[t]])
                 for t in range(data.T)]
        self._store(_merge_independent(parts, self._hyper()))
        return self


class OLSRegressor(_HierarchicalRegressor):
    """Independent least squares for every sub-task."""

    def fit(self, X, y=None):
        data = check_hierarchical_Xy(X, y)
        self.coef_ = np.stack([fit_ols(st) for st in data])
        return self


class MMARegressor(_HierarchicalRegressor):
    """Multi-model average: weight ``1/d`` on every model, nothing learned."""

    def fit(self, X, y=None):
        data = check_hierarchical_Xy(X, y)
        self.coef_ = np.full((data.T, data.d, data.m), 1.0 / data.d)
        return self

    def predict(self, X):
        return [[predict_mma(x) for x in st] for st in self._check_predict_X(X)]


class BestESMRegressor(_HierarchicalRegressor):
    """Per sub-task, the single model column with the lowest training MSE."""

    def fit(self, X, y=None):
        data = check_hierarchical_Xy(X, y)
        self.best_index_ = np.array([[select_best_esm(sub) for sub in st] for st in data])
        coef = np.zeros((data.T, data.d, data.m))
        for t in range(data.T):
            coef[t, self.best_index_[t], np.arange(data.m)] = 1.0
        self.coef_ = coef
        return self


class S2M2RRegressor(_HierarchicalRegressor):
    """Least squares with graph-Laplacian smoothing of the weights over a lattice.

    Parameters
    ----------
    lambda_ : float
        Smoothing strength.
    grid : GridSpec or (rows, cols), optional
        Lattice of the sub-tasks. Defaults to a single row.
    """

    def __init__(self, lambda_=1000.0, grid=None):
        self.lambda_ = lambda_
        self.grid = grid

    def fit(self, X, y=None):
        data = check_hierarchical_Xy(X, y)
        grid = self.grid
        if grid is None:
            grid = GridSpec(1, data.m)
        elif not isinstance(grid, GridSpec):
            grid = GridSpec(*grid)
        if grid.m != data.m:
            raise InvalidInputError(f"grid has {grid.m} cells but data has {data.m} sub-tasks")
        L = build_grid_laplacian(grid)
        self.coef_ = np.stack([fit_s2m2r(st, L, self.lambda_) for st in data])
        return self
