"""Shared data containers, the HMTL cost function, prediction and metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidInputError(ValueError):
    """Raised when arrays have wrong shapes or non-finite entries."""


class DomainError(ValueError):
    """Raised when a quantity is evaluated outside its domain (e.g. log|Ω| of a non-PD matrix)."""


class SolverError(RuntimeError):
    """Raised when an iterative solver cannot make progress.

    The last valid iterate is kept on ``last_iterate`` for diagnostics.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class SubTaskData:
    """Regression data of one sub-task: ``X`` is (n, d), ``y`` is (n,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2:
            raise InvalidInputError(f"X must be 2-D, got shape {X.shape}")
        if y.ndim != 1:
            raise InvalidInputError(f"y must be 1-D, got shape {y.shape}")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidInputError(f"X must have at least one row and column, got {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise InvalidInputError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidInputError("X and y must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class HierarchicalDataset:
    """T super-tasks, each holding the same number m of sub-tasks of dimension d."""

    super_tasks: tuple

    def __post_init__(self):
        tasks = tuple(
            tuple(s if isinstance(s, SubTaskData) else SubTaskData(*s) for s in st)
            for st in self.super_tasks
        )
        if len(tasks) < 1:
            raise InvalidInputError("dataset needs at least one super-task")
        m = len(tasks[0])
        if m < 1:
            raise InvalidInputError("super-tasks need at least one sub-task")
        d = tasks[0][0].d
        for t, st in enumerate(tasks):
            if len(st) != m:
                raise InvalidInputError(
                    f"super-task {t} has {len(st)} sub-tasks, expected {m}")
            for k, sub in enumerate(st):
                if sub.d != d:
                    raise InvalidInputError(
                        f"sub-task ({t}, {k}) has dimension {sub.d}, expected {d}")
        object.__setattr__(self, "super_tasks", tasks)

    @property
    def T(self) -> int:
        return len(self.super_tasks)

    @property
    def m(self) -> int:
        return len(self.super_tasks[0])

    @property
    def d(self) -> int:
        return self.super_tasks[0][0].d

    def __getitem__(self, t):
        return self.super_tasks[t]

    def __iter__(self):
        return iter(self.super_tasks)

    def __len__(self):
        return len(self.super_tasks)


@dataclass(frozen=True)
class Hyperparams:
    lambda0: float = 0.1
    lambda1: float = 0.0002
    lambda2: float = 0.01

    def __post_init__(self):
        for name in ("lambda0", "lambda1", "lambda2"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0:
                raise InvalidInputError(f"{name} must be finite and nonnegative, got {value}")
            object.__setattr__(self, name, value)


@dataclass
class FitReport:
    objective_trace: list = field(default_factory=list)
    outer_iterations: int = 0
    admm_iterations: list = field(default_factory=list)
    converged: bool = False
    admm_warnings: int = 0
    elapsed: float = 0.0

    def to_dict(self):
        return {
            "objective_trace": [float(v) for v in self.objective_trace],
            "outer_iterations": int(self.outer_iterations),
            "admm_iterations": [int(v) for v in self.admm_iterations],
            "converged": bool(self.converged),
            "admm_warnings": int(self.admm_warnings),
            "elapsed": float(self.elapsed),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class HmtlModel:
    """Fitted weights ``thetas[t]`` (d, m) and precisions ``omegas[t]`` (m, m)."""

    thetas: list
    omegas: list
    hyper: Hyperparams
    report: FitReport

    @property
    def T(self):
        return len(self.thetas)

    def predict(self, t, k, X):
        return predict(X, self.thetas[t][:, k])


def _check_finite(a, name):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def sample_covariance(theta):
    """Uncentered covariance ``ΘᵀΘ / d`` of the sub-task weight vectors.

    Parameters
    ----------
    theta : ndarray of shape (d, m)

    Returns
    -------
    ndarray of shape (m, m)
    """
    theta = _check_finite(theta, "theta")
    if theta.ndim != 2 or theta.shape[0] < 1:
        raise InvalidInputError(f"theta must be a (d, m) matrix with d >= 1, got {theta.shape}")
    S = theta.T @ theta / theta.shape[0]
    return (S + S.T) / 2


def logdet_pd(omega):
    """log|Ω| through a Cholesky factor; raises DomainError if Ω is not PD."""
    try:
        L = np.linalg.cholesky(omega)
    except np.linalg.LinAlgError as exc:
        raise DomainError("precision matrix is not positive definite") from exc
    return 2.0 * np.sum(np.log(np.diag(L)))


def group_penalty(omegas, lambda1, lambda2):
    """ℓ1 plus cross-super-task ℓ2 penalty on the off-diagonal precision entries."""
    stack = np.asarray(omegas, dtype=float)
    off = ~np.eye(stack.shape[-1], dtype=bool)
    l1 = np.abs(stack[:, off]).sum()
    l2 = np.sqrt((stack[:, off] ** 2).sum(axis=0)).sum()
    return lambda1 * l1 + lambda2 * l2


def squared_loss(tasks, theta):
    return sum(float(np.sum((sub.X @ theta[:, k] - sub.y) ** 2)) for k, sub in enumerate(tasks))


def hmtl_objective(data, thetas, omegas, hyper):
    """Value of the full HMTL cost.

    Per super-task: squared loss of every sub-task, minus log|Ω|, plus
    ``lambda0 * tr(S Ω)`` with ``S = ΘᵀΘ / d``. The group-lasso penalty on
    off-diagonal entries is added once over all super-tasks.
    """
    if len(thetas) != data.T or len(omegas) != data.T:
        raise InvalidInputError("number of weight/precision matrices must equal T")
    total = 0.0
    for t in range(data.T):
        theta = np.asarray(thetas[t], dtype=float)
        omega = np.asarray(omegas[t], dtype=float)
        if theta.shape != (data.d, data.m):
            raise InvalidInputError(f"theta[{t}] has shape {theta.shape}, expected {(data.d, data.m)}")
        if omega.shape != (data.m, data.m):
            raise InvalidInputError(f"omega[{t}] has shape {omega.shape}, expected {(data.m, data.m)}")
        S = sample_covariance(theta)
        total += (squared_loss(data[t], theta) - logdet_pd(omega)
                  + hyper.lambda0 * float(np.sum(S * omega)))
    return total + group_penalty(omegas, hyper.lambda1, hyper.lambda2)


def predict(X, theta):
    X = np.asarray(X, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if X.ndim != 2 or theta.ndim != 1 or X.shape[1] != theta.shape[0]:
        raise InvalidInputError(
            f"cannot apply weights of shape {theta.shape} to inputs of shape {X.shape}")
    return X @ theta


def rmse(pred, obs):
    pred = np.asarray(pred, dtype=float).ravel()
    obs = np.asarray(obs, dtype=float).ravel()
    if pred.shape != obs.shape:
        raise InvalidInputError(f"length mismatch: {pred.shape[0]} vs {obs.shape[0]}")
    if pred.size == 0:
        raise InvalidInputError("rmse of an empty vector is undefined")
    return float(np.sqrt(np.mean((pred - obs) ** 2)))


def symmetrize(a):
    """``(A + Aᵀ) / 2`` over the last two axes."""
    a = np.asarray(a, dtype=float)
    return (a + np.swapaxes(a, -1, -2)) / 2
