"""Weight-matrix update: squared loss plus trace coupling, minimized by L-BFGS."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, SolverError


@dataclass(frozen=True)
class ThetaSolveConfig:
    grad_tol: float = 1e-6
    max_iters: int = 200
    history_size: int = 10
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 60

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise InvalidInputError("grad_tol must be positive")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if self.history_size < 1:
            raise InvalidInputError("history_size must be >= 1")


class _Tasks:
    """Sub-tasks of one super-task, stacked into 3-D arrays when all n agree."""

    def __init__(self, tasks):
        self.tasks = list(tasks)
        if not self.tasks:
            raise InvalidInputError("need at least one sub-task")
        self.m = len(self.tasks)
        self.d = self.tasks[0].X.shape[1]
        if any(sub.X.shape[1] != self.d for sub in self.tasks):
            raise InvalidInputError("all sub-tasks must share the same dimension")
        ns = {sub.X.shape[0] for sub in self.tasks}
        if len(ns) == 1:
            self.Xs = np.stack([sub.X for sub in self.tasks])
            self.XsT = np.ascontiguousarray(np.swapaxes(self.Xs, 1, 2))
            self.ys = np.stack([sub.y for sub in self.tasks])
        else:
            self.Xs = None
        self._grams = None

    def grams(self):
        """Per-sub-task ``2 XₖᵀXₖ`` as a (m, d, d) array, computed once."""
        if self._grams is None:
            if self.Xs is not None:
                self._grams = 2.0 * np.matmul(self.XsT, self.Xs)
            else:
                self._grams = np.stack([2.0 * sub.X.T @ sub.X for sub in self.tasks])
        return self._grams

    def residual_grad(self, theta):
        """Squared loss and its gradient, both w.r.t. the (d, m) weight matrix."""
        if self.Xs is not None:
            r = np.matmul(self.Xs, theta.T[:, :, None])[:, :, 0] - self.ys
            grad = np.matmul(self.XsT, r[:, :, None])[:, :, 0].T
            return float(np.vdot(r, r)), 2.0 * grad
        loss = 0.0
        grad = np.empty_like(theta)
        for k, sub in enumerate(self.tasks):
            r = sub.X @ theta[:, k] - sub.y
            loss += float(r @ r)
            grad[:, k] = 2.0 * (sub.X.T @ r)
        return loss, grad


def theta_value_grad(tasks, theta, omega, lambda0):
    """Objective of the weight update for one super-task and its gradient.

    ``value = Σ_k ||X_k θ_k − y_k||² + lambda0 · tr(S Ω)`` with ``S = ΘᵀΘ / d``.
    """
    stacked = tasks if isinstance(tasks, _Tasks) else _Tasks(tasks)
    theta = np.asarray(theta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if theta.shape != (stacked.d, stacked.m):
        raise InvalidInputError(f"theta has shape {theta.shape}, expected {(stacked.d, stacked.m)}")
    if omega.shape != (stacked.m, stacked.m):
        raise InvalidInputError(f"omega has shape {omega.shape}, expected {(stacked.m, stacked.m)}")
    loss, grad = stacked.residual_grad(theta)
    if lambda0 == 0:
        return loss, grad
    theta_omega = theta @ omega
    coef = lambda0 / stacked.d
    return loss + coef * float(np.sum(theta_omega * theta)), grad + 2.0 * coef * theta_omega


def lbfgs(fun, x0, cfg, precondition=None):
    """Minimize ``fun`` (returning value and gradient) from ``x0``.

    Two-loop recursion with Armijo backtracking. Stops once the gradient
    ∞-norm falls below ``cfg.grad_tol``. ``precondition`` applies the
    initial inverse-Hessian approximation; without it the usual scalar
    ``sᵀy / yᵀy`` scaling is used. Returns ``(x, value, n_iter)``.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not np.isfinite(f):
        raise SolverError("objective is not finite at the starting point", x)
    # curvature pairs (s, y, 1 / yᵀs), oldest first
    hist = deque(maxlen=cfg.history_size)
    it = 0
    while it < cfg.max_iters and np.max(np.abs(g)) > cfg.grad_tol:
        q = g.copy()
        alphas = []
        for s, y, r in reversed(hist):
            a = r * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if precondition is not None:
            q = precondition(q)
        elif hist:
            s, y, r = hist[-1]
            q *= 1.0 / (r * np.dot(y, y))
        else:
            q *= 1.0 / max(np.linalg.norm(g), 1e-12)
        for (s, y, r), a in zip(hist, reversed(alphas)):
            b = r * np.dot(y, q)
            q += (a - b) * s
        direction = -q
        slope = g @ direction
        if slope >= 0:
            # lost descent (stale curvature pairs); restart from steepest descent
            hist.clear()
            direction = -g / max(np.linalg.norm(g), 1e-12)
            slope = g @ direction

        step = 1.0
        for _ in range(cfg.max_backtracks):
            x_new = x + step * direction
            f_new, g_new = fun(x_new)
            if not np.isfinite(f_new):
                raise SolverError("objective became non-finite during line search", x)
            if f_new <= f + cfg.armijo_c * step * slope:
                break
            step *= cfg.shrink
        else:
            # no sufficient decrease is representable in floating point
            break

        s, y = x_new - x, g_new - g
        sy = np.dot(s, y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            hist.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        it += 1
    return x, f, it


def solve_theta_step(tasks, omega, lambda0, init, cfg=None):
    """Minimize the weight-update objective for one super-task, warm-started at ``init``.

    Returns the (d, m) weight matrix. The returned objective never exceeds
    the one at ``init``.
    """
    cfg = cfg or ThetaSolveConfig()
    stacked = tasks if isinstance(tasks, _Tasks) else _Tasks(tasks)
    init = np.asarray(init, dtype=float)
    omega = np.asarray(omega, dtype=float)
    shape = (stacked.d, stacked.m)
    if init.shape != shape:
        raise InvalidInputError(f"init has shape {init.shape}, expected {shape}")

    def fun(flat):
        f, g = theta_value_grad(stacked, flat.reshape(shape), omega, lambda0)
        return f, g.ravel()

    x, _, _ = lbfgs(fun, init.ravel(), cfg, _block_preconditioner(stacked, omega, lambda0))
    return x.reshape(shape)


def _block_preconditioner(stacked, omega, lambda0):
    """Inverse of the per-column Hessian blocks ``2XₖᵀXₖ + (2 lambda0 / d) Ω_kk I``.

    Off-diagonal couplings through Ω are left to the curvature pairs.
    """
    d, m = stacked.d, stacked.m
    grams = stacked.grams().copy()
    ridge = 2.0 * lambda0 / d * np.diag(omega)
    floor = 1e-10 * max(float(np.mean(np.trace(grams, axis1=1, axis2=2))) / d, 1.0)
    idx = np.arange(d)
    grams[:, idx, idx] += np.maximum(ridge, floor)[:, None]
    inv = np.linalg.inv(grams)

    def apply(q):
        return np.matmul(inv, q.reshape(d, m).T[:, :, None])[:, :, 0].T.ravel()

    return apply
