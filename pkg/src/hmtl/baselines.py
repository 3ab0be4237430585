"""Comparison methods: multi-model average, best single model, OLS and
Laplacian-smoothed least squares (S²M²R)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .core import InvalidInputError


@dataclass(frozen=True)
class GridSpec:
    """Lattice layout of the sub-tasks (locations).

    Without ``cells`` the grid is full and location ``i`` sits at
    ``divmod(i, cols)``. With ``cells`` (one ``(row, col)`` per location) the
    grid may have holes, e.g. ocean cells in a land-only dataset.
    """

    rows: int
    cols: int
    cells: tuple | None = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidInputError("grid needs at least one row and one column")
        if self.cells is not None:
            cells = tuple((int(r), int(c)) for r, c in self.cells)
            if len(set(cells)) != len(cells):
                raise InvalidInputError("grid cells must be distinct")
            if any(not (0 <= r < self.rows and 0 <= c < self.cols) for r, c in cells):
                raise InvalidInputError("grid cell outside the declared rows/cols")
            object.__setattr__(self, "cells", cells)

    @property
    def m(self):
        return self.rows * self.cols if self.cells is None else len(self.cells)

    def position(self, index):
        if self.cells is None:
            return divmod(index, self.cols)
        return self.cells[index]

    def positions(self):
        return [self.position(i) for i in range(self.m)]


def fit_ols(tasks):
    """Independent minimum-norm least squares per sub-task; returns (d, m)."""
    return np.column_stack([np.linalg.lstsq(sub.X, sub.y, rcond=None)[0] for sub in tasks])


def predict_mma(X):
    """Equal-weight average over the model columns."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise InvalidInputError("X must be a 2-D array with at least one column")
    return X.mean(axis=1)


def select_best_esm(task):
    """Column with the lowest training MSE against ``y``; ties go to the lowest index."""
    mse = np.mean((task.X - task.y[:, None]) ** 2, axis=0)
    return int(np.argmin(mse))


def build_grid_laplacian(grid):
    """Graph Laplacian ``D - A`` of the 4-neighbour lattice (no wraparound)."""
    positions = grid.positions()
    index = {pos: i for i, pos in enumerate(positions)}
    L = np.zeros((grid.m, grid.m))
    for i, (r, c) in enumerate(positions):
        for nb in ((r + 1, c), (r, c + 1)):
            j = index.get(nb)
            if j is not None:
                L[i, j] = L[j, i] = -1.0
    np.fill_diagonal(L, -L.sum(axis=1))
    return L


def s2m2r_objective(tasks, theta, L, lam):
    loss = sum(float(np.sum((sub.X @ theta[:, k] - sub.y) ** 2)) for k, sub in enumerate(tasks))
    return loss + lam * float(np.trace(theta @ L @ theta.T))


def fit_s2m2r(tasks, L, lam):
    """Least squares with Laplacian smoothing of the weights across locations.

    Minimizes ``Σ_k ||X_k θ_k - y_k||² + lam · tr(Θ L Θᵀ)`` by solving the
    sparse normal equations over all ``d · m`` unknowns at once.
    """
    tasks = list(tasks)
    L = np.asarray(L, dtype=float)
    m, d = len(tasks), tasks[0].X.shape[1]
    if L.shape != (m, m):
        raise InvalidInputError(f"Laplacian has shape {L.shape}, expected {(m, m)}")
    if lam < 0:
        raise InvalidInputError("lam must be nonnegative")
    if lam == 0:
        return fit_ols(tasks)
    grams = sparse.block_diag([sub.X.T @ sub.X for sub in tasks], format="csc")
    system = (grams + lam * sparse.kron(sparse.csc_matrix(L), sparse.identity(d))).tocsc()
    rhs = np.concatenate([sub.X.T @ sub.y for sub in tasks])
    try:
        solution = splinalg.splu(system).solve(rhs)
        if not np.all(np.isfinite(solution)):
            raise RuntimeError("singular factorization")
    except RuntimeError:
        # singular system: minimal-norm least squares
        solution = splinalg.lsqr(system, rhs, atol=1e-14, btol=1e-14, iter_lim=100 * d * m)[0]
    return solution.reshape(m, d).T
