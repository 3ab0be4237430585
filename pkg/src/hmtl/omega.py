"""Joint estimation of group-sparse precision matrices by ADMM.

Solves, for fixed weight covariances ``S[t]``::

    min_Ω  Σ_t ( -log|Ω_t| + lambda0 tr(S_t Ω_t) )
           + lambda1 Σ_t Σ_{k≠j} |Ω_t[k, j]| + lambda2 Σ_{k≠j} ||Ω_·[k, j]||_2

with the splitting Ω = Z. The Ω-update is a closed-form eigenvalue map and
the Z-update is the proximal operator of the penalty.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import InvalidInputError, SolverError, symmetrize


_TINY = 1e-300


class ADMMConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AdmmConfig:
    """ADMM settings.

    ``rho`` is the starting penalty on the rescaled problem. With
    ``adaptive`` the penalty is doubled or halved whenever the primal and
    dual residuals, each relative to the size it is tested against, differ
    by more than a factor of 10. This happens during the first
    ``adapt_until`` iterations only; afterwards the penalty stays fixed.
    """

    rho: float = 1.0
    abs_tol: float = 1e-5
    rel_tol: float = 1e-4
    max_iters: int = 500
    adaptive: bool = True
    adapt_until: int = 500

    def __post_init__(self):
        if not self.rho > 0:
            raise InvalidInputError("rho must be positive")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise InvalidInputError("tolerances must be positive")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if self.adapt_until < 0:
            raise InvalidInputError("adapt_until must be >= 0")


@dataclass
class AdmmState:
    """Primal iterates, consensus copies and scaled duals, one matrix per super-task."""

    omegas: np.ndarray
    zs: np.ndarray
    us: np.ndarray
    rho: np.ndarray | None = None  # penalty reached per super-task, in unscaled units

    @classmethod
    def identity(cls, T, m):
        eye = np.broadcast_to(np.eye(m), (T, m, m))
        return cls(eye.copy(), eye.copy(), np.zeros((T, m, m)))

    def copy(self):
        rho = None if self.rho is None else self.rho.copy()
        return AdmmState(self.omegas.copy(), self.zs.copy(), self.us.copy(), rho)


@dataclass
class AdmmReport:
    iterations: int = 0
    converged: bool = False
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    returned: str = "z"
    min_eigenvalues: list = field(default_factory=list)
    state: AdmmState | None = None


def _prox_logdet_stack(a, s, lambda0, rho):
    evals, evecs = np.linalg.eigh(lambda0 * s - rho * a)
    root = np.sqrt(evals ** 2 + 4.0 * rho)
    # both branches are the same root; each avoids cancellation on its side
    w = np.where(evals > 0, 2.0 / (evals + root), (root - evals) / (2.0 * rho))
    if not np.all(w > 0):
        raise SolverError("log-det proximal step produced a non-positive eigenvalue", a)
    out = (evecs * w[..., None, :]) @ np.swapaxes(evecs, -1, -2)
    return (out + np.swapaxes(out, -1, -2)) / 2


def prox_logdet(a, s, lambda0, rho):
    """argmin_Ω  -log|Ω| + lambda0 tr(S Ω) + (rho/2) ||Ω - A||_F².

    With ``lambda0 S - rho A = V diag(d) Vᵀ`` the minimizer is
    ``V diag((-d + sqrt(d² + 4 rho)) / (2 rho)) Vᵀ``, always positive definite.
    """
    a = np.asarray(a, dtype=float)
    s = np.asarray(s, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(s))):
        raise InvalidInputError("prox_logdet received non-finite input")
    return _prox_logdet_stack(symmetrize(a), symmetrize(s), lambda0, rho)


def group_soft_threshold(stack, t1, t2):
    """Proximal map of the group-lasso penalty, applied to a (T, m, m) stack.

    Each off-diagonal entry is soft-thresholded by ``t1``; then the vector of
    that entry across super-tasks is shrunk by ``max(1 - t2/||·||, 0)``.
    Diagonals pass through unchanged.
    """
    stack = np.asarray(stack, dtype=float)
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
        raise InvalidInputError(f"expected a (T, m, m) stack, got {stack.shape}")
    if t1 < 0 or t2 < 0:
        raise InvalidInputError("thresholds must be nonnegative")
    out = np.sign(stack) * np.maximum(np.abs(stack) - t1, 0.0)
    if t2 > 0:
        norms = np.sqrt(np.sum(out ** 2, axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(norms > t2, 1.0 - t2 / norms, 0.0)
        out = out * scale
    diag = np.arange(stack.shape[1])
    out[:, diag, diag] = stack[:, diag, diag]
    return out


def _is_pd(a):
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True


def _admm_core(s_stack, lambdas, cfg, state, callback, unscale, rho):
    T, m, _ = s_stack.shape
    lambda0, lambda1, lambda2 = lambdas
    omegas, zs, us = state.omegas.copy(), state.zs.copy(), state.us.copy()
    scale = np.sqrt(T * m * m)
    report = AdmmReport()
    for it in range(1, cfg.max_iters + 1):
        omegas = _prox_logdet_stack(zs - us, s_stack, lambda0, rho)
        if callback is not None:
            callback(omegas / unscale)
        z_prev = zs
        zs = group_soft_threshold(omegas + us, lambda1 / rho, lambda2 / rho)
        us = us + omegas - zs
        r = np.linalg.norm(omegas - zs)
        s = rho * np.linalg.norm(zs - z_prev)
        eps_pri = scale * cfg.abs_tol + cfg.rel_tol * max(np.linalg.norm(omegas), np.linalg.norm(zs))
        eps_dual = scale * cfg.abs_tol + cfg.rel_tol * rho * np.linalg.norm(us)
        report.iterations = it
        report.primal_residual, report.dual_residual = float(r), float(s)
        if r <= eps_pri and s <= eps_dual:
            report.converged = True
            break
        if cfg.adaptive and it <= cfg.adapt_until:
            # balance the residuals relative to the iterate and dual sizes, as in the
            # stopping test; the scaled dual moves inversely with rho
            rel_r = r / max(np.linalg.norm(omegas), np.linalg.norm(zs), _TINY)
            rel_s = s / max(rho * np.linalg.norm(us), _TINY)
            if rel_r > 10.0 * rel_s:
                rho, us = rho * 2.0, us / 2.0
            elif rel_s > 10.0 * rel_r:
                rho, us = rho / 2.0, us * 2.0
    return AdmmState(omegas, zs, us), report, rho


def _scale(s_stack, lambda0):
    diag = lambda0 * np.diagonal(s_stack, axis1=1, axis2=2).ravel()
    top = diag.max() if diag.size else 0.0
    if np.isfinite(top) and top > 0:
        return float(np.exp(np.mean(np.log(np.maximum(diag, 1e-8 * top)))))
    return 1.0


def _admm(s_stack, hyper, cfg, state, callback=None):
    """ADMM on the rescaled problem in ``c Ω``.

    At the optimum the diagonal of ``Ω⁻¹`` equals ``lambda0 diag(S)``
    because the diagonal is not penalized. ``c`` is the geometric mean of
    that diagonal (floored relative to its largest entry), so ``c Ω`` has a
    spectrum around 1 where the starting ``rho`` is well matched, even when
    ``S`` is singular. The substitution divides every lambda by ``c`` and
    leaves the minimizer unchanged.
    """
    c = _scale(s_stack, hyper.lambda0)
    lambdas = (hyper.lambda0 / c, hyper.lambda1 / c, hyper.lambda2 / c)
    # a carried-over penalty is stored in unscaled units: rho ||Ω - Z||² = (rho / c²) ||cΩ - cZ||²
    rho = cfg.rho if state.rho is None else float(state.rho[0]) / c ** 2
    scaled = AdmmState(state.omegas * c, state.zs * c, state.us * c)
    out, report, rho = _admm_core(s_stack, lambdas, cfg, scaled, callback, c, rho)
    T = s_stack.shape[0]
    return AdmmState(out.omegas / c, out.zs / c, out.us / c, np.full(T, rho * c ** 2)), report


def _finalize(state, report):
    """Return Z (exact zeros) when PD, else Ω restricted to Z's support."""
    result = np.empty_like(state.zs)
    kinds = []
    for t in range(state.zs.shape[0]):
        z = symmetrize(state.zs[t])
        if _is_pd(z):
            result[t] = z
            kinds.append("z")
            continue
        masked = np.where(z != 0, symmetrize(state.omegas[t]), 0.0)
        if not _is_pd(masked):
            raise SolverError(f"precision matrix {t} is not positive definite", state)
        result[t] = masked
        kinds.append("masked_omega")
    report.returned = "z" if all(k == "z" for k in kinds) else ",".join(kinds)
    report.min_eigenvalues = [float(np.linalg.eigvalsh(r)[0]) for r in result]
    return result


def solve_omega_step(s_set, hyper, cfg=None, state=None, callback=None):
    """Solve the joint precision update for covariances ``s_set`` (T, m, m).

    Parameters
    ----------
    s_set : sequence of (m, m) arrays
        Weight covariances, one per super-task.
    hyper : Hyperparams
    cfg : AdmmConfig, optional
    state : AdmmState, optional
        Warm start; identity primal/consensus and zero duals by default.
    callback : callable, optional
        Called with the (T, m, m) array of Ω iterates after every Ω-update.

    Returns
    -------
    precisions : ndarray of shape (T, m, m)
    report : AdmmReport
        Iteration count, residuals and the final ADMM iterates
        (``report.state``), usable as a warm start.

    Notes
    -----
    With ``lambda2 == 0`` the super-tasks do not interact and each one is
    solved by its own ADMM loop with its own stopping test, so the result
    for super-task ``t`` does not depend on the others.

    An ``ADMMConvergenceWarning`` is issued when ``max_iters`` is reached
    before the residual tolerances; the result is still returned.
    """
    precisions, report = _solve_omega_step(s_set, hyper, cfg, state, callback)
    if not report.converged:
        warnings.warn(
            f"ADMM stopped after {report.iterations} iterations without meeting tolerances "
            f"(primal {report.primal_residual:.3g}, dual {report.dual_residual:.3g})",
            ADMMConvergenceWarning, stacklevel=2)
    return precisions, report


def _solve_omega_step(s_set, hyper, cfg=None, state=None, callback=None):
    cfg = cfg or AdmmConfig()
    s_stack = np.array([symmetrize(np.asarray(s, dtype=float)) for s in s_set])
    if s_stack.ndim != 3 or s_stack.shape[1] != s_stack.shape[2]:
        raise InvalidInputError("s_set must be a sequence of square matrices")
    T, m, _ = s_stack.shape
    if state is None:
        state = AdmmState.identity(T, m)

    if hyper.lambda2 == 0 and T > 1:
        parts = [
            _admm(s_stack[t:t + 1], hyper, cfg,
                  AdmmState(state.omegas[t:t + 1], state.zs[t:t + 1], state.us[t:t + 1],
                            None if state.rho is None else state.rho[t:t + 1]),
                  callback)
            for t in range(T)
        ]
        new_state = AdmmState(
            np.concatenate([p[0].omegas for p in parts]),
            np.concatenate([p[0].zs for p in parts]),
            np.concatenate([p[0].us for p in parts]),
            np.concatenate([p[0].rho for p in parts]),
        )
        report = AdmmReport(
            iterations=max(p[1].iterations for p in parts),
            converged=all(p[1].converged for p in parts),
            primal_residual=float(np.sqrt(sum(p[1].primal_residual ** 2 for p in parts))),
            dual_residual=float(np.sqrt(sum(p[1].dual_residual ** 2 for p in parts))),
        )
    else:
        new_state, report = _admm(s_stack, hyper, cfg, state, callback)

    report.state = new_state
    return _finalize(new_state, report), report
