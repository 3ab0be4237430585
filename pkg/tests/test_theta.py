import numpy as np
import pytest

from hmtl.core import InvalidInputError, SolverError, SubTaskData
from hmtl.theta import ThetaSolveConfig, lbfgs, solve_theta_step, theta_value_grad

from oracles import central_difference, dense_theta_solution, random_spd, random_tasks


def _value(tasks, omega, lambda0):
    return lambda th: theta_value_grad(tasks, th, omega, lambda0)[0]


def test_gradient_without_coupling_is_data_gradient():
    rng = np.random.default_rng(0)
    tasks = random_tasks(rng, 3, 4, 6)
    theta = rng.standard_normal((4, 3))
    _, grad = theta_value_grad(tasks, theta, random_spd(rng, 3), 0.0)
    for k, sub in enumerate(tasks):
        # same formula, different summation order: equal up to rounding
        np.testing.assert_allclose(grad[:, k], 2 * sub.X.T @ (sub.X @ theta[:, k] - sub.y),
                                   rtol=1e-13, atol=1e-13)


def test_gradient_trace_term_only():
    rng = np.random.default_rng(1)
    d, m, lam = 5, 3, 0.7
    theta = rng.standard_normal((d, m))
    tasks = []
    for k in range(m):
        X = rng.standard_normal((6, d))
        tasks.append(SubTaskData(X, X @ theta[:, k]))
    _, grad = theta_value_grad(tasks, theta, np.eye(m), lam)
    np.testing.assert_allclose(grad, 2 * lam / d * theta, atol=1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    tasks = random_tasks(rng, 3, 4, 5)
    omega, theta = random_spd(rng, 3), rng.standard_normal((4, 3))
    _, grad = theta_value_grad(tasks, theta, omega, 0.8)
    fd = central_difference(_value(tasks, omega, 0.8), theta)
    assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-5


def test_gradient_with_unequal_sample_counts():
    rng = np.random.default_rng(3)
    tasks = [SubTaskData(rng.standard_normal((n, 3)), rng.standard_normal(n)) for n in (2, 5, 7)]
    omega, theta = random_spd(rng, 3), rng.standard_normal((3, 3))
    _, grad = theta_value_grad(tasks, theta, omega, 1.3)
    fd = central_difference(_value(tasks, omega, 1.3), theta)
    assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-5


def test_value_grad_shape_errors():
    rng = np.random.default_rng(4)
    tasks = random_tasks(rng, 2, 3, 4)
    with pytest.raises(InvalidInputError):
        theta_value_grad(tasks, np.zeros((2, 2)), np.eye(2), 0.1)
    with pytest.raises(InvalidInputError):
        theta_value_grad(tasks, np.zeros((3, 2)), np.eye(3), 0.1)


def test_square_designs_give_exact_least_squares():
    rng = np.random.default_rng(5)
    tasks = [SubTaskData(random_spd(rng, 4, cond=5.0), rng.standard_normal(4)) for _ in range(3)]
    theta = solve_theta_step(tasks, np.eye(3), 0.0, np.zeros((4, 3)))
    for k, sub in enumerate(tasks):
        np.testing.assert_allclose(theta[:, k], np.linalg.solve(sub.X, sub.y), atol=1e-6)


def test_optimal_init_is_returned_unchanged():
    rng = np.random.default_rng(6)
    tasks = random_tasks(rng, 2, 2, 3)
    omega = random_spd(rng, 2)
    opt = dense_theta_solution(tasks, omega, 0.5)
    def fun(x):
        f, g = theta_value_grad(tasks, x.reshape(2, 2), omega, 0.5)
        return f, g.ravel()

    x, _, iters = lbfgs(fun, opt.ravel(), ThetaSolveConfig(grad_tol=1e-6))
    assert iters == 0
    np.testing.assert_array_equal(x, opt.ravel())


def test_matches_dense_normal_equations():
    rng = np.random.default_rng(7)
    tasks = random_tasks(rng, 2, 2, 3)
    omega = random_spd(rng, 2)
    theta = solve_theta_step(tasks, omega, 0.9, rng.uniform(-0.5, 0.5, (2, 2)))
    np.testing.assert_allclose(theta, dense_theta_solution(tasks, omega, 0.9), atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_larger_instances_match_dense_solution(seed):
    rng = np.random.default_rng(100 + seed)
    m, d = 4, 6
    tasks = random_tasks(rng, m, d, 4)  # n < d: the coupling makes the problem well posed
    omega = random_spd(rng, m, cond=30.0)
    init = rng.uniform(-0.5, 0.5, (d, m))
    theta = solve_theta_step(tasks, omega, 2.0, init)
    np.testing.assert_allclose(theta, dense_theta_solution(tasks, omega, 2.0), atol=1e-6)
    value = lambda th: theta_value_grad(tasks, th, omega, 2.0)[0]  # noqa: E731
    assert value(theta) <= value(init)


def test_never_worse_than_init_when_truncated():
    rng = np.random.default_rng(8)
    tasks = random_tasks(rng, 3, 5, 4)
    omega, init = random_spd(rng, 3), rng.standard_normal((5, 3))
    theta = solve_theta_step(tasks, omega, 0.1, init, ThetaSolveConfig(max_iters=2))
    value = lambda th: theta_value_grad(tasks, th, omega, 0.1)[0]  # noqa: E731
    assert value(theta) <= value(init)


def test_nonfinite_line_search_raises_with_last_iterate():
    def fun(x):
        if np.abs(x).max() > 1.5:
            return np.inf, np.zeros_like(x)
        return -float(x @ x), -2 * x

    with pytest.raises(SolverError) as info:
        lbfgs(fun, np.array([1.0, 0.5]), ThetaSolveConfig())
    assert info.value.last_iterate is not None
    assert np.all(np.isfinite(info.value.last_iterate))


def test_config_validation():
    with pytest.raises(InvalidInputError):
        ThetaSolveConfig(grad_tol=0)
    with pytest.raises(InvalidInputError):
        ThetaSolveConfig(max_iters=0)
