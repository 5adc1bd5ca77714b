"""Classical solver contracts: closed-form cases, KKT conditions,
convergence to the exact solution, generate-and-recover checks."""

import numpy as np
import pytest

from looplab.baselines import (ConvergenceError, best_lasso_alpha, fit_2layer_nn,
                               fit_greedy_tree, gd_least_squares, lasso,
                               lasso_kkt_residual, lasso_objective, least_squares)
from looplab.tasks import TaskSpec, eval_function_batch, sample_task
from looplab.rng import derive_rng


# -- least squares ----------------------------------------------------------


def test_ols_identity():
    np.testing.assert_allclose(least_squares(np.eye(2), np.array([2.0, 3.0])), [2.0, 3.0])


def test_ols_min_norm_underdetermined():
    w = least_squares(np.array([[1.0, 0.0]]), np.array([2.0]))
    np.testing.assert_allclose(w, [2.0, 0.0], atol=1e-12)


def test_ols_normal_equations_residual(rng):
    for _ in range(20):
        X = rng.standard_normal((8, 3))
        y = rng.standard_normal(8)
        w = least_squares(X, y)
        res = X.T @ X @ w - X.T @ y
        assert np.abs(res).max() < 1e-8


def test_ols_exact_recovery_heldout(rng):
    # noiseless linear data, k >= d: held-out prediction at machine precision
    for _ in range(10):
        w_true = rng.standard_normal(6)
        X = rng.standard_normal((12, 6))
        y = X @ w_true
        w = least_squares(X, y)
        x_new = rng.standard_normal(6)
        assert (x_new @ w - x_new @ w_true) ** 2 < 1e-8


# -- lasso --------------------------------------------------------------------


def test_lasso_soft_threshold_closed_form():
    w = lasso(np.array([[1.0]]), np.array([1.0]), alpha=0.25)
    np.testing.assert_allclose(w, [0.75], atol=1e-10)


def test_lasso_full_shrinkage():
    w = lasso(np.array([[1.0]]), np.array([1.0]), alpha=2.0)
    np.testing.assert_allclose(w, [0.0])


def test_lasso_rejects_bad_alpha():
    with pytest.raises(ValueError):
        lasso(np.eye(2), np.zeros(2), alpha=0.0)


def _ista_oracle(X, y, alpha, iters=200_000):
    """Independent proximal-gradient (projected-gradient style) solver."""
    k, d = X.shape
    L = np.linalg.eigvalsh(X.T @ X / k).max()
    eta = 1.0 / L
    w = np.zeros(d)
    for _ in range(iters):
        grad = X.T @ (X @ w - y) / k
        z = w - eta * grad
        w = np.sign(z) * np.maximum(np.abs(z) - eta * alpha, 0.0)
    return w


def test_lasso_kkt_and_matches_ista(rng):
    X = rng.standard_normal((12, 5))
    w_true = np.array([1.5, 0.0, -2.0, 0.0, 0.5])
    y = X @ w_true + 0.1 * rng.standard_normal(12)
    alpha = 0.05
    w = lasso(X, y, alpha)
    assert lasso_kkt_residual(X, y, w, alpha) < 1e-6
    w_oracle = _ista_oracle(X, y, alpha)
    assert abs(lasso_objective(X, y, w, alpha) - lasso_objective(X, y, w_oracle, alpha)) < 1e-8
    np.testing.assert_allclose(w, w_oracle, atol=1e-4)


def test_lasso_alpha_to_zero_approaches_ols(rng):
    X = rng.standard_normal((20, 4))
    y = rng.standard_normal(20)
    w_ols = least_squares(X, y)
    w = lasso(X, y, alpha=1e-8)
    assert np.abs(w - w_ols).max() < 1e-3


def test_lasso_zero_column_stays_zero(rng):
    X = rng.standard_normal((10, 3))
    X[:, 1] = 0.0
    w = lasso(X, X @ np.array([1.0, 0.0, -1.0]), alpha=0.01)
    assert w[1] == 0.0


def test_lasso_convergence_error_carries_iterate(rng):
    X = rng.standard_normal((30, 8))
    y = rng.standard_normal(30)
    with pytest.raises(ConvergenceError) as exc:
        lasso(X, y, alpha=1e-6, max_sweeps=2)
    assert exc.value.last_iterate.shape == (8,)


def test_best_lasso_alpha_runs_grid(rng):
    spec = TaskSpec("sparse_linear", d=8, k=12, s=2)
    task = sample_task(spec, derive_rng(9, "t"))
    X = rng.standard_normal((12, 8))
    y = eval_function_batch(task, X)
    Xv = rng.standard_normal((64, 8))
    yv = eval_function_batch(task, Xv)
    a = best_lasso_alpha(X, y, Xv, yv)
    assert a in (1e-4, 1e-3, 0.01, 0.1, 1.0)


# -- gradient descent ---------------------------------------------------------


def test_gd_zero_steps():
    w = gd_least_squares(np.eye(3), np.ones(3), lr=0.1, steps=0)
    np.testing.assert_array_equal(w, np.zeros(3))


def test_gd_one_step_closed_form(rng):
    X = rng.standard_normal((6, 3))
    y = rng.standard_normal(6)
    w = gd_least_squares(X, y, lr=0.2, steps=1)
    np.testing.assert_allclose(w, (0.2 / 6) * (X.T @ y), rtol=1e-12)


def test_gd_converges_to_ols(rng):
    X = rng.standard_normal((30, 4))
    y = rng.standard_normal(30)
    k = 30
    lam_max = np.linalg.eigvalsh(X.T @ X).max()
    lr = 1.0 * k / lam_max
    w = gd_least_squares(X, y, lr=lr, steps=20_000)
    assert np.abs(w - least_squares(X, y)).max() < 1e-6


# -- greedy tree ---------------------------------------------------------------


def test_tree_recovers_generating_split(rng):
    spec = TaskSpec("decision_tree", d=6, k=10, depth=1)
    gen = sample_task(spec, derive_rng(3, "tree"))
    X = rng.standard_normal((500, 6))
    y = eval_function_batch(gen, X)
    fit = fit_greedy_tree(X, y, depth=1)
    assert fit.split_coords[0] == gen.split_coords[0]
    np.testing.assert_allclose(sorted(fit.leaf_values), sorted(gen.leaf_values), atol=0.2)


def test_tree_constant_target(rng):
    X = rng.standard_normal((50, 3))
    y = np.full(50, 2.5)
    fit = fit_greedy_tree(X, y, depth=2)
    np.testing.assert_allclose(fit.leaf_values, np.full(4, 2.5))


def test_tree_sse_nonincreasing_in_depth(rng):
    X = rng.standard_normal((200, 4))
    y = rng.standard_normal(200)

    def sse(depth):
        fit = fit_greedy_tree(X, y, depth=depth)
        pred = eval_function_batch(fit, X)
        return ((pred - y) ** 2).sum()

    assert sse(2) <= sse(1) + 1e-9


def test_tree_empty_node_inherits_parent_mean():
    # all points on one side of every split: the empty branch inherits
    X = np.abs(np.random.default_rng(0).standard_normal((20, 2))) + 0.1
    y = X[:, 0] * 2.0
    fit = fit_greedy_tree(X, y, depth=2)
    assert np.isfinite(fit.leaf_values).all()


# -- 2-layer net ----------------------------------------------------------------


def test_nn_zero_steps_deterministic(rng):
    X = rng.standard_normal((10, 3))
    y = rng.standard_normal(10)
    a = fit_2layer_nn(X, y, hidden=8, lr=0.01, steps=0, seed=42)
    b = fit_2layer_nn(X, y, hidden=8, lr=0.01, steps=0, seed=42)
    np.testing.assert_array_equal(a(X), b(X))
    c = fit_2layer_nn(X, y, hidden=8, lr=0.01, steps=0, seed=43)
    assert not np.allclose(a(X), c(X))


def test_nn_fits_linear_toy(rng):
    X = rng.standard_normal((50, 1))
    y = 2.0 * X[:, 0]
    net = fit_2layer_nn(X, y, hidden=32, lr=0.02, steps=4000, seed=7)
    mse = float(((net(X) - y) ** 2).mean())
    assert mse < 0.05


def test_nn_loss_nonincreasing_small_lr(rng):
    X = rng.standard_normal((40, 2))
    y = rng.standard_normal(40)
    losses = []
    for steps in (0, 50, 100, 200):
        net = fit_2layer_nn(X, y, hidden=16, lr=1e-3, steps=steps, seed=5)
        losses.append(float(((net(X) - y) ** 2).mean()))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
