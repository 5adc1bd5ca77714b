"""Classical solvers used as comparison points: ordinary least squares,
Lasso via cyclic coordinate descent, full-batch gradient descent, greedy
tree fitting, and a small SGD-trained ReLU network.

Conventions that matter for comparability: least squares returns the
minimum-norm solution in the underdetermined regime, and the Lasso
objective is (1/(2k)) ||Xw - y||^2 + alpha ||w||_1, so alpha values in
the usual {1e-4 .. 1} grid keep their meaning as k grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tasks import TaskInstance, TaskSpec


class ConvergenceError(Exception):
    """Iterative solver hit its sweep cap; carries the last iterate."""

    def __init__(self, message: str, last_iterate: np.ndarray):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass
class BaselineConfig:
    lasso_alphas: tuple[float, ...] = (1e-4, 1e-3, 0.01, 0.1, 1.0)
    lasso_tol: float = 1e-8
    lasso_max_sweeps: int = 100_000
    gd_lr: float = 0.1
    gd_steps: int = 1000
    tree_depth: int = 4
    nn_hidden: int = 100
    nn_lr: float = 5e-3
    nn_steps: int = 2000

    def __post_init__(self):
        if any(a <= 0 for a in self.lasso_alphas):
            raise ValueError("lasso alphas must be > 0")
        if self.lasso_tol <= 0:
            raise ValueError("lasso_tol must be > 0")
        if self.gd_steps < 1 or self.nn_steps < 1:
            raise ValueError("steps must be >= 1")


def least_squares(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares solution (pseudoinverse semantics)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"incompatible shapes {X.shape}, {y.shape}")
    w, *_ = np.linalg.lstsq(X, y, rcond=None)
    return w


def _soft_threshold(z: float, gamma: float) -> float:
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def lasso_objective(X: np.ndarray, y: np.ndarray, w: np.ndarray, alpha: float) -> float:
    k = X.shape[0]
    r = X @ w - y
    return float(r @ r / (2 * k) + alpha * np.abs(w).sum())


def lasso(X: np.ndarray, y: np.ndarray, alpha: float,
          tol: float = 1e-8, max_sweeps: int = 100_000) -> np.ndarray:
    """Cyclic coordinate descent on (1/(2k))||Xw-y||^2 + alpha ||w||_1.

    Stops when the largest coordinate update in a sweep falls below tol;
    raises ConvergenceError (carrying the last iterate) at the sweep cap.
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    k, d = X.shape
    w = np.zeros(d)
    col_sq = (X * X).sum(axis=0) / k
    r = y.copy()  # residual y - Xw
    obj = lasso_objective(X, y, w, alpha)
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                continue
            wj = w[j]
            rho = (X[:, j] @ r) / k + col_sq[j] * wj
            w_new = _soft_threshold(rho, alpha) / col_sq[j]
            delta = w_new - wj
            if delta != 0.0:
                r -= delta * X[:, j]
                w[j] = w_new
                max_delta = max(max_delta, abs(delta))
        new_obj = lasso_objective(X, y, w, alpha)
        assert new_obj <= obj + 1e-12 * max(1.0, abs(obj)), \
            "lasso objective increased within a sweep"
        obj = new_obj
        if max_delta < tol:
            return w
    raise ConvergenceError(
        f"lasso did not converge within {max_sweeps} sweeps", w)


def lasso_kkt_residual(X: np.ndarray, y: np.ndarray, w: np.ndarray, alpha: float) -> float:
    """Max violation of the subgradient optimality conditions."""
    k = X.shape[0]
    grad = X.T @ (X @ w - y) / k
    res = 0.0
    for j in range(w.size):
        if w[j] != 0.0:
            res = max(res, abs(grad[j] + alpha * np.sign(w[j])))
        else:
            res = max(res, max(0.0, abs(grad[j]) - alpha))
    return res


def best_lasso_alpha(X: np.ndarray, y: np.ndarray, X_val: np.ndarray,
                     y_val: np.ndarray, alphas=(1e-4, 1e-3, 0.01, 0.1, 1.0)) -> float:
    """Grid search by held-out squared error."""
    best, best_err = alphas[0], np.inf
    for a in alphas:
        try:
            w = lasso(X, y, a)
        except ConvergenceError as e:
            w = e.last_iterate
        err = float(((X_val @ w - y_val) ** 2).mean())
        if err < best_err:
            best, best_err = a, err
    return best


def gd_least_squares(X: np.ndarray, y: np.ndarray, lr: float, steps: int,
                     w0: np.ndarray | None = None) -> np.ndarray:
    """Full-batch gradient descent on (1/(2k))||Xw-y||^2 from w0 (zeros)."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    k, d = X.shape
    w = np.zeros(d) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    for _ in range(steps):
        w -= (lr / k) * (X.T @ (X @ w - y))
    return w


def fit_greedy_tree(X: np.ndarray, y: np.ndarray, depth: int) -> TaskInstance:
    """Greedy sign-split regression tree with the same shape as the task
    generator: every split tests one coordinate against 0."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    n_internal = 2 ** depth - 1
    split_coords = np.zeros(n_internal, dtype=np.int64)
    leaf_values = np.zeros(2 ** depth)

    def sse_for_split(idx: np.ndarray, j: int) -> float:
        right = X[idx, j] > 0
        total = 0.0
        for part in (idx[right], idx[~right]):
            if part.size:
                yp = y[part]
                total += float(((yp - yp.mean()) ** 2).sum())
        return total

    def build(node: int, idx: np.ndarray, level: int, parent_mean: float) -> None:
        mean = float(y[idx].mean()) if idx.size else parent_mean
        if level == depth:
            leaf_values[node - n_internal] = mean
            return
        if idx.size:
            scores = [sse_for_split(idx, j) for j in range(d)]
            j_best = int(np.argmin(scores))
        else:
            j_best = 0
        split_coords[node] = j_best
        right = X[idx, j_best] > 0 if idx.size else np.zeros(0, dtype=bool)
        build(2 * node + 1, idx[~right], level + 1, mean)
        build(2 * node + 2, idx[right], level + 1, mean)

    build(0, np.arange(n), 0, float(y.mean()) if n else 0.0)
    spec = TaskSpec("decision_tree", d=d, k=max(n, 1), depth=depth)
    return TaskInstance(spec, split_coords=split_coords, leaf_values=leaf_values)


@dataclass
class TwoLayerNet:
    """Predictor closure returned by fit_2layer_nn."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        h = np.maximum(X @ self.w1.T + self.b1, 0.0)
        return h @ self.w2 + self.b2


def fit_2layer_nn(X: np.ndarray, y: np.ndarray, hidden: int, lr: float,
                  steps: int, seed: int) -> TwoLayerNet:
    """Full-batch gradient descent on mean squared error from a random
    init; raises on numeric blowup."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, np.sqrt(2.0 / d), size=(hidden, d))
    b1 = np.zeros(hidden)
    w2 = rng.normal(0.0, np.sqrt(1.0 / hidden), size=hidden)
    b2 = 0.0
    for _ in range(steps):
        z = X @ w1.T + b1
        h = np.maximum(z, 0.0)
        pred = h @ w2 + b2
        err = pred - y
        loss = float((err * err).mean())
        if not np.isfinite(loss):
            raise FloatingPointError("2-layer NN training diverged (NaN/Inf loss)")
        g_pred = 2.0 * err / n
        g_w2 = h.T @ g_pred
        g_b2 = g_pred.sum()
        g_h = np.outer(g_pred, w2)
        g_z = g_h * (z > 0)
        g_w1 = g_z.T @ X
        g_b1 = g_z.sum(axis=0)
        w1 -= lr * g_w1
        b1 -= lr * g_b1
        w2 -= lr * g_w2
        b2 -= lr * g_b2
    return TwoLayerNet(w1=w1, b1=b1, w2=w2, b2=b2)
