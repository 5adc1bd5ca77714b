"""Representation probing: decode regression statistics out of loop states.

A probe pools one captured state over the sequence dimension with a
learned softmax weighting, then regresses the target (X^T y or the
least-squares solution) through a 2-layer ReLU MLP. A separate probe is
trained per (iteration, context length) cell; errors are reported as
MSE divided by the problem dimension, averaged over context lengths for
display. The control protocol trains on prompts whose regression weights
are pinned to all-ones and tests on random weights, bounding what input
statistics alone can explain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as en
from .baselines import least_squares
from .loop import looped_forward
from .model import ModelWeights, embed_prompt
from .optim import AdamState, adam_update
from .rng import derive_rng
from .tasks import TaskInstance, TaskSpec, sample_prompt_batch

PROBE_TARGETS = ("xty", "wols")


@dataclass
class ProbeConfig:
    target: str = "xty"
    hidden: int = 64
    lr: float = 1e-3
    steps: int = 1500
    control_task: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.target not in PROBE_TARGETS:
            raise ValueError(f"unknown probe target '{self.target}'")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")


@dataclass
class ProbeResult:
    mse_train: float
    mse_test: float
    converged: bool


def probe_targets(xs: np.ndarray, ys: np.ndarray, i: int, target: str) -> np.ndarray:
    """Targets for context length i from raw prompt arrays.

    xs (B, k+1, d), ys (B, k+1) -> (B, d): X_i^T y_i or the min-norm
    least-squares solution on the first i pairs.
    """
    if i < 1:
        raise ValueError("probing needs at least one in-context pair")
    B, _, d = xs.shape
    out = np.zeros((B, d))
    for b in range(B):
        X = xs[b, :i]
        y = ys[b, :i]
        out[b] = X.T @ y if target == "xty" else least_squares(X, y)
    return out


def pooled_forward(params: dict[str, en.Tensor], reps: en.Tensor) -> en.Tensor:
    """softmax-weighted pooling over rows, then the 2-layer MLP."""
    alpha = en.softmax_rows(params["s"])          # (R,)
    R = alpha.shape[0]
    pooled = en.reduce_sum(en.mul(reps, en.reshape(alpha, (1, R, 1))), axis=1)
    h = en.relu(en.add(en.matmul(pooled, params["w1"]), params["b1"]))
    return en.add(en.matmul(h, params["w2"]), params["b2"])


def probe_train(reps_train: np.ndarray, targets_train: np.ndarray,
                reps_test: np.ndarray, targets_test: np.ndarray,
                cfg: ProbeConfig) -> ProbeResult:
    """Fit one probe on (N, R, D) states against (N, d) targets.

    Returns train/test MSE divided by d (squared_error_mean averages over
    elements, which equals per-sample MSE / d).
    """
    N, R, D = reps_train.shape
    d = targets_train.shape[1]
    rng = derive_rng(cfg.seed, "probe_init")
    params = {
        "s": en.parameter(np.zeros(R), dtype=np.float64),
        "w1": en.parameter(rng.normal(0, np.sqrt(1.0 / D), size=(D, cfg.hidden)),
                           dtype=np.float64),
        "b1": en.parameter(np.zeros(cfg.hidden), dtype=np.float64),
        "w2": en.parameter(rng.normal(0, np.sqrt(1.0 / cfg.hidden), size=(cfg.hidden, d)),
                           dtype=np.float64),
        "b2": en.parameter(np.zeros(d), dtype=np.float64),
    }
    x_tr = en.Tensor(reps_train, dtype=np.float64)
    y_tr = en.Tensor(targets_train, dtype=np.float64)
    adam = AdamState(lr=cfg.lr)
    first = None
    for _ in range(cfg.steps):
        loss = en.squared_error_mean(pooled_forward(params, x_tr), y_tr)
        loss.backward()
        grads = {n: p.grad for n, p in params.items() if p.grad is not None}
        adam_update(params, grads, adam)
        for p in params.values():
            p.zero_grad()
        if first is None:
            first = loss.item()
    with en.no_grad():
        final_train = en.squared_error_mean(pooled_forward(params, x_tr), y_tr).item()
        x_te = en.Tensor(reps_test, dtype=np.float64)
        y_te = en.Tensor(targets_test, dtype=np.float64)
        mse_test = en.squared_error_mean(pooled_forward(params, x_te), y_te).item()
    # non-fatal flag: a diverged or worse-than-start probe is suspicious
    converged = bool(np.isfinite(final_train) and final_train <= (first or np.inf) * 1.01)
    return ProbeResult(mse_train=final_train, mse_test=mse_test, converged=converged)


def capture_loop_states(weights: ModelWeights, tokens: np.ndarray,
                        t_max: int, injection: str = "input_injection") -> list[np.ndarray]:
    """[Y_1 .. Y_t_max] as float64 numpy arrays, gradients off."""
    with en.no_grad():
        P = embed_prompt(tokens, weights)
        states = looped_forward(weights, P, t_max, injection, capture_all=True)
    return [s.data.astype(np.float64) for s in states]


@dataclass
class ProbeCell:
    t: int
    i: int
    result: ProbeResult


def probe_sweep(weights: ModelWeights, spec: TaskSpec, cfg: ProbeConfig,
                iterations: list[int], context_lengths: list[int],
                n_train: int = 512, n_test: int = 256,
                injection: str = "input_injection") -> list[ProbeCell]:
    """Train one probe per (iteration t, context length i) cell.

    Training prompts follow the control protocol when cfg.control_task
    (weights pinned to all-ones); test prompts always use random weights.
    """
    t_max = max(iterations)
    fixed = None
    if cfg.control_task:
        fixed = TaskInstance(spec, w=np.ones(spec.d))
    rng_tr = derive_rng(cfg.seed, "probe_train_data")
    train_batch = sample_prompt_batch(spec, n_train, spec.k, rng_tr,
                                      d_max=weights.config.d_max, fixed_task=fixed)
    rng_te = derive_rng(cfg.seed, "probe_test_data")
    test_batch = sample_prompt_batch(spec, n_test, spec.k, rng_te,
                                     d_max=weights.config.d_max)
    states_tr = capture_loop_states(weights, train_batch.tokens, t_max, injection)
    states_te = capture_loop_states(weights, test_batch.tokens, t_max, injection)

    cells: list[ProbeCell] = []
    for t in iterations:
        for i in context_lengths:
            rows = 2 * i + 1
            y_tr = probe_targets(train_batch.xs, train_batch.targets, i, cfg.target)
            y_te = probe_targets(test_batch.xs, test_batch.targets, i, cfg.target)
            res = probe_train(states_tr[t - 1][:, :rows, :], y_tr,
                              states_te[t - 1][:, :rows, :], y_te, cfg)
            cells.append(ProbeCell(t=t, i=i, result=res))
    return cells


def average_over_context(cells: list[ProbeCell]) -> dict[int, float]:
    """Display aggregation: mean test MSE per iteration across context
    lengths."""
    by_t: dict[int, list[float]] = {}
    for c in cells:
        by_t.setdefault(c.t, []).append(c.result.mse_test)
    return {t: float(np.mean(v)) for t, v in sorted(by_t.items())}
