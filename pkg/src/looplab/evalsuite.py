"""Normalized-error evaluation with bootstrap confidence intervals.

Errors are squared prediction errors divided by the problem dimension d,
so the trivial zero predictor scores 1 on linear tasks; that convention
fixes the y-scale of every error curve. Records serialize to JSON lines
under a versioned schema.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from . import engine as en
from .baselines import ConvergenceError, lasso, least_squares
from .loop import looped_forward
from .model import ModelWeights, embed_prompt, read_out
from .rng import derive_rng
from .tasks import (OodTransform, TaskSpec, decode_prompt_tokens,
                    sample_prompt_batch)

METRICS_SCHEMA = "looplab.metrics.v1"


@dataclass
class MetricsRecord:
    """One evaluation result: an error (or accuracy) curve with CIs."""

    kind: str                      # error_vs_k | error_vs_loop | accuracy
    task: dict
    model_id: str
    axis: list[int]
    mean: list[float]
    ci_lo: list[float]
    ci_hi: list[float]
    n_prompts: int
    n_bootstrap: int
    seed: int
    transform: dict | None = None
    schema: str = METRICS_SCHEMA
    step: int | None = None
    d_cur: int | None = None
    k_cur: int | None = None
    b_cur: int | None = None
    trained_b: int | None = None
    wallclock: float | None = None

    def __post_init__(self):
        for lo, m, hi in zip(self.ci_lo, self.mean, self.ci_hi):
            if not (lo <= m + 1e-12 and m <= hi + 1e-12):
                raise ValueError("CI must bracket the mean")

    def to_dict(self) -> dict:
        out = {"schema": self.schema, "kind": self.kind, "task": self.task,
               "model_id": self.model_id, "transform": self.transform,
               "axis": self.axis, "mean": self.mean,
               "ci_lo": self.ci_lo, "ci_hi": self.ci_hi,
               "n_prompts": self.n_prompts, "n_bootstrap": self.n_bootstrap,
               "seed": self.seed}
        for opt in ("step", "d_cur", "k_cur", "b_cur", "trained_b", "wallclock"):
            val = getattr(self, opt)
            if val is not None:
                out[opt] = val
        return out

    @staticmethod
    def from_dict(d: dict) -> "MetricsRecord":
        if d.get("schema") != METRICS_SCHEMA:
            raise ValueError(f"unsupported metrics schema {d.get('schema')!r}")
        kwargs = {k: d[k] for k in ("kind", "task", "model_id", "axis", "mean",
                                    "ci_lo", "ci_hi", "n_prompts", "n_bootstrap",
                                    "seed") if k in d}
        for opt in ("transform", "step", "d_cur", "k_cur", "b_cur", "trained_b",
                    "wallclock"):
            if opt in d:
                kwargs[opt] = d[opt]
        return MetricsRecord(**kwargs)


def append_jsonl(path: str | Path, record: MetricsRecord) -> None:
    with open(path, "a") as f:
        f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[MetricsRecord]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(MetricsRecord.from_dict(json.loads(line)))
    return records


def bootstrap_ci(samples: np.ndarray, n_trials: int = 1000, level: float = 0.90,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean; deterministic by seed."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("bootstrap_ci requires nonempty samples")
    rng = derive_rng(seed, "bootstrap")
    n = samples.size
    idx = rng.integers(0, n, size=(n_trials, n))
    means = samples[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    return (float(np.quantile(means, alpha)), float(np.quantile(means, 1.0 - alpha)))


# ---------------------------------------------------------------------------
# predictors: anything that maps token batches to per-prefix predictions
# ---------------------------------------------------------------------------


class Predictor(Protocol):
    model_id: str

    def predict(self, tokens: np.ndarray) -> np.ndarray:
        """tokens (B, 2k+1, d_max) -> predictions (B, k+1)."""
        ...


class LoopedPredictor:
    """A trained looped model run for a fixed number of inference
    iterations (defaults to the trained b)."""

    def __init__(self, weights: ModelWeights, n_loop: int,
                 injection: str = "input_injection", model_id: str = "looped"):
        self.weights = weights
        self.n_loop = n_loop
        self.injection = injection
        self.model_id = model_id

    def predict(self, tokens: np.ndarray) -> np.ndarray:
        with en.no_grad():
            P = embed_prompt(tokens, self.weights)
            Y = looped_forward(self.weights, P, self.n_loop, self.injection)
            return read_out(Y, self.weights).data.astype(np.float64)

    def predict_per_iteration(self, tokens: np.ndarray, t_max: int) -> np.ndarray:
        """Predictions after every loop iteration: (t_max, B, k+1)."""
        with en.no_grad():
            P = embed_prompt(tokens, self.weights)
            states = looped_forward(self.weights, P, t_max, self.injection,
                                    capture_all=True)
            return np.stack([read_out(Y, self.weights).data.astype(np.float64)
                             for Y in states])


class ZeroPredictor:
    model_id = "zero"

    def predict(self, tokens: np.ndarray) -> np.ndarray:
        B, S, _ = tokens.shape
        return np.zeros((B, (S + 1) // 2))


class OraclePredictor:
    """Test double: reads the true targets planted by the harness."""

    model_id = "oracle"

    def __init__(self, targets: np.ndarray):
        self.targets = targets

    def predict(self, tokens: np.ndarray) -> np.ndarray:
        return self.targets


class SolverPredictor:
    """Classical per-prefix solver: refit on the first i pairs, predict
    the (i+1)-th input. With no context it predicts 0."""

    def __init__(self, d: int, solver: str = "ols", alpha: float = 0.01,
                 model_id: str | None = None):
        self.d = d
        self.solver = solver
        self.alpha = alpha
        self.model_id = model_id or solver

    def _fit(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.solver == "ols":
            return least_squares(X, y)
        if self.solver == "lasso":
            try:
                return lasso(X, y, self.alpha)
            except ConvergenceError as e:
                return e.last_iterate
        raise ValueError(f"unknown solver '{self.solver}'")

    def predict(self, tokens: np.ndarray) -> np.ndarray:
        xs, ys = decode_prompt_tokens(tokens, self.d)
        B, kp1, _ = xs.shape
        preds = np.zeros((B, kp1))
        for b in range(B):
            for i in range(1, kp1):
                w = self._fit(xs[b, :i], ys[b, :i])
                preds[b, i] = xs[b, i] @ w
        return preds


# ---------------------------------------------------------------------------
# evaluation drivers
# ---------------------------------------------------------------------------


def _eval_batches(spec: TaskSpec, n_prompts: int, seed: int,
                  transform: OodTransform | None, d_max: int,
                  batch_size: int = 256):
    done = 0
    idx = 0
    while done < n_prompts:
        n = min(batch_size, n_prompts - done)
        rng = derive_rng(seed, "eval", idx)
        yield sample_prompt_batch(spec, n, spec.k, rng, d_max=d_max,
                                  transform=transform)
        done += n
        idx += 1


def evaluate(predictor: Predictor, spec: TaskSpec, n_prompts: int,
             seed: int = 0, transform: OodTransform | None = None,
             d_max: int | None = None, n_bootstrap: int = 1000,
             level: float = 0.90, batch_size: int = 256,
             **extras) -> MetricsRecord:
    """Normalized error vs in-context count, with per-point bootstrap CIs."""
    t0 = time.perf_counter()
    d_max = spec.d if d_max is None else d_max
    errs = []
    for batch in _eval_batches(spec, n_prompts, seed, transform, d_max, batch_size):
        preds = predictor.predict(batch.tokens)
        errs.append((preds - batch.targets) ** 2 / spec.d)
    errors = np.concatenate(errs, axis=0)  # (n_prompts, k+1)
    mean = errors.mean(axis=0)
    cis = [bootstrap_ci(errors[:, i], n_bootstrap, level, seed=seed + i)
           for i in range(errors.shape[1])]
    return MetricsRecord(
        kind="error_vs_k",
        task=spec.to_dict(),
        model_id=predictor.model_id,
        transform=transform.to_dict() if transform else None,
        axis=list(range(errors.shape[1])),
        mean=[float(v) for v in mean],
        ci_lo=[c[0] for c in cis],
        ci_hi=[c[1] for c in cis],
        n_prompts=n_prompts,
        n_bootstrap=n_bootstrap,
        seed=seed,
        wallclock=time.perf_counter() - t0,
        **extras,
    )


def loop_sweep(predictor: LoopedPredictor, spec: TaskSpec, t_max: int,
               n_prompts: int, seed: int = 0, prefix: int | None = None,
               d_max: int | None = None, n_bootstrap: int = 1000,
               level: float = 0.90, batch_size: int = 256,
               **extras) -> MetricsRecord:
    """Normalized error at a fixed prefix length (default k) after each
    loop iteration t in [1, t_max]."""
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    t0 = time.perf_counter()
    d_max = spec.d if d_max is None else d_max
    prefix = spec.k if prefix is None else prefix
    errs = []
    for batch in _eval_batches(spec, n_prompts, seed, None, d_max, batch_size):
        preds = predictor.predict_per_iteration(batch.tokens, t_max)  # (t,B,k+1)
        target = batch.targets[:, prefix]
        errs.append((preds[:, :, prefix] - target[None, :]) ** 2 / spec.d)
    errors = np.concatenate(errs, axis=1)  # (t_max, n_prompts)
    mean = errors.mean(axis=1)
    cis = [bootstrap_ci(errors[t], n_bootstrap, level, seed=seed + t)
           for t in range(t_max)]
    return MetricsRecord(
        kind="error_vs_loop",
        task=spec.to_dict(),
        model_id=predictor.model_id,
        axis=list(range(1, t_max + 1)),
        mean=[float(v) for v in mean],
        ci_lo=[c[0] for c in cis],
        ci_hi=[c[1] for c in cis],
        n_prompts=n_prompts,
        n_bootstrap=n_bootstrap,
        seed=seed,
        trained_b=extras.pop("trained_b", predictor.n_loop),
        wallclock=time.perf_counter() - t0,
        **extras,
    )


def curve_nonincreasing_within_ci(record: MetricsRecord) -> bool:
    """True when each point's mean does not exceed the previous point's
    upper CI bound (monotone decrease up to sampling noise)."""
    return all(m_next <= hi_prev + 1e-12
               for m_next, hi_prev in zip(record.mean[1:], record.ci_hi[:-1]))
