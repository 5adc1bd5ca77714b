"""The training loop: (d, k) curriculum, loop-depth ramp, Adam on the
truncated window loss, resumable checkpoints, metrics emission.

Batches are seeded by (root_seed, "batch", step), so resuming from a
checkpoint replays exactly the stream an uninterrupted run would see.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

from . import engine as en
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .evalsuite import LoopedPredictor, append_jsonl, evaluate
from .loop import LoopSchedule, schedule_step, truncated_loss
from .model import ModelConfig, ModelWeights, init_weights
from .optim import AdamState, adam_update
from .rng import derive_rng
from .tasks import TaskSpec, sample_prompt_batch


@dataclass(frozen=True)
class CurriculumConfig:
    enabled: bool = False
    d_start: int = 5
    k_rule: str = "2d+1"
    step_interval: int = 2000

    def __post_init__(self):
        if self.k_rule != "2d+1":
            raise ValueError(f"unsupported curriculum k_rule '{self.k_rule}'")

    def to_dict(self) -> dict:
        return {"enabled": self.enabled, "d_start": self.d_start,
                "k_rule": self.k_rule, "step_interval": self.step_interval}


@dataclass(frozen=True)
class TrainConfig:
    task: TaskSpec
    model: ModelConfig
    schedule: LoopSchedule
    curriculum: CurriculumConfig = CurriculumConfig()
    steps: int = 20_000
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    eval_every: int = 2000
    eval_prompts: int = 256
    checkpoint_every: int = 5000
    n_bootstrap: int = 1000
    root_seed: int = 0
    blas_threads: int = 1

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.curriculum.enabled and self.curriculum.d_start > self.task.d:
            raise ValueError("curriculum d_start must be <= task d")
        if self.task.d > self.model.d_max:
            raise ValueError("task d exceeds model d_max")
        if self.task.k > self.model.k_max:
            raise ValueError("task k exceeds model k_max")

    def to_dict(self) -> dict:
        return {"task": self.task.to_dict(), "model": self.model.to_dict(),
                "schedule": self.schedule.to_dict(),
                "curriculum": self.curriculum.to_dict(),
                "steps": self.steps, "batch_size": self.batch_size,
                "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps_adam": self.eps_adam, "eval_every": self.eval_every,
                "eval_prompts": self.eval_prompts,
                "checkpoint_every": self.checkpoint_every,
                "n_bootstrap": self.n_bootstrap, "root_seed": self.root_seed,
                "blas_threads": self.blas_threads}


@dataclass
class TrainState:
    step: int
    weights: ModelWeights
    adam: AdamState
    b_cur: int
    d_cur: int
    k_cur: int
    root_seed: int
    loss_log: list = None  # [(step, loss)] for the completed steps this run

    def __post_init__(self):
        if self.loss_log is None:
            self.loss_log = []


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, checkpoint: Path | None):
        super().__init__(
            f"non-finite loss at step {step}"
            + (f"; diagnostic checkpoint at {checkpoint}" if checkpoint else ""))
        self.step = step
        self.checkpoint = checkpoint


def curriculum_step(step: int, config: TrainConfig) -> tuple[int, int]:
    """Active (d_cur, k_cur); both clamp at the task targets."""
    if step < 0:
        raise ValueError("step must be >= 0")
    task = config.task
    cur = config.curriculum
    if not cur.enabled:
        return task.d, task.k
    d_cur = min(task.d, cur.d_start + step // cur.step_interval)
    k_cur = min(task.k, 2 * d_cur + 1)
    return d_cur, k_cur


# -- checkpointing ------------------------------------------------------------


def checkpoint_save(state: TrainState, config: TrainConfig, path: str | Path) -> None:
    tensors: dict[str, np.ndarray] = {}
    for name, p in state.weights.params.items():
        tensors["weights." + name] = p.data
    for name, m in state.adam.m.items():
        tensors["adam.m." + name] = m
    for name, v in state.adam.v.items():
        tensors["adam.v." + name] = v
    meta = {
        "step": state.step,
        "adam_t": state.adam.t,
        "b_cur": state.b_cur,
        "d_cur": state.d_cur,
        "k_cur": state.k_cur,
        "rng": {"root_seed": state.root_seed, "next_step": state.step},
        "config": config.to_dict(),
    }
    save_tensors(path, tensors, meta)


def checkpoint_load(path: str | Path, config: TrainConfig) -> TrainState:
    tensors, meta = load_tensors(path)
    saved_model = meta.get("config", {}).get("model")
    if saved_model != config.model.to_dict():
        raise CheckpointError(
            f"checkpoint model config {saved_model} does not match {config.model.to_dict()}")
    weights = init_weights(config.model, seed=config.model.seed)
    adam = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                     eps=config.eps_adam, t=meta["adam_t"])
    for name, p in weights.params.items():
        key = "weights." + name
        if key not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor '{key}'")
        if tuple(tensors[key].shape) != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for '{key}': {tensors[key].shape} vs {p.data.shape}")
        p.data = tensors[key].astype(p.data.dtype, copy=True)
        adam.m[name] = tensors["adam.m." + name].astype(p.data.dtype, copy=True)
        adam.v[name] = tensors["adam.v." + name].astype(p.data.dtype, copy=True)
    return TrainState(step=meta["step"], weights=weights, adam=adam,
                      b_cur=meta["b_cur"], d_cur=meta["d_cur"],
                      k_cur=meta["k_cur"], root_seed=meta["rng"]["root_seed"])


def load_weights(path: str | Path, model: ModelConfig) -> ModelWeights:
    """Just the model weights out of a checkpoint (for evaluation)."""
    tensors, meta = load_tensors(path)
    saved_model = meta.get("config", {}).get("model")
    if saved_model is not None and saved_model != model.to_dict():
        raise CheckpointError(
            f"checkpoint model config {saved_model} does not match {model.to_dict()}")
    weights = init_weights(model, seed=model.seed)
    for name, p in weights.params.items():
        key = "weights." + name
        if key not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor '{key}'")
        p.data = tensors[key].astype(p.data.dtype, copy=True)
    return weights


# -- the loop -------------------------------------------------------------------


def train(config: TrainConfig, out_dir: str | Path,
          resume_from: str | Path | None = None,
          log=None) -> TrainState:
    """Run (or resume) training; returns the final state.

    Writes metrics.jsonl and checkpoints/step_%06d under out_dir, plus a
    diagnostic checkpoint if the loss leaves the finite range.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"
    ckpt_root = out_dir / "checkpoints"

    if resume_from is not None:
        state = checkpoint_load(resume_from, config)
    else:
        weights = init_weights(config.model, seed=config.model.seed)
        adam = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                         eps=config.eps_adam)
        state = TrainState(step=0, weights=weights, adam=adam,
                           b_cur=schedule_step(config.schedule, 0),
                           d_cur=curriculum_step(0, config)[0],
                           k_cur=curriculum_step(0, config)[1],
                           root_seed=config.root_seed)

    limits = (threadpool_limits(config.blas_threads)
              if threadpool_limits is not None and config.blas_threads > 0
              else None)
    try:
        _train_loop(config, state, metrics_path, ckpt_root, log)
    finally:
        if limits is not None:
            limits.unregister()
    return state


def _train_loop(config: TrainConfig, state: TrainState, metrics_path: Path,
                ckpt_root: Path, log) -> None:
    weights = state.weights
    t_start = time.perf_counter()
    while state.step < config.steps:
        step = state.step
        b_cur = schedule_step(config.schedule, step)
        d_cur, k_cur = curriculum_step(step, config)
        state.b_cur, state.d_cur, state.k_cur = b_cur, d_cur, k_cur

        rng = derive_rng(state.root_seed, "batch", step)
        spec = config.task if d_cur == config.task.d and k_cur == config.task.k \
            else replace_spec(config.task, k=k_cur)
        batch = sample_prompt_batch(spec, config.batch_size, k_cur, rng,
                                    d_max=config.model.d_max,
                                    d_active=d_cur)
        try:
            loss = truncated_loss(weights, batch, config.schedule, b_cur)
            loss_val = loss.item()
        except en.NumericsError:
            loss_val = np.nan
        if not np.isfinite(loss_val):
            diag = ckpt_root / f"diverged_step_{step:06d}"
            checkpoint_save(state, config, diag)
            raise TrainingDiverged(step, diag)
        loss.backward()
        adam_update(weights.params, weights.grads(), state.adam)
        weights.zero_grad()
        state.loss_log.append((step, loss_val))
        state.step = step + 1

        if config.eval_every and state.step % config.eval_every == 0:
            record = evaluate(
                LoopedPredictor(weights, n_loop=b_cur,
                                injection=config.schedule.injection,
                                model_id="train"),
                config.task, config.eval_prompts,
                seed=derive_seed_for_eval(state.root_seed, state.step),
                d_max=config.model.d_max, n_bootstrap=config.n_bootstrap,
                step=state.step, d_cur=d_cur, k_cur=k_cur, b_cur=b_cur)
            append_jsonl(metrics_path, record)
            if log:
                log(f"step {state.step}: loss {loss_val:.4f} "
                    f"err@k {record.mean[-1]:.4f} b_cur {b_cur} "
                    f"({time.perf_counter() - t_start:.0f}s)")
        elif log and state.step % 500 == 0:
            log(f"step {state.step}: loss {loss_val:.4f} b_cur {b_cur}")

        if config.checkpoint_every and state.step % config.checkpoint_every == 0:
            checkpoint_save(state, config, ckpt_root / f"step_{state.step:06d}")

    checkpoint_save(state, config, ckpt_root / "final")


def derive_seed_for_eval(root_seed: int, step: int) -> int:
    from .rng import derive_seed
    return derive_seed(root_seed, "eval_pass", step) % (2 ** 31)


def replace_spec(spec: TaskSpec, **kw) -> TaskSpec:
    base = spec.to_dict()
    base.update(kw)
    return TaskSpec(**base)
