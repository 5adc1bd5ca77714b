"""Experiment configuration: one JSON document per run, schema-validated
with precise error paths, unknown keys rejected, defaults filled so the
echo-dump of any accepted config is itself valid."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any

from .loop import LoopSchedule
from .model import ModelConfig
from .tasks import OodTransform, TaskSpec
from .trainer import CurriculumConfig, TrainConfig

SEED_ENV_VAR = "LOOPLAB_ROOT_SEED"


class ConfigError(Exception):
    """Invalid experiment config; message names the offending key path."""


# leaf spec: (expected types, default); _REQUIRED means must be present
_REQUIRED = object()

_SCHEMA: dict[str, Any] = {
    "run_name": (str, _REQUIRED),
    "seed": (int, 0),
    "model": {
        "d_embed": (int, 64),
        "heads": (int, 4),
        "layers": (int, 1),
        "d_max": (int, 5),
        "k_max": (int, 12),
        "seed": (int, 0),
    },
    "loop": {
        "b": (int, 12),
        "T": (int, 8),
        "ramp": (str, "linear"),
        "ramp_interval": (int, 1000),
        "injection": (str, "input_injection"),
    },
    "task": {
        "kind": (str, "linear"),
        "d": (int, 5),
        "k": (int, 12),
        "s": (int, 1),
        "sigma": ((int, float), 0.0),
        "depth": (int, 4),
        "hidden": (int, 100),
    },
    "train": {
        "steps": (int, 20_000),
        "batch_size": (int, 64),
        "lr": ((int, float), 1e-4),
        "beta1": ((int, float), 0.9),
        "beta2": ((int, float), 0.999),
        "eps_adam": ((int, float), 1e-8),
        "eval_every": (int, 2000),
        "eval_prompts": (int, 256),
        "checkpoint_every": (int, 5000),
        "n_bootstrap": (int, 1000),
        "blas_threads": (int, 1),
        "curriculum": {
            "enabled": (bool, False),
            "d_start": (int, 5),
            "k_rule": (str, "2d+1"),
            "step_interval": (int, 2000),
        },
    },
    "eval": {
        "n_prompts": (int, 1280),
        "n_bootstrap": (int, 1000),
        "level": ((int, float), 0.90),
        "batch_size": (int, 256),
    },
    "sweep": {
        "t_max": (int, 36),
        "n_prompts": (int, 256),
    },
    "ood": {
        "suite": (str, "core"),
        "n_prompts": (int, 512),
    },
    "probe": {
        "target": (str, "xty"),
        "hidden": (int, 64),
        "lr": ((int, float), 1e-3),
        "steps": (int, 1500),
        "control": (bool, False),
        "iterations": (list, [1, 4, 8, 12]),
        "context_lengths": (list, [4, 8, 12]),
        "n_train": (int, 512),
        "n_test": (int, 256),
    },
    "openml": {
        "data_dir": (str, "data"),
        "k": (int, 8),
        "d_max": (int, 20),
        "test_id": (str, ""),
        "steps": (int, 1000),
        "n_prompts": (int, 256),
    },
}

# named OOD suites (section 5.2 trio; the appendix adds the rest)
OOD_SUITES: dict[str, list[OodTransform]] = {
    "core": [
        OodTransform("skewed_covariance"),
        OodTransform("noisy_output", sigma=1.0),
        OodTransform("scale_x", c=3.0),
    ],
    "extended": [
        OodTransform("skewed_covariance"),
        OodTransform("half_subspace"),
        OodTransform("noisy_output", sigma=1.0),
        OodTransform("orthogonal_query"),
        OodTransform("duplicate_query"),
        OodTransform("different_orthants"),
        OodTransform("scale_x", c=1 / 3),
        OodTransform("scale_x", c=0.5),
        OodTransform("scale_x", c=2.0),
        OodTransform("scale_x", c=3.0),
        OodTransform("scale_w", c=1 / 3),
        OodTransform("scale_w", c=0.5),
        OodTransform("scale_w", c=2.0),
        OodTransform("scale_w", c=3.0),
    ],
}


def _validate_node(data: Any, schema: Any, path: str, out: dict) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    for key in data:
        if key not in schema:
            raise ConfigError(f"unknown key '{(path + '.' if path else '') + key}'")
    for key, spec in schema.items():
        kpath = (path + "." if path else "") + key
        if isinstance(spec, dict):
            out[key] = {}
            _validate_node(data.get(key, {}), spec, kpath, out[key])
            continue
        types, default = spec
        if key in data:
            val = data[key]
            if isinstance(val, bool) and not (types is bool or (isinstance(types, tuple) and bool in types)):
                raise ConfigError(f"'{kpath}': expected {_type_name(types)}, got bool")
            if not isinstance(val, types):
                raise ConfigError(
                    f"'{kpath}': expected {_type_name(types)}, got {type(val).__name__}")
            out[key] = val
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key '{kpath}'")
        else:
            out[key] = copy.deepcopy(default)


def _type_name(types) -> str:
    if isinstance(types, tuple):
        return " or ".join(t.__name__ for t in types)
    return types.__name__


class ExperimentConfig:
    """Validated union of all per-command settings plus typed views."""

    def __init__(self, raw: dict):
        self.data: dict = {}
        _validate_node(raw, _SCHEMA, "", self.data)
        if os.environ.get(SEED_ENV_VAR):
            try:
                self.data["seed"] = int(os.environ[SEED_ENV_VAR])
            except ValueError as e:
                raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from e
        self._build_typed()

    def _build_typed(self) -> None:
        d = self.data
        try:
            self.task = TaskSpec(**{k: v for k, v in d["task"].items()
                                    if k in ("kind", "d", "k") or _task_param(d["task"]["kind"], k)})
            self.model = ModelConfig(**d["model"])
            self.schedule = LoopSchedule(**d["loop"])
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if d["loop"]["T"] > d["loop"]["b"]:
            raise ConfigError("'loop.T' must be <= 'loop.b'")
        tr = d["train"]
        try:
            self.train = TrainConfig(
                task=self.task, model=self.model, schedule=self.schedule,
                curriculum=CurriculumConfig(**tr["curriculum"]),
                steps=tr["steps"], batch_size=tr["batch_size"], lr=tr["lr"],
                beta1=tr["beta1"], beta2=tr["beta2"], eps_adam=tr["eps_adam"],
                eval_every=tr["eval_every"], eval_prompts=tr["eval_prompts"],
                checkpoint_every=tr["checkpoint_every"],
                n_bootstrap=tr["n_bootstrap"], root_seed=d["seed"],
                blas_threads=tr["blas_threads"])
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if d["ood"]["suite"] not in OOD_SUITES:
            raise ConfigError(
                f"'ood.suite' must be one of {sorted(OOD_SUITES)}, got {d['ood']['suite']!r}")

    @property
    def run_name(self) -> str:
        return self.data["run_name"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def dump(self) -> dict:
        return copy.deepcopy(self.data)


def _task_param(kind: str, key: str) -> bool:
    return {"sparse_linear": ("s",), "noisy_linear": ("sigma",),
            "decision_tree": ("depth",), "relu_nn": ("hidden",)}.get(kind, ()) \
        .__contains__(key)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply dotted-path scalar overrides like train.lr=0.001."""
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' must look like key.path=value")
        key, _, val = item.partition("=")
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override '{key}' descends into a scalar")
        node[parts[-1]] = _parse_scalar(val)
    return out


def _parse_scalar(val: str) -> Any:
    low = val.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(val)
    except ValueError:
        pass
    try:
        return float(val)
    except ValueError:
        pass
    return val


def parse_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if overrides:
        raw = apply_overrides(raw, overrides)
    return ExperimentConfig(raw)
