"""Experiment driver.

Every command works inside its own run directory under --out: a config
snapshot, metrics JSONL, checkpoints, then a DONE sentinel. Completed
run directories are treated as immutable; rerunning into one fails.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

from .config import OOD_SUITES, ConfigError, ExperimentConfig, parse_config
from .checkpoint import CheckpointError
from .evalsuite import (LoopedPredictor, append_jsonl, evaluate, loop_sweep,
                        read_jsonl)
from .openml import DatasetError, eval_accuracy, load_data_dir
from .probe import ProbeConfig, average_over_context, probe_sweep
from .tasks import TaskSpec
from .trainer import TrainingDiverged, load_weights, train

COMMANDS = ("train", "eval", "sweep-loop", "ood", "probe", "openml", "compare")


class CliError(Exception):
    pass


def _run_dir(out: str, config: ExperimentConfig, command: str) -> Path:
    run = Path(out) / f"{config.run_name}-{command}"
    if (run / "DONE").exists():
        raise CliError(f"run directory {run} is already complete (DONE present)")
    run.mkdir(parents=True, exist_ok=True)
    with open(run / "config.json", "w") as f:
        json.dump(config.dump(), f, indent=2, sort_keys=True)
        f.write("\n")
    return run


def _finish(run: Path) -> None:
    (run / "DONE").write_text(time.strftime("%Y-%m-%dT%H:%M:%S\n"))


def _load_checkpoint_weights(args, config: ExperimentConfig):
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise CliError(f"checkpoint not found: {ckpt}")
    return load_weights(ckpt, config.model)


def cmd_train(args, config: ExperimentConfig) -> int:
    run = _run_dir(args.out, config, "train")
    log = (lambda msg: print(msg, flush=True)) if not args.quiet else None
    train(config.train, run, resume_from=args.resume, log=log)
    _finish(run)
    print(f"run complete: {run}")
    return 0


def cmd_eval(args, config: ExperimentConfig) -> int:
    run = _run_dir(args.out, config, "eval")
    weights = _load_checkpoint_weights(args, config)
    ev = config.data["eval"]
    pred = LoopedPredictor(weights, n_loop=config.schedule.b,
                           injection=config.schedule.injection,
                           model_id=config.run_name)
    rec = evaluate(pred, config.task, ev["n_prompts"], seed=config.seed,
                   d_max=config.model.d_max, n_bootstrap=ev["n_bootstrap"],
                   level=ev["level"], batch_size=ev["batch_size"])
    append_jsonl(run / "metrics.jsonl", rec)
    _finish(run)
    print(f"error at k={config.task.k}: {rec.mean[-1]:.6f} "
          f"[{rec.ci_lo[-1]:.6f}, {rec.ci_hi[-1]:.6f}]")
    return 0


def cmd_sweep_loop(args, config: ExperimentConfig) -> int:
    run = _run_dir(args.out, config, "sweep-loop")
    weights = _load_checkpoint_weights(args, config)
    sw = config.data["sweep"]
    t_max = args.t_max or sw["t_max"]
    pred = LoopedPredictor(weights, n_loop=config.schedule.b,
                           injection=config.schedule.injection,
                           model_id=config.run_name)
    rec = loop_sweep(pred, config.task, t_max, sw["n_prompts"],
                     seed=config.seed, d_max=config.model.d_max,
                     n_bootstrap=config.data["eval"]["n_bootstrap"],
                     trained_b=config.schedule.b)
    append_jsonl(run / "metrics.jsonl", rec)
    _finish(run)
    print(f"error(b={config.schedule.b}): {rec.mean[config.schedule.b - 1]:.6f}; "
          f"error(t={t_max}): {rec.mean[-1]:.6f}")
    return 0


def cmd_ood(args, config: ExperimentConfig) -> int:
    run = _run_dir(args.out, config, "ood")
    weights = _load_checkpoint_weights(args, config)
    suite_name = args.suite or config.data["ood"]["suite"]
    if suite_name not in OOD_SUITES:
        raise CliError(f"unknown OOD suite '{suite_name}' (have {sorted(OOD_SUITES)})")
    n = config.data["ood"]["n_prompts"]
    ev = config.data["eval"]
    pred = LoopedPredictor(weights, n_loop=config.schedule.b,
                           injection=config.schedule.injection,
                           model_id=config.run_name)
    base = evaluate(pred, config.task, n, seed=config.seed,
                    d_max=config.model.d_max, n_bootstrap=ev["n_bootstrap"])
    append_jsonl(run / "metrics.jsonl", base)
    for tr in OOD_SUITES[suite_name]:
        spec = config.task
        if tr.kind == "orthogonal_query" and spec.k >= spec.d:
            # the orthogonal complement is empty once the context spans R^d
            spec = TaskSpec("linear", d=spec.d, k=spec.d - 1) if spec.d > 1 else None
            if spec is None:
                print(f"skipping {tr.kind}: needs d > 1")
                continue
        rec = evaluate(pred, spec, n, seed=config.seed, transform=tr,
                       d_max=config.model.d_max, n_bootstrap=ev["n_bootstrap"])
        append_jsonl(run / "metrics.jsonl", rec)
        print(f"{tr.kind:<22} error@k {rec.mean[-1]:.4f}")
    _finish(run)
    return 0


def cmd_probe(args, config: ExperimentConfig) -> int:
    run = _run_dir(args.out, config, "probe")
    weights = _load_checkpoint_weights(args, config)
    p = config.data["probe"]
    target = args.target or p["target"]
    cfg = ProbeConfig(target=target, hidden=p["hidden"], lr=p["lr"],
                      steps=p["steps"], control_task=args.control or p["control"],
                      seed=config.seed)
    iterations = [t for t in p["iterations"] if t <= config.schedule.b]
    context_lengths = [i for i in p["context_lengths"] if i <= config.task.k]
    cells = probe_sweep(weights, config.task, cfg, iterations, context_lengths,
                        n_train=p["n_train"], n_test=p["n_test"],
                        injection=config.schedule.injection)
    results = {
        "target": target,
        "control": cfg.control_task,
        "cells": [{"t": c.t, "i": c.i, **asdict(c.result)} for c in cells],
        "mse_by_iteration": average_over_context(cells),
    }
    with open(run / "probe_results.json", "w") as f:
        json.dump(results, f, indent=2, sort_keys=True)
        f.write("\n")
    _finish(run)
    for t, mse in results["mse_by_iteration"].items():
        print(f"iteration {t}: probe MSE/d {mse:.5f}")
    return 0


def cmd_openml(args, config: ExperimentConfig) -> int:
    run = _run_dir(args.out, config, "openml")
    om = config.data["openml"]
    test_id = args.test_id or om["test_id"]
    if not test_id:
        raise CliError("openml requires --test-id (or openml.test_id in config)")
    datasets = load_data_dir(om["data_dir"], d_max=om["d_max"])
    ids = [ds.id for ds in datasets]
    if test_id not in ids:
        raise CliError(f"test dataset '{test_id}' not in {ids}")
    test_index = ids.index(test_id)

    from .openml import classification_batch
    from .loop import truncated_loss
    from .model import ModelConfig, init_weights
    from .optim import AdamState, adam_update
    from .rng import derive_rng

    model_cfg = ModelConfig(d_embed=config.model.d_embed, heads=config.model.heads,
                            layers=config.model.layers, d_max=om["d_max"],
                            k_max=max(config.model.k_max, om["k"]),
                            seed=config.model.seed)
    weights = init_weights(model_cfg)
    adam = AdamState(lr=config.train.lr)
    for step in range(om["steps"]):
        batch = classification_batch(datasets, config.train.batch_size, om["k"],
                                     derive_rng(config.seed, "openml_batch", step),
                                     d_max=om["d_max"], exclude_index=test_index)
        loss = truncated_loss(weights, batch, config.schedule)
        loss.backward()
        adam_update(weights.params, weights.grads(), adam)
        weights.zero_grad()
    pred = LoopedPredictor(weights, n_loop=config.schedule.b,
                           injection=config.schedule.injection,
                           model_id=config.run_name)
    acc, ci = eval_accuracy(pred, datasets[test_index], om["k"], om["n_prompts"],
                            seed=config.seed, d_max=om["d_max"])
    result = {"test_id": test_id, "accuracy": acc, "ci_lo": ci[0], "ci_hi": ci[1],
              "k": om["k"], "n_prompts": om["n_prompts"], "train_steps": om["steps"]}
    with open(run / "accuracy.json", "w") as f:
        json.dump(result, f, indent=2, sort_keys=True)
        f.write("\n")
    _finish(run)
    print(f"accuracy on {test_id}: {acc:.3f} [{ci[0]:.3f}, {ci[1]:.3f}]")
    return 0


def cmd_compare(args, config_unused) -> int:
    out = Path(args.out) / "compare"
    if (out / "DONE").exists():
        raise CliError(f"run directory {out} is already complete (DONE present)")
    out.mkdir(parents=True, exist_ok=True)
    recs_a = read_jsonl(args.file_a)
    recs_b = read_jsonl(args.file_b)
    lines = ["| source | model | kind | task | last-axis error | CI |",
             "|---|---|---|---|---|---|"]
    merged = []
    for src, recs in ((args.file_a, recs_a), (args.file_b, recs_b)):
        for r in recs:
            lines.append(
                f"| {Path(src).name} | {r.model_id} | {r.kind} | "
                f"{r.task.get('kind', '?')} d={r.task.get('d', '?')} | "
                f"{r.mean[-1]:.6g} | [{r.ci_lo[-1]:.6g}, {r.ci_hi[-1]:.6g}] |")
            merged.append(r)
    (out / "comparison.md").write_text("\n".join(lines) + "\n")
    for r in merged:
        append_jsonl(out / "merged.jsonl", r)
    _finish(out)
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="looplab",
        description="train and probe looped in-context learners at desk scale")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("-c", "--config", required=True, help="JSON config file")
            p.add_argument("--set", dest="overrides", action="append", default=[],
                           metavar="KEY.PATH=VALUE", help="override a scalar leaf")
        p.add_argument("--out", default="runs", help="root for run directories")

    p = sub.add_parser("train", help="train a looped model")
    common(p)
    p.add_argument("--resume", default=None, help="checkpoint dir to resume from")
    p.add_argument("--quiet", action="store_true")

    for name, extra in (("eval", ()), ("sweep-loop", ("--t-max",)),
                        ("ood", ("--suite",)), ("probe", ("--target", "--control"))):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--checkpoint", required=True, help="checkpoint directory")
        if "--t-max" in extra:
            p.add_argument("--t-max", type=int, default=None)
        if "--suite" in extra:
            p.add_argument("--suite", default=None, choices=sorted(OOD_SUITES))
        if "--target" in extra:
            p.add_argument("--target", default=None, choices=("xty", "wols"))
            p.add_argument("--control", action="store_true")

    p = sub.add_parser("openml", help="leave-one-dataset-out classification")
    common(p)
    p.add_argument("--test-id", default=None)

    p = sub.add_parser("compare", help="merge two metrics files into a table")
    p.add_argument("file_a")
    p.add_argument("file_b")
    common(p, needs_config=False)
    return ap


_HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-loop": cmd_sweep_loop,
    "ood": cmd_ood,
    "probe": cmd_probe,
    "openml": cmd_openml,
    "compare": cmd_compare,
}


def dispatch(command: str, args, config: ExperimentConfig | None) -> int:
    return _HANDLERS[command](args, config)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = None
        if args.command != "compare":
            config = parse_config(args.config, args.overrides)
        return dispatch(args.command, args, config)
    except (CliError, ConfigError, CheckpointError, DatasetError,
            TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
