"""Command-line surface for reproducible experiments.

Subcommands: gen-data, train, eval, baseline, compare, trace-search, plot.
Every command accepts --seed, --config (JSON overrides), and --out; each
run writes its fully resolved configuration next to its outputs.  Outputs
are byte-identical across reruns with the same seed and config.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import baseline as baseline_mod
from .datagen import GenConfig, default_test_config, default_train_config, write_generated
from .dataio import Example, read_dataset, write_json
from .orders import Program, execute
from .model import load_params, save_params
from .search import BeamConfig, ExploredSet, ProgramCache
from .training import (
    TrainConfig,
    VARIANTS,
    evaluate,
    run_training,
    write_metrics_csv,
    write_rounds_csv,
)


class CliError(Exception):
    pass


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    return json.loads(p.read_text(encoding="utf-8"))


def _apply_overrides(defaults, overrides: dict, label: str):
    field_names = {f.name for f in dataclasses.fields(defaults)}
    unknown = set(overrides) - field_names
    if unknown:
        raise CliError(f"unknown {label} config keys: {sorted(unknown)}")
    coerced = dict(overrides)
    if "mixture" in coerced:
        coerced["mixture"] = tuple(coerced["mixture"])
    return dataclasses.replace(defaults, **coerced)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(out: Path, payload: dict) -> None:
    write_json(out / "config.json", payload)


def _config_dict(cfg) -> dict:
    data = dataclasses.asdict(cfg)
    if "mixture" in data:
        data["mixture"] = list(data["mixture"])
    return data


def _require_dataset(path: str) -> list[Example]:
    p = Path(path)
    if not p.exists():
        raise CliError(f"dataset not found: {p}")
    return read_dataset(p)


def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    overrides = _load_config_file(args.config)
    cfg_train = _apply_overrides(default_train_config(seed=args.seed),
                                 overrides.get("train", {}), "train generator")
    cfg_test = _apply_overrides(default_test_config(seed=args.seed),
                                overrides.get("test", {}), "test generator")
    stats = write_generated(out, cfg_train, cfg_test)
    _write_resolved(out, {"command": "gen-data", "seed": args.seed,
                          "train": _config_dict(cfg_train),
                          "test": _config_dict(cfg_test)})
    print(f"wrote {stats['train']['sessions']} train and "
          f"{stats['test']['sessions']} test sessions to {out}")
    return 0


def _train_config(args, overrides: dict) -> TrainConfig:
    cfg = TrainConfig(seed=args.seed)
    cfg = _apply_overrides(cfg, overrides, "training")
    updates = {}
    if getattr(args, "variant", None):
        updates["variant"] = args.variant
    if getattr(args, "epochs", None) is not None:
        updates["epochs"] = args.epochs
    updates["seed"] = args.seed
    return dataclasses.replace(cfg, **updates)


def _run_one_training(examples, cfg: TrainConfig, out: Path) -> dict:
    result = run_training(examples, cfg)
    save_params(out / "model.npz", result.params)
    save_params(out / "final_model.npz", result.final_params)
    write_metrics_csv(out / "metrics.csv", result.metrics)
    if cfg.use_bandit:
        write_rounds_csv(out / "curriculum.csv", result.rounds)
    summary = {
        "variant": cfg.variant,
        "seed": cfg.seed,
        "epochs_run": len(result.metrics),
        "best_epoch": result.best_epoch,
        "best_train_accuracy": result.best_train_accuracy,
        "final_train_accuracy": result.metrics[-1].train_accuracy,
        "skipped_examples": result.skipped_examples,
    }
    write_json(out / "summary.json", summary)
    return summary


def cmd_train(args) -> int:
    out = _out_dir(args)
    overrides = _load_config_file(args.config)
    cfg = _train_config(args, overrides)
    examples = _require_dataset(args.data)
    _write_resolved(out, {"command": "train", "data": args.data,
                          "training": _config_dict(cfg)})
    summary = _run_one_training(examples, cfg, out)
    print(f"variant={cfg.variant} seed={cfg.seed} "
          f"best_train_accuracy={summary['best_train_accuracy']:.4f} "
          f"epochs={summary['epochs_run']}")
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise CliError(f"checkpoint not found: {checkpoint}")
    examples = _require_dataset(args.data)
    params = load_params(checkpoint)
    report = evaluate(examples, params, beam_width=args.beam_width)
    payload = {
        "accuracy": report.accuracy,
        "per_task": report.per_task,
        "n_examples": report.n_examples,
        "n_undecodable": report.n_undecodable,
    }
    write_json(out / "eval.json", payload)
    _write_resolved(out, {"command": "eval", "data": args.data,
                          "checkpoint": str(checkpoint), "seed": args.seed,
                          "beam_width": args.beam_width})
    print(f"accuracy={report.accuracy:.4f} on {report.n_examples} examples")
    return 0


def cmd_baseline(args) -> int:
    out = _out_dir(args)
    examples = _require_dataset(args.data)
    correct = 0
    rows = []
    for example in examples:
        program = baseline_mod.parse_with_disfluency_removal(example.tags)
        match = execute(program) == example.target
        correct += int(match)
        rows.append({"id": example.id, "program": program.to_text(),
                     "correct": match})
    accuracy = correct / len(examples) if examples else float("nan")
    with (out / "baseline_predictions.jsonl").open("w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, sort_keys=True) + "\n")
    write_json(out / "baseline_eval.json",
               {"accuracy": accuracy, "n_examples": len(examples)})
    _write_resolved(out, {"command": "baseline", "data": args.data,
                          "seed": args.seed})
    print(f"baseline accuracy={accuracy:.4f} on {len(examples)} examples")
    return 0


def _parse_seeds(raw: str) -> list[int]:
    try:
        return [int(part) for part in raw.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise CliError(f"bad seed list {raw!r}") from exc


def cmd_compare(args) -> int:
    out = _out_dir(args)
    overrides = _load_config_file(args.config)
    data_dir = Path(args.data_dir)
    train_examples = _require_dataset(data_dir / "train.jsonl")
    test_examples = _require_dataset(data_dir / "test.jsonl")
    seeds = _parse_seeds(args.seeds)

    base_cfg = _train_config(args, overrides.get("training", {}))

    rows = []
    baseline_train = _baseline_accuracy(train_examples)
    baseline_test = _baseline_accuracy(test_examples)
    for seed in seeds:
        rows.append({"model": "pipelined", "seed": seed,
                     "train_accuracy": baseline_train,
                     "test_accuracy": baseline_test})
    for variant in ("sbs_uni", "sbs", "uni", "full"):
        for seed in seeds:
            cfg = dataclasses.replace(base_cfg, variant=variant, seed=seed)
            run_dir = out / "runs" / f"{variant}_s{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            summary = _run_one_training(train_examples, cfg, run_dir)
            params = load_params(run_dir / "model.npz")
            test_report = evaluate(test_examples, params,
                                   beam_width=cfg.beam_width,
                                   max_steps=cfg.max_steps,
                                   max_tokens=cfg.max_tokens)
            rows.append({"model": variant, "seed": seed,
                         "train_accuracy": summary["best_train_accuracy"],
                         "test_accuracy": test_report.accuracy})

    with (out / "compare.csv").open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["model", "seed", "train_accuracy", "test_accuracy"])
        for row in rows:
            writer.writerow([row["model"], row["seed"],
                             f"{row['train_accuracy']:.12g}",
                             f"{row['test_accuracy']:.12g}"])

    report_text = _comparison_report(rows, seeds)
    (out / "report.txt").write_text(report_text, encoding="utf-8")
    _write_resolved(out, {"command": "compare", "data_dir": str(data_dir),
                          "seeds": seeds, "training": _config_dict(base_cfg)})
    print(report_text, end="")
    return 0


def _baseline_accuracy(examples) -> float:
    correct = sum(
        1 for e in examples
        if execute(baseline_mod.parse_with_disfluency_removal(e.tags)) == e.target)
    return correct / len(examples)


_MODEL_ORDER = ("pipelined", "sbs_uni", "sbs", "uni", "full")


def _comparison_report(rows, seeds) -> str:
    means = {}
    for model in _MODEL_ORDER:
        model_rows = [r for r in rows if r["model"] == model]
        means[model] = (float(np.mean([r["train_accuracy"] for r in model_rows])),
                        float(np.mean([r["test_accuracy"] for r in model_rows])))
    lines = ["model        train    test", "-" * 30]
    for model in _MODEL_ORDER:
        train_acc, test_acc = means[model]
        lines.append(f"{model:<12} {train_acc:6.1%}  {test_acc:6.1%}")
    lines.append("-" * 30)
    if means["sbs_uni"][1] > 0:
        gain = (means["uni"][1] - means["sbs_uni"][1]) / means["sbs_uni"][1]
        lines.append(f"memory search vs standard beam (no curriculum): "
                     f"{gain:+.1%} relative test accuracy")
    if means["uni"][1] > 0:
        gain = (means["full"][1] - means["uni"][1]) / means["uni"][1]
        lines.append(f"curriculum vs uniform (with memory search): "
                     f"{gain:+.1%} relative test accuracy")
    lines.append(f"seeds: {','.join(str(s) for s in seeds)}")
    return "\n".join(lines) + "\n"


def cmd_trace_search(args) -> int:
    out = _out_dir(args)
    overrides = _load_config_file(args.config)
    examples = _require_dataset(args.data)
    if not any(e.id == args.turn_id for e in examples):
        raise CliError(f"unknown turn id {args.turn_id!r}")
    base_cfg = _train_config(args, overrides.get("training", {}))

    from .model import TurnScorer, init_params  # local: keeps module import light
    from .search import rbsma_search
    from .training import TASK_NAMES  # noqa: F401

    rows = []
    for variant in ("sbs_uni", "sbs", "uni", "full"):
        cfg = dataclasses.replace(base_cfg, variant=variant,
                                  stop_at_perfect_train=False)
        result = run_training(examples, cfg)
        for metric in result.metrics:
            rows.append([variant, metric.epoch,
                         f"{metric.train_accuracy:.12g}"])
    with (out / "exploration.csv").open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["variant", "epoch", "train_accuracy"])
        writer.writerows(rows)

    # per-step search trace for the requested turn under fresh parameters
    turn = next(e for e in examples if e.id == args.turn_id)
    cfg = dataclasses.replace(base_cfg, variant="full")
    params = init_params(cfg.seed, cfg.model_dims())
    memory = ExploredSet()
    cache = ProgramCache(cfg.cache_size)
    rng = np.random.default_rng(cfg.seed)
    trace_rows = []
    explored_sizes = []
    for call in range(args.calls):
        trace: list[dict] = []
        rbsma_search(turn.tags, turn.target, params, cfg.search_config(),
                     memory, cache, rng=rng, trace=trace)
        for record in trace:
            trace_rows.append({"call": call + 1, **record})
        explored_sizes.append(len(memory))
    with (out / f"trace_{args.turn_id}.jsonl").open("w", encoding="utf-8") as handle:
        for record in trace_rows:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    write_json(out / "trace_summary.json",
               {"turn_id": args.turn_id, "calls": args.calls,
                "explored_prefixes_after_each_call": explored_sizes,
                "cache_best_raw": cache.best_raw})
    _write_resolved(out, {"command": "trace-search", "data": args.data,
                          "turn_id": args.turn_id, "calls": args.calls,
                          "training": _config_dict(base_cfg)})
    print(f"traced {args.calls} searches on {args.turn_id}; "
          f"explored prefixes: {explored_sizes[-1]}")
    return 0


def cmd_plot(args) -> int:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise CliError("plotting requires matplotlib (install the 'plots' extra)") from exc
    run_dir = Path(args.run)
    out = _out_dir(args)
    metrics_path = run_dir / "metrics.csv"
    if not metrics_path.exists():
        raise CliError(f"no metrics.csv under {run_dir}")
    with metrics_path.open(encoding="utf-8") as handle:
        metrics = list(csv.DictReader(handle))
    epochs = [int(r["epoch"]) for r in metrics]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [float(r["train_accuracy"]) for r in metrics], label="train")
    ax.plot(epochs, [float(r["easy_accuracy"]) for r in metrics], label="easy task")
    ax.plot(epochs, [float(r["hard_accuracy"]) for r in metrics], label="hard task")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "accuracy.png", dpi=120)
    curriculum_path = run_dir / "curriculum.csv"
    if curriculum_path.exists():
        with curriculum_path.open(encoding="utf-8") as handle:
            rounds = list(csv.DictReader(handle))
        fig, ax = plt.subplots(figsize=(7, 4))
        xs = [int(r["round"]) for r in rounds]
        ax.plot(xs, [float(r["pi_easy"]) for r in rounds], label="pi(easy)")
        ax.plot(xs, [float(r["pi_hard"]) for r in rounds], label="pi(hard)")
        ax.set_xlabel("round")
        ax.set_ylabel("policy probability")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "policy.png", dpi=120)
    print(f"plots written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="turnslu",
                                     description="weakly supervised turn-level "
                                                 "order understanding experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="JSON config overrides")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="generate the synthetic datasets")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one variant")
    common(p)
    p.add_argument("--data", required=True, help="training dataset (jsonl)")
    p.add_argument("--variant", choices=sorted(VARIANTS), default="full")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--beam-width", type=int, default=40)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="run the rule-based pipeline")
    common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("compare", help="train all variants plus the baseline")
    common(p)
    p.add_argument("--data-dir", required=True,
                   help="directory holding train.jsonl and test.jsonl")
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("trace-search", help="exploration curves and a per-turn trace")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--turn-id", required=True)
    p.add_argument("--calls", type=int, default=10,
                   help="searches to trace on the chosen turn")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_trace_search)

    p = sub.add_parser("plot", help="render metric curves to png")
    common(p)
    p.add_argument("--run", required=True, help="directory of a train run")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
