"""Command-line entry point.

Subcommands: synth-gen, train, eval, ablate, visualize, graph-stats,
gradcheck. Every failure path prints one machine-parsable line to stderr,
``error: <category>: <message>``, and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from augraph import config as kvconfig
from augraph import gradcheck, graph, network, train as training, visualize
from augraph.data import FoldSplit, load_dataset
from augraph.errors import AugraphError, ConfigError
from augraph.synth import SynthConfig, generate_synthetic
from augraph.train import TrainConfig, dataset_rules, evaluate_model, train_config_from_kv


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="augraph",
        description="Train and inspect the adaptive-region AU recognizer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config", help="key=value synthetic config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--subjects", type=int, help="override the subject count")
    p.add_argument("--frames", type=int, help="override frames per subject")

    p = sub.add_parser("train", help="train one preset over requested folds")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--preset", default=None, choices=sorted(network.PRESETS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", help="comma-separated fold indices (default: all)")
    p.add_argument("--threads", type=int)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fold", type=int, help="score this fold's test subjects only")
    p.add_argument("--fold-seed", type=int, default=0)
    p.add_argument("--num-folds", type=int, default=3)
    p.add_argument("--out", help="write the report JSON here (default stdout)")

    p = sub.add_parser("ablate", help="train the preset ladder and tabulate F1")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--presets", help="comma-separated preset names (default: all)")
    p.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("visualize", help="draw initial/refined box overlays")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=8, help="number of samples to draw")

    p = sub.add_parser("graph-stats", help="dump label statistics and adjacency")
    p.add_argument("--data", required=True)
    p.add_argument("--fold", type=int, help="restrict to this fold's training split")
    p.add_argument("--fold-seed", type=int, default=0)
    p.add_argument("--num-folds", type=int, default=3)
    p.add_argument("--p-pos", type=float, default=graph.DEFAULT_EDGE_THRESHOLD)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--out", help="write the dump here (default stdout)")

    p = sub.add_parser("gradcheck", help="run the derivative verification suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--op", help="run a single registered check")

    return parser


def _cmd_synth_gen(args) -> int:
    cfg = SynthConfig.from_file(args.config) if args.config else SynthConfig()
    overrides = {
        k: v
        for k, v in (("seed", args.seed), ("subjects", args.subjects), ("frames", args.frames))
        if v is not None
    }
    if overrides:
        kv = cfg.to_kv()
        kv.update(overrides)
        cfg = SynthConfig.from_kv({k: kvconfig._format_value(v) for k, v in kv.items()})
    summary = generate_synthetic(cfg, args.out)
    print(json.dumps(summary, indent=2))
    return 0


def _train_config(args, need_out: bool = True) -> TrainConfig:
    raw = kvconfig.parse_kv_file(args.config) if args.config else {}
    extra = {"data_dir": args.data, "out_dir": args.out if need_out else "."}
    for key in ("preset", "epochs", "seed", "threads"):
        value = getattr(args, key, None)
        if value is not None:
            extra[key] = value
    if getattr(args, "quiet", False):
        extra["quiet"] = True
    if getattr(args, "folds", None):
        extra["folds"] = tuple(kvconfig.as_int_list(args.folds, "folds"))
    return train_config_from_kv(raw, **extra)


def _cmd_train(args) -> int:
    record = training.train_run(_train_config(args))
    print(f"mean F1 over folds: {record.mean_f1:.4f}")
    print(f"run record: {Path(args.out) / 'run_record.json'}")
    return 0


def _cmd_eval(args) -> int:
    model = network.load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    if dataset.num_aus != model.config.num_aus:
        raise ConfigError(
            f"checkpoint expects num_aus={model.config.num_aus} but the dataset "
            f"has {dataset.num_aus} (field: num_aus)"
        )
    if args.fold is not None:
        split = FoldSplit.build(dataset, k=args.num_folds, seed=args.fold_seed)
        if not 0 <= args.fold < split.k:
            raise ConfigError(f"fold must lie in [0, {split.k}), got {args.fold}")
        indices = split.test_indices[args.fold]
    else:
        indices = np.arange(len(dataset))
    report, _ = evaluate_model(model, dataset, indices, dataset_rules(dataset))
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"report: {args.out}")
    else:
        print(text)
    return 0


def _cmd_ablate(args) -> int:
    cfg = _train_config(args)
    presets = args.presets.split(",") if args.presets else None
    seeds = kvconfig.as_int_list(args.seeds, "seeds") if args.seeds else None
    result = training.ablate_run(cfg, presets=presets, seeds=seeds)
    print(training.format_ablation_table(result))
    print(f"table: {Path(args.out) / 'ablation.json'}")
    return 0


def _cmd_visualize(args) -> int:
    model = network.load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    if dataset.num_aus != model.config.num_aus:
        raise ConfigError(
            f"checkpoint expects num_aus={model.config.num_aus} but the dataset "
            f"has {dataset.num_aus} (field: num_aus)"
        )
    indices = np.arange(min(args.samples, len(dataset)))
    result = visualize.visualize(
        model, dataset, indices, args.out, dataset_rules(dataset)
    )
    print(f"wrote {len(result['overlays'])} overlays to {args.out}")
    if "iou" in result:
        print(f"iou report: {Path(args.out) / 'iou_report.json'}")
    return 0


def _matrix_dump(name: str, matrix: np.ndarray) -> list[str]:
    lines = [f"{name} ({matrix.shape[0]}x{matrix.shape[1]}):"]
    for row in np.asarray(matrix):
        lines.append("  " + " ".join(f"{v:.4f}" for v in row))
    return lines


def _cmd_graph_stats(args) -> int:
    dataset = load_dataset(args.data)
    if args.fold is not None:
        split = FoldSplit.build(dataset, k=args.num_folds, seed=args.fold_seed)
        indices = split.train_indices[args.fold]
    else:
        indices = np.arange(len(dataset))
    labels = dataset.labels_matrix(indices)
    stats = graph.cooccurrence(labels)
    a0 = graph.build_intra(stats, p_pos=args.p_pos)
    adjacency = graph.build_multilevel(a0, levels=args.levels)
    c = a0.shape[0]
    lines = []
    lines += _matrix_dump("conditional probabilities P(i|j)", stats.prob)
    lines += _matrix_dump("intra-level adjacency", a0.astype(float))
    lines += _matrix_dump("multi-level adjacency", adjacency.astype(float))
    intra_edges = int(a0.sum() - c)
    lines.append(
        f"summary: {c} AUs, {intra_edges} intra edges (off-diagonal), "
        f"{int(adjacency.sum())} total connections over {args.levels} levels"
    )
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"dump: {args.out}")
    else:
        print(text)
    return 0


def _cmd_gradcheck(args) -> int:
    if args.op:
        reports = [gradcheck.gradient_check(args.op, seed=args.seed)]
    else:
        reports = gradcheck.run_suite(seed=args.seed)
    failed = False
    for report in reports:
        print(report.summary())
        failed = failed or not report.passed
    if failed:
        print("gradient suite FAILED", file=sys.stderr)
        return 1
    print(f"all {len(reports)} checks passed")
    return 0


_COMMANDS = {
    "synth-gen": _cmd_synth_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "visualize": _cmd_visualize,
    "graph-stats": _cmd_graph_stats,
    "gradcheck": _cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except AugraphError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
