#!/usr/bin/env python3
# MIT License
"""Main program module for path-gcn: train and evaluate pathGCN node
classifiers on graph bundles, verify the path convolution numerically, dump
effective kernels and time the model.

After importing, call `main.main()` to execute the program.
"""

from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from . import __version__, data_table, logger, presets
from .argparse_typed import parser as typed_parser
from .argtypes import ArgList, IntArg, IntList
from .bundle import Bundle, load_bundle, save_bundle, synth_graph
from .checkpoint import load_checkpoint, save_checkpoint
from .data_table import TableTuple, print_table, write_csv
from .graph import Graph
from .model import (
    Mode,
    ModelConfig,
    PathGCNModel,
    TrainingReport,
    benchmark,
    evaluate,
    train,
    write_json,
)
from .pathconv import kernel_table
from .paths import resample
from .verify import check_results, results_table, run_suites

log = logger.getLogger(__name__)


# `TypedNamespace` and the usage strings together provide the type conversion
# and the `argparse.add_argument()` calls for every option (see
# `argparse_typed.py`). Each option in a usage string needs a field here.
class TypedNamespace(argparse.Namespace):
    command: str
    quiet: bool
    debug: bool
    log: str
    plain: bool
    bundle: str
    config: str
    set: ArgList
    split: IntArg
    all_splits: bool
    workers: IntArg
    output: str
    checkpoint: str
    mode: str
    repeats: IntArg
    graph: str
    n: IntArg
    prob: float
    suites: ArgList
    seed: IntArg
    origins: IntList
    layers: IntList
    channels: IntList
    repetitions: IntArg
    kind: str
    params: ArgList
    grid: ArgList
    _globals = globals()  # Used to access the module's global variables.


usage = """
    path-gcn

    Learn graph spatial operators from random paths and train pathGCN node
    classifiers on graph bundles.

    -q --quiet          | set log level to ERROR (default: INFO)
    -d --debug          | set log level to DEBUG (default: INFO)
    --log NAME=LEVEL[,NAME=LEVEL,...] \
                        | set the log level for the named loggers ("--log list" \
                          shows the logger names)
    --plain             | print plain text tables

    Counts (eg. --repeats, --n) may use a k or M suffix: "--n 10k".
"""

train_usage = """
    train

    Train a model on a bundle: writes model.ckpt, report.csv, summary.json and
    timing.json to the output directory.

    --bundle DIR        | the graph bundle directory
    --config NAME/FILE  | a preset name or a JSON config file ("--config list" \
                          shows the presets)
    --set NAME=VALUE[,NAME=VALUE,...] \
                        | override config fields, eg. "--set k=7,p=10,L=16"
    --split N           | index of the split object to train on (default: 0)
    --all-splits        | train on every split object and report the mean test \
                          accuracy (one sub-directory per split)
    --workers N         | threads for path sampling and concurrent splits
    -o --output DIR     | output directory (default: run)
"""

grid_usage = """
    grid

    Train on every split for each point of a hyperparameter grid (eg. path
    length k, paths per node p, kernel variant or depth L): writes one
    directory per point and grid.csv with the mean and std test accuracy.

    --bundle DIR        | the graph bundle directory
    --config NAME/FILE  | a preset name or a JSON config file for the base config
    --set NAME=VALUE[,NAME=VALUE,...] \
                        | override fields of the base config
    --grid NAME=V1:V2[,NAME=V1:V2,...] \
                        | the grid axes, eg. "k=1:3:5,variant=global:depthwise"
    --workers N         | threads for path sampling and concurrent splits
    -o --output DIR     | output directory (default: grid)
"""

eval_usage = """
    eval

    Evaluate a trained model on the test nodes of a bundle split.

    --checkpoint FILE   | checkpoint written by train
    --bundle DIR        | the graph bundle directory
    --split N           | index of the split object (default: 0)
    --mode MODE         | stochastic or deterministic paths (default: the \
                          config's inference mode)
    --repeats N         | stochastic passes to average (default: 10)
    -o --output FILE    | also write the result as JSON
"""

verify_usage = """
    verify

    Run the numerical checks of the path convolution and the network. Exits
    with an error if any check fails.

    --graph KIND        | synthetic graph for the checks (default: erdos_renyi)
    --n N               | number of nodes (default: 200)
    --prob P            | edge probability for erdos_renyi (default: 0.025)
    --bundle DIR        | check on the graph of a bundle instead
    --suites NAME[,NAME,...] \
                        | suites to run (default: all): convergence, exhaustive, \
                          adjoint, identity, stability, gradients, end-to-end
    --seed N            | random seed (default: 0)
    -o --output FILE    | also write the results as CSV
"""

kernel_dump_usage = """
    kernel-dump

    Write the effective kernels of a trained model as CSV: the weight each
    origin places on every node reached, from the sampled walks (stochastic)
    and from their expectation (deterministic).

    --checkpoint FILE   | checkpoint written by train
    --bundle DIR        | the graph bundle directory
    --origins N[,N,...] | origin nodes (default: 0)
    --layers L[,L,...]  | layers (default: all)
    --channels C[,C,...]| channels of a depthwise kernel (default: 0)
    -o --output FILE    | CSV output file (default: kernels.csv)
"""

bench_usage = """
    bench

    Time path sampling, a training step and inference in both modes, and
    report the operation counts of one path convolution.

    --bundle DIR        | the graph bundle directory
    --checkpoint FILE   | time a trained model (default: a new model)
    --config NAME/FILE  | a preset name or a JSON config file
    --set NAME=VALUE[,NAME=VALUE,...] \
                        | override config fields
    --repetitions N     | repetitions of each timing (default: 20)
    --workers N         | threads for path sampling
    -o --output FILE    | JSON output file (default: bench.json)
"""

synth_usage = """
    synth

    Write a synthetic graph bundle.

    kind                | erdos_renyi, two_cliques, star, path or karate
    --params NAME=VALUE[,NAME=VALUE,...] \
                        | generator params, eg. "n=200,prob=0.025", "size=10", \
                          "features=16,classes=3,splits=10"
    --seed N            | random seed (default: 0)
    -o --output DIR     | bundle directory (default: the kind)
"""

commands = {
    "train": train_usage,
    "grid": grid_usage,
    "eval": eval_usage,
    "verify": verify_usage,
    "kernel-dump": kernel_dump_usage,
    "bench": bench_usage,
    "synth": synth_usage,
}


def _config(args: TypedNamespace) -> ModelConfig:
    overrides: Dict[str, Any] = args.set.as_dict() if args.set else {}
    if args.workers:
        overrides["workers"] = str(args.workers)
    return presets.load_config(args.config or "", overrides)


def _split_index(bundle: Bundle, index: int | None) -> int:
    index = index or 0
    if not 0 <= index < len(bundle.splits):
        count = len(bundle.splits)
        raise ValueError(f"Split {index} out of range: bundle has {count}.")
    return index


def train_split(
    bundle: Bundle, cfg: ModelConfig, index: int, outdir: Path
) -> Tuple[PathGCNModel, TrainingReport]:
    """Train a new model on split `index` and write its checkpoint and reports
    to `outdir`."""
    g, x, labels, splits, meta = bundle
    model = PathGCNModel.build(cfg, meta.c, meta.num_classes)
    report = train(model, g, x, labels, splits[index], cfg)
    report.write(outdir, cfg)
    save_checkpoint(model, outdir / "model.ckpt")
    return model, report


def train_splits(bundle: Bundle, cfg: ModelConfig, outdir: Path) -> Dict[str, Any]:
    """Train on every split of `bundle` (one sub-directory of `outdir` each) and
    write and return the summary of test accuracies."""
    indices = range(len(bundle.splits))
    if cfg.workers > 1 and len(indices) > 1:
        # Only the first split to start shows a progress bar
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            runs = list(
                pool.map(
                    lambda i: train_split(bundle, cfg, i, outdir / f"split{i}"),
                    indices,
                )
            )
    else:
        runs = [train_split(bundle, cfg, i, outdir / f"split{i}") for i in indices]
    accs = [report.test_acc for _, report in runs]
    summary = {
        "config": cfg.to_dict(),
        "mean_test_accuracy": float(np.mean(accs)),
        "std_test_accuracy": float(np.std(accs)),
        "test_accuracy": accs,
    }
    write_json(summary, outdir / "summary.json")
    return summary


def summary_table(report: TrainingReport) -> TableTuple:
    return TableTuple(
        "Training summary",
        "{:<16} {:>10}",
        "property value",
        [
            ("epochs", len(report.epochs)),
            ("best epoch", report.best_epoch),
            ("best val acc", f"{report.best_val_acc:.4f}"),
            ("test accuracy", f"{report.test_acc:.4f}"),
            ("stopped early", report.stopped_early),
            ("seconds", f"{report.train_seconds:.1f}"),
        ],
    )


def train_command(args: TypedNamespace) -> None:
    if args.config == "list":
        print_table(presets.preset_table())
        return
    if not args.bundle:
        raise ValueError("train: --bundle is required.")
    cfg = _config(args)
    bundle = load_bundle(args.bundle)
    outdir = Path(args.output or "run")
    if not args.all_splits:
        index = _split_index(bundle, args.split)
        _, report = train_split(bundle, cfg, index, outdir)
        print_table(summary_table(report))
        log.action(f"Wrote model and reports to '{outdir}'.")
        return

    summary = train_splits(bundle, cfg, outdir)
    accs: List[float] = summary["test_accuracy"]
    rows: List[Tuple[Any, ...]] = [(i, f"{a:.4f}") for i, a in enumerate(accs)]
    rows.append(("mean", f"{np.mean(accs):.4f} ± {np.std(accs):.4f}"))
    print_table(TableTuple("Test accuracy", "{:>5} {:>18}", "split accuracy", rows))
    log.action(f"Wrote models and reports for {len(accs)} splits to '{outdir}'.")


def grid_command(args: TypedNamespace) -> None:
    if not args.bundle or not args.grid:
        raise ValueError("grid: --bundle and --grid are required.")
    axes = {name: values for name, *values in args.grid}
    grid = presets.config_grid(_config(args), axes)
    bundle = load_bundle(args.bundle)
    outdir = Path(args.output or "grid")
    rows: List[Tuple[Any, ...]] = []
    for point, cfg in grid:
        label = ",".join(f"{name}={value}" for name, value in point.items())
        log.action(f"Grid point {label} ({len(rows) + 1}/{len(grid)})...")
        summary = train_splits(bundle, cfg, outdir / label)
        mean, std = summary["mean_test_accuracy"], summary["std_test_accuracy"]
        rows.append((*point.values(), mean, std, len(summary["test_accuracy"])))
    table = TableTuple(
        "Grid test accuracy",
        " ".join(["{:>10}"] * len(axes)) + " {:>8.4f} {:>8.4f} {:>6}",
        " ".join([*axes, "mean_test_accuracy std_test_accuracy splits"]),
        rows,
    )
    print_table(table)
    write_csv(table, outdir / "grid.csv")
    log.action(f"Wrote {len(rows)} grid points to '{outdir}'.")


def _model_and_bundle(args: TypedNamespace) -> Tuple[PathGCNModel, Bundle]:
    if not args.checkpoint or not args.bundle:
        raise ValueError(f"{args.command}: --checkpoint and --bundle are required.")
    model = load_checkpoint(args.checkpoint)
    bundle = load_bundle(args.bundle)
    if (model.c_in, model.c_out) != (bundle.meta.c, bundle.meta.num_classes):
        raise ValueError(
            f"Model ({model.c_in} features, {model.c_out} classes) does not match "
            f"bundle ({bundle.meta.c} features, {bundle.meta.num_classes} classes)."
        )
    return model, bundle


def eval_command(args: TypedNamespace) -> None:
    model, bundle = _model_and_bundle(args)
    index = _split_index(bundle, args.split)
    mode = Mode(args.mode or model.cfg.inference_mode)
    repeats = args.repeats or 10
    g, x, labels, splits, _ = bundle
    mean, std = evaluate(model, g, x, labels, splits[index].test, mode, repeats)
    result = {
        "accuracy": mean,
        "std": std,
        "mode": str(mode),
        "repeats": repeats if mode == Mode.STOCHASTIC else 1,
        "split": index,
    }
    print_table(
        TableTuple(
            "Evaluation",
            "{:<14} {:>8} {:>8} {:>8}",
            "mode accuracy std repeats",
            [(str(mode), f"{mean:.4f}", f"{std:.4f}", result["repeats"])],
        )
    )
    if args.output:
        write_json(result, args.output)
        log.action(f"Wrote evaluation to '{args.output}'.")


def _verify_graph(args: TypedNamespace) -> Graph:
    if args.bundle:
        return load_bundle(args.bundle).graph
    kind = args.graph or "erdos_renyi"
    n = args.n or 200
    params: Dict[str, Any] = (
        {"n": n, "prob": args.prob if args.prob is not None else 0.025}
        if kind == "erdos_renyi" else
        {"n": n} if kind in ("star", "path") else
        {"size": max(n // 2, 7)} if kind == "two_cliques" else
        {}
    )  # fmt: skip
    return synth_graph(kind, params, args.seed or 0).graph


def verify_command(args: TypedNamespace) -> None:
    g = _verify_graph(args)
    log.info(f"Verifying on {g}.")
    names = [name for name, *_ in args.suites] if args.suites else []
    results = run_suites(g, names, args.seed or 0)
    table = results_table(results)
    print_table(table)
    if args.output:
        write_csv(table, args.output)
    check_results(results)
    log.action(f"All {len(results)} checks passed.")


def kernel_dump_command(args: TypedNamespace) -> None:
    model, bundle = _model_and_bundle(args)
    cfg, g = model.cfg, bundle.graph
    layers = list(args.layers) if args.layers else list(range(cfg.L))
    origins = list(args.origins) if args.origins else [0]
    channels = list(args.channels) if args.channels else [0]
    if any(not 0 <= l < cfg.L for l in layers):
        raise ValueError(f"Layers must be in [0, {cfg.L}): {layers}.")
    if any(not 0 <= ch < cfg.c for ch in channels):
        raise ValueError(f"Channels must be in [0, {cfg.c}): {channels}.")
    paths = [resample(g, cfg.walk, l, cfg.workers) for l in range(cfg.L)]
    table = kernel_table(g, model.kernel, origins, paths, layers, channels)
    output = args.output or "kernels.csv"
    write_csv(table, output)
    log.action(f"Wrote {len(table.data)} kernel weights to '{output}'.")


def bench_command(args: TypedNamespace) -> None:
    if not args.bundle:
        raise ValueError("bench: --bundle is required.")
    bundle = load_bundle(args.bundle)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        cfg = model.cfg
    else:
        cfg = _config(args)
        model = PathGCNModel.build(cfg, bundle.meta.c, bundle.meta.num_classes)
    timings = benchmark(
        model, bundle.graph, bundle.features, cfg, args.repetitions or 20, bundle.labels
    )
    print_table(timings.table())
    output = args.output or "bench.json"
    write_json(timings.to_dict(), output)
    log.action(f"Wrote timings to '{output}'.")


def synth_command(args: TypedNamespace) -> None:
    params = args.params.as_dict() if args.params else {}
    bundle = synth_graph(args.kind, params, args.seed or 0)
    save_bundle(bundle, args.output or args.kind)
    print_table(bundle.table())


def run_commands(argv: Sequence[str] | None = None) -> None:
    namespace = TypedNamespace()
    parser = typed_parser(usage, namespace, commands)
    args = parser.parse_args(args=argv, namespace=namespace)
    progname = os.path.basename(sys.argv[0])

    logger.configure(args.quiet, args.debug, args.log)
    if args.plain:
        data_table.use_rich_table = False
    log.debug(
        f"Running {progname} v{__version__} (Python {platform.python_version()})."
    )
    {
        "train": train_command,
        "grid": grid_command,
        "eval": eval_command,
        "verify": verify_command,
        "kernel-dump": kernel_dump_command,
        "bench": bench_command,
        "synth": synth_command,
    }[args.command](args)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        words = sys.argv if argv is None else argv
        if "-d" in words or "--debug" in words:
            log.setLevel("DEBUG")
        run_commands(argv)
    except (KeyboardInterrupt, Exception) as err:
        if not log.isEnabledFor(logging.DEBUG):
            log.error(f"{type(err).__name__}: {err}")  # Just log the error
        else:
            log.exception("Error:")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
