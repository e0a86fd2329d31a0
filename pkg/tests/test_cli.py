from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import get_type_hints

import pytest

from path_gcn.argparse_typed import usage_fields
from path_gcn.checkpoint import load_checkpoint
from path_gcn.main import TypedNamespace, commands, usage

from .conftest import assert_output, log_messages, run

TINY = "--config tiny --set max_epochs=60"


@pytest.fixture(scope="module")
def cliques_run(testdir: Path) -> Path:
    run("synth two_cliques --params size=10 -o cli-cliques")
    run(f"train --bundle cli-cliques {TINY} -o cli-run")
    return testdir / "cli-run"


def test_synth(testdir: Path):
    output = run("synth karate -o karate")
    assert_output(
        """
        Bundle 'karate'
        property value
        nodes 34
        edges 78
        """,
        output,
    )
    assert sorted(p.name for p in (testdir / "karate").iterdir()) == [
        "features.csv", "graph.edges", "labels.csv", "meta.json", "splits.json"
    ]


def test_synth_errors(testdir: Path):
    run("synth lattice", status=1)
    assert "BundleError: Unknown synthetic graph kind 'lattice'" in log_messages()
    run("synth star --params n=x", status=1)
    assert "BundleError: star: invalid params" in log_messages()


def test_train(cliques_run: Path):
    for name in ("model.ckpt", "report.csv", "summary.json", "timing.json"):
        assert (cliques_run / name).is_file(), name
    summary = json.loads((cliques_run / "summary.json").read_text())
    assert summary["config"]["k"] == 3 and summary["config"]["max_epochs"] == 60
    with open(cliques_run / "report.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == summary["epochs"]
    assert load_checkpoint(cliques_run / "model.ckpt").cfg.c == 16


def test_train_is_byte_stable(testdir: Path, cliques_run: Path):
    run(f"train --bundle cli-cliques {TINY} -o cli-run2")
    for name in ("model.ckpt", "report.csv", "summary.json"):
        assert (testdir / "cli-run2" / name).read_bytes() == (
            cliques_run / name
        ).read_bytes(), name


def test_eval(testdir: Path, cliques_run: Path):
    ckpt = cliques_run / "model.ckpt"
    output = run(f"eval --checkpoint {ckpt} --bundle cli-cliques -o eval.json")
    assert_output("Evaluation\nmode accuracy std repeats", output)
    result = json.loads((testdir / "eval.json").read_text())
    assert result["mode"] == "deterministic" and result["std"] == 0.0
    assert result["repeats"] == 1 and result["split"] == 0
    run(
        f"eval --checkpoint {ckpt} --bundle cli-cliques --mode stochastic "
        "--repeats 3 -o eval2.json"
    )
    again = json.loads((testdir / "eval2.json").read_text())
    assert again["mode"] == "stochastic" and again["repeats"] == 3


def test_eval_errors(testdir: Path, cliques_run: Path):
    ckpt = cliques_run / "model.ckpt"
    run("synth karate -o karate-eval")
    run(f"eval --checkpoint {ckpt} --bundle karate-eval", status=1)
    assert "does not match bundle" in log_messages()
    run(f"eval --checkpoint {ckpt} --bundle cli-cliques --split 3", status=1)
    assert "ValueError: Split 3 out of range: bundle has 1." in log_messages()
    run("eval --bundle cli-cliques", status=1)
    assert "--checkpoint and --bundle are required" in log_messages()


def test_kernel_dump(testdir: Path, cliques_run: Path):
    ckpt = cliques_run / "model.ckpt"
    run(
        f"kernel-dump --checkpoint {ckpt} --bundle cli-cliques "
        "--origins 0,9 --layers 1 --channels 0,1 -o kernels.csv"
    )
    with open(testdir / "kernels.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == [
        "layer", "channel", "origin", "node_id", "stochastic", "deterministic"
    ]
    assert {r["layer"] for r in rows} == {"1"}
    assert {r["origin"] for r in rows} == {"0", "9"}
    assert {r["channel"] for r in rows} == {"0", "1"}
    run(f"kernel-dump --checkpoint {ckpt} --bundle cli-cliques --layers 5", status=1)
    assert "Layers must be in [0, 2)" in log_messages()


def test_bench(testdir: Path, cliques_run: Path):
    run("bench --bundle cli-cliques --config tiny --repetitions 2 -o bench.json")
    timings = json.loads((testdir / "bench.json").read_text())
    assert timings["repetitions"] == 2
    assert timings["stochastic_ops"] == 20 * 3 * 5
    assert timings["deterministic_ops"] == 2 * 91 * 2


def test_verify(testdir: Path):
    output = run(
        "verify --graph two_cliques --suites adjoint,identity,stability "
        "-o checks.csv"
    )
    assert_output("Verification\nsuite check value limit result", output)
    assert "FAIL" not in output
    with open(testdir / "checks.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert {r["suite"] for r in rows} == {"adjoint", "identity", "stability"}
    assert "checks passed" in log_messages()


def test_verify_unknown_suite():
    run("verify --graph star --suites nothing", status=1)
    assert "Unknown suites ['nothing']" in log_messages()


def test_config_list():
    output = run("train --config list")
    assert_output("Presets", output)
    assert "cora-semi" in output and "tiny" in output


def test_unknown_config(cliques_run: Path):
    run("train --bundle cli-cliques --config cora", status=1)
    assert "neither a preset" in log_messages()
    run("train --bundle cli-cliques --set depth=3", status=1)
    assert "unknown field 'depth'" in log_messages()


def test_all_splits(testdir: Path):
    run("synth erdos_renyi --params n=40,prob=0.2,splits=2 -o er-splits")
    run(
        "train --bundle er-splits --config tiny --set max_epochs=5 "
        "--all-splits -o er-run"
    )
    summary = json.loads((testdir / "er-run" / "summary.json").read_text())
    assert len(summary["test_accuracy"]) == 2
    assert summary["mean_test_accuracy"] == pytest.approx(
        sum(summary["test_accuracy"]) / 2
    )
    for i in (0, 1):
        assert (testdir / "er-run" / f"split{i}" / "model.ckpt").is_file()


def test_all_splits_concurrent(testdir: Path):
    run(
        "train --bundle er-splits --config tiny --set max_epochs=5 "
        "--all-splits --workers 2 -o er-run2"
    )
    first = json.loads((testdir / "er-run" / "summary.json").read_text())
    second = json.loads((testdir / "er-run2" / "summary.json").read_text())
    # Threads only change how the splits are scheduled
    assert second["test_accuracy"] == first["test_accuracy"]


def test_log_levels(testdir: Path):
    model_log = logging.getLogger("path_gcn.model")
    try:
        run("--log model=debug synth star -o star-log")
        assert model_log.level == logging.DEBUG
    finally:
        model_log.setLevel(logging.NOTSET)
    run("--log model synth star -o star-log", status=1)
    assert "ValueError: Bad logging setting 'model'" in log_messages()


def test_usage_fields_are_typed():
    fields = usage_fields([usage, *commands.values()])
    assert "output" in fields and "all_splits" in fields
    assert set(fields) <= set(get_type_hints(TypedNamespace))


def test_grid(testdir: Path):
    run("synth erdos_renyi --params n=40,prob=0.2,splits=2 -o er-grid")
    run(
        "grid --bundle er-grid --config tiny --set max_epochs=5 "
        "--grid k=1:3,variant=global:depthwise -o grid-run"
    )
    with open(testdir / "grid-run" / "grid.csv") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == [
        "k", "variant", "mean_test_accuracy", "std_test_accuracy", "splits"
    ]
    assert [(r["k"], r["variant"]) for r in rows] == [
        ("1", "global"), ("1", "depthwise"), ("3", "global"), ("3", "depthwise")
    ]
    for row in rows:
        point = testdir / "grid-run" / f"k={row['k']},variant={row['variant']}"
        summary = json.loads((point / "summary.json").read_text())
        assert summary["config"]["k"] == int(row["k"])
        assert summary["mean_test_accuracy"] == float(row["mean_test_accuracy"])
        assert row["splits"] == "2"
        assert (point / "split1" / "model.ckpt").is_file()


def test_bad_grid(testdir: Path):
    run("grid --bundle er-grid --config tiny", status=1)
    assert "grid: --bundle and --grid are required" in log_messages()
    run("grid --bundle er-grid --config tiny --grid depth=1:2", status=1)
    assert "unknown field 'depth'" in log_messages()
