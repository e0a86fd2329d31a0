from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from path_gcn.bundle import Bundle, synth_graph
from path_gcn.checkpoint import checkpoint_bytes
from path_gcn.graph import ShapeError, graph_from_edge_list
from path_gcn.model import (
    Mode,
    ModelConfig,
    PathGCNModel,
    Split,
    TimingReport,
    TrainingError,
    benchmark,
    evaluate,
    forward,
    loss_and_grads,
    train,
)
from path_gcn.pathconv import KernelVariant
from path_gcn.presets import preset
from path_gcn.verify import central_difference, relative_error


def small_config(**kwargs) -> ModelConfig:
    return ModelConfig(**{"L": 2, "c": 4, "k": 3, "p": 2, "p_drop": 0.0, **kwargs})


def test_config_validation():
    with pytest.raises(ValueError, match="k must be >= 1"):
        ModelConfig(k=0)
    with pytest.raises(ValueError, match="p_drop"):
        ModelConfig(p_drop=1.0)
    with pytest.raises(ValueError):
        ModelConfig(variant="sideways")  # type: ignore
    with pytest.raises(ValueError, match="unknown fields"):
        ModelConfig.from_dict({"depth": 3})
    cfg = ModelConfig(variant="global", train_mode="deterministic")  # type: ignore
    assert cfg.variant == KernelVariant.GLOBAL
    assert cfg.train_mode == Mode.DETERMINISTIC


def test_config_overrides():
    cfg = ModelConfig().with_overrides({"k": "7", "lr_oc": "5e-3", "variant": "global"})
    assert (cfg.k, cfg.lr_oc, cfg.variant) == (7, 5e-3, KernelVariant.GLOBAL)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.to_dict()["variant"] == "global"
    assert cfg.lr_by_group == {"gcn": 1e-3, "oc": 5e-3}
    with pytest.raises(ValueError, match="unknown field 'depth'"):
        cfg.with_overrides({"depth": "3"})


def test_split():
    split = Split([0, 1], [2], [3, 4])
    assert split.to_dict() == {"train": [0, 1], "val": [2], "test": [3, 4]}
    with pytest.raises(ValueError, match="disjoint"):
        Split([0, 1], [1], [2])
    with pytest.raises(ValueError, match="out of range"):
        split.check(4)


@pytest.mark.parametrize("variant", ["global", "per-layer", "depthwise"])
def test_build_and_forward(cliques: Bundle, variant: str):
    g, x, _, _, meta = cliques
    cfg = small_config(variant=variant)
    model = PathGCNModel.build(cfg, meta.c, meta.num_classes)
    params = model.parameters()
    assert params["embedding.weights"].shape == (meta.c, 4)
    assert params["classifier.weights"].shape == (4, 2)
    assert [f"block{l}.weights" in params for l in range(2)] == [True, True]
    assert model.groups()["kernel"] == "gcn"
    assert model.groups()["embedding.bias"] == "oc"
    for mode in Mode:
        assert forward(model, g, x, mode).shape == (g.n, 2)
    # Building is seeded by the config
    again = PathGCNModel.build(cfg, meta.c, meta.num_classes)
    assert checkpoint_bytes(again) == checkpoint_bytes(model)


def test_forward_shape_errors(cliques: Bundle):
    g, x, _, _, meta = cliques
    model = PathGCNModel.build(small_config(), meta.c, meta.num_classes)
    with pytest.raises(ShapeError):
        forward(model, g, np.zeros((g.n, meta.c + 1)))
    with pytest.raises(ShapeError):
        forward(model, g, x, paths=[])


@pytest.mark.parametrize("mode", ["stochastic", "deterministic"])
def test_model_gradients(cliques: Bundle, mode: str):
    # Fixed walks (the same for every evaluation) make the loss differentiable
    g, x, labels, splits, meta = cliques
    model = PathGCNModel.build(small_config(), meta.c, meta.num_classes)
    nodes = splits[0].train
    _, grads, _ = loss_and_grads(model, g, x, labels, nodes, mode, iteration=3)
    for name, param in model.parameters().items():
        numeric = central_difference(
            lambda: loss_and_grads(model, g, x, labels, nodes, mode, iteration=3)[0],
            param,
        )
        assert relative_error(grads[name], numeric) < 1e-4, name


def test_eval_is_deterministic(cliques: Bundle):
    g, x, labels, splits, meta = cliques
    model = PathGCNModel.build(small_config(), meta.c, meta.num_classes)
    acc, std = evaluate(model, g, x, labels, splits[0].test)
    assert std == 0.0
    assert evaluate(model, g, x, labels, splits[0].test) == (acc, std)
    stochastic = evaluate(model, g, x, labels, splits[0].test, "stochastic", 4)
    assert evaluate(model, g, x, labels, splits[0].test, "stochastic", 4) == stochastic
    with pytest.raises(ValueError, match="empty"):
        evaluate(model, g, x, labels, [])


def train_cliques(cliques: Bundle, outdir: Path) -> PathGCNModel:
    g, x, labels, splits, meta = cliques
    cfg = preset("tiny")
    model = PathGCNModel.build(cfg, meta.c, meta.num_classes)
    report = train(model, g, x, labels, splits[0], cfg)
    report.write(outdir, cfg)
    (outdir / "model.ckpt").write_bytes(checkpoint_bytes(model))
    return model


def test_train_two_cliques(cliques: Bundle, tmp_path: Path):
    g, x, labels, splits, _ = cliques
    model = train_cliques(cliques, tmp_path)
    acc, _ = evaluate(model, g, x, labels, splits[0].test)
    assert acc == 1.0
    summary = (tmp_path / "summary.json").read_text()
    assert '"test_accuracy": 1.0' in summary
    header = (tmp_path / "report.csv").read_text().splitlines()[0]
    assert header == "epoch,loss,val_acc,val_loss"


def test_training_is_reproducible(cliques: Bundle, tmp_path: Path):
    train_cliques(cliques, tmp_path / "a")
    train_cliques(cliques, tmp_path / "b")
    for name in ("summary.json", "report.csv", "model.ckpt"):
        first = (tmp_path / "a" / name).read_bytes()
        assert (tmp_path / "b" / name).read_bytes() == first, name


def test_early_stopping_restores_best(cliques: Bundle):
    g, x, labels, splits, meta = cliques
    cfg = small_config(max_epochs=30, patience=2, lr_oc=0.0, lr_gcn=0.0)
    model = PathGCNModel.build(cfg, meta.c, meta.num_classes)
    report = train(model, g, x, labels, splits[0], cfg)
    # Nothing can improve with zero learning rates
    assert report.stopped_early
    assert report.best_epoch == 0
    assert len(report.epochs) == 4


def test_zero_patience_stops_at_first_miss(cliques: Bundle):
    g, x, labels, splits, meta = cliques
    cfg = small_config(max_epochs=30, patience=0, lr_oc=0.0, lr_gcn=0.0)
    model = PathGCNModel.build(cfg, meta.c, meta.num_classes)
    report = train(model, g, x, labels, splits[0], cfg)
    assert report.stopped_early and len(report.epochs) == 2


def test_training_error_on_divergence(cliques: Bundle):
    g, x, labels, splits, meta = cliques
    cfg = small_config(max_epochs=5)
    model = PathGCNModel.build(cfg, meta.c, meta.num_classes)
    with pytest.raises(TrainingError) as err:
        train(model, g, x * 1e308, labels, splits[0], cfg)
    assert err.value.epoch == 0


def test_training_error_after_a_huge_step(cliques: Bundle):
    # The first Adam step is finite, the activations of the next forward pass
    # are not
    g, x, labels, splits, meta = cliques
    cfg = ModelConfig(L=2, c=4, k=3, p=2, lr_oc=1e300, lr_gcn=1e300, max_epochs=5)
    model = PathGCNModel.build(cfg, meta.c, meta.num_classes)
    with pytest.raises(TrainingError) as err:
        train(model, g, x, labels, splits[0], cfg)
    assert str(err.value).startswith(f"Epoch {err.value.epoch}: ")
    assert str(err.value).count("Epoch") == 1


def test_train_config_must_match_model(cliques: Bundle):
    g, x, labels, splits, meta = cliques
    model = PathGCNModel.build(small_config(), meta.c, meta.num_classes)
    with pytest.raises(ValueError, match="differs"):
        train(model, g, x, labels, splits[0], small_config(k=5))


def test_benchmark(cliques: Bundle):
    g, x, labels, _, meta = cliques
    cfg = small_config()
    model = PathGCNModel.build(cfg, meta.c, meta.num_classes)
    before = checkpoint_bytes(model)
    timing = benchmark(model, g, x, cfg, repetitions=3, labels=labels)
    assert checkpoint_bytes(model) == before
    assert timing.repetitions == 3
    assert timing.sampling_ms >= 0.0 and timing.train_step_ms > 0.0
    assert timing.stochastic_ops == g.n * cfg.k * cfg.p
    assert timing.table().columns == ["phase", "value"]


def bench(bundle: Bundle, **kwargs) -> TimingReport:
    g, x, labels, _, meta = bundle
    model = PathGCNModel.build(small_config(**kwargs), meta.c, meta.num_classes)
    return benchmark(model, g, x, repetitions=2, labels=labels)


def test_benchmark_op_counts_scale(cliques: Bundle):
    base = bench(cliques, k=3, p=2)
    more_paths = bench(cliques, k=3, p=4)
    longer = bench(cliques, k=5, p=2)
    assert more_paths.stochastic_ops == 2 * base.stochastic_ops
    assert more_paths.deterministic_ops == base.deterministic_ops
    assert 3 * longer.stochastic_ops == 5 * base.stochastic_ops
    assert longer.deterministic_ops == 2 * base.deterministic_ops  # k - 1 steps


@pytest.mark.slow
def test_sampling_time_grows_with_paths():
    bundle = synth_graph("erdos_renyi", {}, seed=0)
    assert bench(bundle, p=2000).sampling_ms > 5 * bench(bundle, p=20).sampling_ms


def test_benchmark_config_must_match_model(cliques: Bundle):
    g, x, _, _, meta = cliques
    model = PathGCNModel.build(small_config(), meta.c, meta.num_classes)
    with pytest.raises(ValueError, match="differs"):
        benchmark(model, g, x, small_config(p=5))


def test_stochastic_logits_converge():
    g, x, _, _, meta = synth_graph("erdos_renyi", {"n": 50, "prob": 0.1}, seed=2)
    model = PathGCNModel.build(small_config(p=10_000), meta.c, meta.num_classes)
    deterministic = forward(model, g, x, Mode.DETERMINISTIC)
    stochastic = forward(model, g, x, Mode.STOCHASTIC)
    assert np.sqrt(np.mean((stochastic - deterministic) ** 2)) < 1e-2


def test_no_blocks_is_an_mlp(cliques: Bundle):
    g, x, _, _, meta = cliques
    model = PathGCNModel.build(small_config(L=0), meta.c, meta.num_classes)
    p = model.parameters()
    hidden = np.maximum(x @ p["embedding.weights"] + p["embedding.bias"], 0.0)
    mlp = hidden @ p["classifier.weights"] + p["classifier.bias"]
    for mode in Mode:
        assert np.allclose(forward(model, g, x, mode), mlp, rtol=0, atol=1e-12)


def test_permutation_equivariance():
    g, x, _, _, meta = synth_graph("erdos_renyi", {"n": 30, "prob": 0.2}, seed=4)
    perm = np.random.default_rng(5).permutation(g.n)  # node u becomes perm[u]
    permuted = graph_from_edge_list(
        [(perm[u], perm[v]) for u, v in g.edges()], g.n
    )
    px = np.empty_like(x)
    px[perm] = x
    model = PathGCNModel.build(small_config(), meta.c, meta.num_classes)
    logits = forward(model, g, x, Mode.DETERMINISTIC)
    assert np.allclose(forward(model, permuted, px, Mode.DETERMINISTIC)[perm], logits)
