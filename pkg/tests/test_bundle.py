from __future__ import annotations

import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from path_gcn.bundle import (
    FILES,
    Bundle,
    BundleError,
    load_bundle,
    save_bundle,
    synth_graph,
)

from .conftest import OUTPUTS

ERRORS = OUTPUTS["errors"]


def copy_bundle(src: Path, dst: Path) -> Path:
    shutil.copytree(src, dst)
    return dst


def test_round_trip(cliques: Bundle, cliques_dir: Path):
    assert sorted(p.name for p in cliques_dir.iterdir()) == sorted(FILES)
    assert load_bundle(cliques_dir) == cliques
    # Saving a loaded bundle gives the same bytes
    again = save_bundle(load_bundle(cliques_dir), cliques_dir.parent / "again")
    for name in FILES:
        assert (again / name).read_bytes() == (cliques_dir / name).read_bytes()


def test_meta_and_splits(cliques_dir: Path):
    meta = json.loads((cliques_dir / "meta.json").read_text())
    assert meta == {"n": 20, "c": 2, "num_classes": 2, "name": "two_cliques"}
    splits = json.loads((cliques_dir / "splits.json").read_text())
    assert isinstance(splits, dict) and set(splits) == {"train", "val", "test"}


def test_missing_file(cliques_dir: Path, tmp_path: Path):
    path = copy_bundle(cliques_dir, tmp_path / "b")
    (path / "splits.json").unlink()
    with pytest.raises(BundleError, match=ERRORS["missing"]):
        load_bundle(path)


def test_labels_short(tmp_path: Path):
    path = save_bundle(synth_graph("star"), tmp_path / "b")
    labels = (path / "labels.csv").read_text().splitlines()
    (path / "labels.csv").write_text("\n".join(labels[:4]) + "\n")
    with pytest.raises(BundleError) as err:
        load_bundle(path)
    assert str(err.value) == ERRORS["labels_short"]


def test_bad_edge_line(tmp_path: Path):
    path = save_bundle(synth_graph("star"), tmp_path / "b")
    (path / "graph.edges").write_text("0 1\n1 x\n")
    with pytest.raises(BundleError) as err:
        load_bundle(path)
    assert str(err.value) == ERRORS["bad_edge"]


def test_bad_contents(tmp_path: Path):
    path = save_bundle(synth_graph("star"), tmp_path / "b")
    features = (path / "features.csv").read_text()
    (path / "features.csv").write_text(features.replace(",", ",nan,", 1))
    with pytest.raises(BundleError, match="features.csv:1: 9 values"):
        load_bundle(path)
    (path / "features.csv").write_text(features)
    (path / "graph.edges").write_text("0 7\n")
    with pytest.raises(BundleError, match="out of range"):
        load_bundle(path)
    (path / "graph.edges").write_text("0 1\n")
    (path / "splits.json").write_text('{"train": [0], "val": [9], "test": []}')
    with pytest.raises(BundleError, match="splits.json"):
        load_bundle(path)


def test_multiple_splits(tmp_path: Path):
    bundle = synth_graph("erdos_renyi", {"n": 50, "prob": 0.1, "splits": 3}, seed=2)
    assert len(bundle.splits) == 3
    path = save_bundle(bundle, tmp_path / "b")
    assert isinstance(json.loads((path / "splits.json").read_text()), list)
    loaded = load_bundle(path)
    assert [s.to_dict() for s in loaded.splits] == [s.to_dict() for s in bundle.splits]


def test_synth_star():
    bundle = synth_graph("star", {"n": 5, "features": 3})
    assert bundle.graph.degrees.tolist() == OUTPUTS["star"]["degrees"]
    assert bundle.features.shape == (5, 3)


def test_synth_num_classes():
    # Three nodes cannot draw all ten classes: the bundle still has ten
    bundle = synth_graph("star", {"n": 3, "classes": 10})
    assert bundle.meta.num_classes == 10
    assert bundle.labels.max() < 10
    assert synth_graph("karate", {"classes": 5}).meta.num_classes == 2


def test_synth_reproducible():
    params = {"n": 200, "prob": 0.025}
    a = synth_graph("erdos_renyi", params, seed=0)
    assert synth_graph("erdos_renyi", params, seed=0) == a
    assert synth_graph("erdos_renyi", params, seed=1) != a


def test_synth_two_cliques(cliques: Bundle):
    expected = OUTPUTS["synth"]["two_cliques"]
    g, x, labels, (split,), meta = cliques
    assert (g.n, g.num_edges) == (expected["n"], expected["num_edges"])
    cross = [(u, v) for u, v in g.edges() if labels[u] != labels[v]]
    assert cross == [(9, 10)]
    assert len(split.train) == expected["train"]
    assert len(split.val) == expected["val"]
    assert len(split.test) == expected["test"]
    # One-hot class features with a little noise
    assert np.all(np.argmax(x, axis=1) == labels)


def test_synth_karate():
    expected = OUTPUTS["synth"]["karate"]
    bundle = synth_graph("karate")
    g = bundle.graph
    assert (g.n, g.num_edges) == (expected["n"], expected["num_edges"])
    assert g.degrees[0] == expected["degree_0"]
    assert g.degrees[33] == expected["degree_33"]
    assert np.bincount(bundle.labels).tolist() == expected["class_sizes"]


def test_synth_errors():
    with pytest.raises(BundleError, match="Unknown synthetic graph kind"):
        synth_graph("lattice")
    with pytest.raises(BundleError, match="unknown params"):
        synth_graph("star", {"size": 3})
    with pytest.raises(BundleError, match="size must be >= 7"):
        synth_graph("two_cliques", {"size": 3})
    with pytest.raises(BundleError, match="invalid params"):
        synth_graph("path", {"n": "many"})
    with pytest.raises(BundleError, match="prob"):
        synth_graph("erdos_renyi", {"prob": 2})


def test_table(cliques: Bundle):
    rows = dict(cliques.table().data)
    assert rows["nodes"] == 20 and rows["edges"] == 91
    assert rows["class sizes"] == "10,10"
