# MIT License
"""Read, write and generate graph bundles: a directory holding one dataset.

A bundle directory contains:
- `graph.edges`: one `u v` pair of node indices per line (`#` comments allowed)
- `features.csv`: `n` rows of `c` comma separated reals
- `labels.csv`: `n` rows, each one integer class index
- `splits.json`: a `{"train": [...], "val": [...], "test": [...]}` object, or a
  list of such objects for datasets with several random splits
- `meta.json`: `{"n": ..., "c": ..., "num_classes": ..., "name": ...}` and an
  optional `preprocessing` note

Provides:
- `load_bundle(path)`: read and validate a bundle.
- `save_bundle(bundle, path)`: write a bundle (byte-stable).
- `synth_graph(kind, params, seed)`: generate a small synthetic bundle.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Mapping, Tuple

import numpy as np
from more_itertools import pairwise
from numpy.typing import NDArray

from . import logger
from .data_table import TableTuple
from .graph import FeatureMatrix, Graph, GraphError, graph_from_edge_list
from .model import Split

log = logger.getLogger(__name__)

FILES = ("graph.edges", "features.csv", "labels.csv", "splits.json", "meta.json")


class BundleError(Exception):
    "Raised if a bundle is missing a file or its contents are inconsistent."


@dataclass
class BundleMeta:
    n: int
    c: int
    num_classes: int
    name: str
    preprocessing: str = ""

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        if not self.preprocessing:
            del d["preprocessing"]
        return d


@dataclass(eq=False)
class Bundle:
    """A loaded dataset: the graph, node features and labels, the splits and
    the metadata."""

    graph: Graph
    features: FeatureMatrix
    labels: NDArray[np.int64]
    splits: List[Split]
    meta: BundleMeta

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Bundle):
            return NotImplemented
        return (
            self.graph == other.graph
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and [s.to_dict() for s in self.splits]
            == [s.to_dict() for s in other.splits]
            and self.meta == other.meta
        )

    def __iter__(self) -> Iterator[Any]:
        # Unpacks as (graph, features, labels, splits, meta)
        return iter((self.graph, self.features, self.labels, self.splits, self.meta))

    def table(self) -> TableTuple:
        g = self.graph
        counts = np.bincount(self.labels, minlength=self.meta.num_classes)
        return TableTuple(
            f"Bundle '{self.meta.name}'",
            "{:<12} {:>12}",
            "property value",
            [
                ("nodes", g.n),
                ("edges", g.num_edges),
                ("features", self.meta.c),
                ("classes", self.meta.num_classes),
                ("mean degree", f"{g.mean_degree:.2f}"),
                ("isolated", len(g.isolated)),
                ("class sizes", ",".join(str(c) for c in counts)),
                ("splits", len(self.splits)),
            ],
        )


def _lines(path: Path) -> Iterator[Tuple[int, str]]:
    # Yield (line number, stripped line) for non-blank, non-comment lines
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if (line := line.strip()) and not line.startswith("#"):
                yield lineno, line


def _read_edges(path: Path) -> List[Tuple[int, int]]:
    edges = []
    for lineno, line in _lines(path):
        try:
            u, v = (int(s) for s in line.split())
        except ValueError:
            msg = f"{path.name}:{lineno}: malformed edge '{line}'."
            raise BundleError(msg) from None
        edges.append((u, v))
    return edges


def _read_rows(path: Path, convert: Callable[[str], Any]) -> List[List[Any]]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for row in reader:
            if not row:
                continue
            try:
                rows.append([convert(s) for s in row])
            except ValueError:
                lineno = reader.line_num
                raise BundleError(
                    f"{path.name}:{lineno}: malformed value in '{','.join(row)}'."
                ) from None
    return rows


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as err:
        msg = f"{path.name}:{err.lineno}: invalid JSON ({err.msg})."
        raise BundleError(msg) from None


def _split_from(obj: Any, where: str) -> Split:
    try:
        return Split(obj["train"], obj["val"], obj["test"])
    except (KeyError, TypeError) as err:
        msg = f"{where}: split needs train, val and test ({err})."
        raise BundleError(msg) from None
    except ValueError as err:
        raise BundleError(f"{where}: {err}") from None


def load_bundle(path: Path | str) -> Bundle:
    """Read the bundle in directory `path`, check its row counts against
    `meta.json` and check the split indices."""
    path = Path(path)
    log.action(f"Loading bundle '{path}'...")
    for name in FILES:
        if not (path / name).is_file():
            raise BundleError(f"{name}: missing from bundle '{path}'.")
    meta_json = _read_json(path / "meta.json")
    try:
        meta = BundleMeta(**meta_json)
    except TypeError as err:
        raise BundleError(f"meta.json: {err}") from None
    edges = _read_edges(path / "graph.edges")
    try:
        g = graph_from_edge_list(edges, meta.n)
    except GraphError as err:
        raise BundleError(f"graph.edges: {err}") from None
    rows = _read_rows(path / "features.csv", float)
    if len(rows) != meta.n:
        raise BundleError(f"features.csv: {len(rows)} rows, meta.json says n={meta.n}.")
    for lineno, row in enumerate(rows, start=1):
        if len(row) != meta.c:
            raise BundleError(
                f"features.csv:{lineno}: {len(row)} values, expected {meta.c}."
            )
    features = np.array(rows, dtype=np.float64).reshape(meta.n, meta.c)
    if not np.all(np.isfinite(features)):
        raise BundleError("features.csv: features must be finite.")
    label_rows = _read_rows(path / "labels.csv", int)
    if len(label_rows) != meta.n:
        raise BundleError(
            f"labels.csv: {len(label_rows)} rows, meta.json says n={meta.n}."
        )
    labels = np.array([r[0] for r in label_rows], dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= meta.num_classes):
        raise BundleError(f"labels.csv: labels must be in [0, {meta.num_classes}).")
    split_json = _read_json(path / "splits.json")
    objs = split_json if isinstance(split_json, list) else [split_json]
    splits = [_split_from(obj, f"splits.json[{i}]") for i, obj in enumerate(objs)]
    for i, split in enumerate(splits):
        try:
            split.check(meta.n)
        except ValueError as err:
            raise BundleError(f"splits.json[{i}]: {err}") from None
    if len(g.isolated):
        log.warning(f"{path}: {len(g.isolated)} isolated nodes (walks stay put).")
    bundle = Bundle(g, features, labels, splits, meta)
    log.debug(f"Loaded {g} with {meta.c} features and {len(splits)} splits.")
    return bundle


def save_bundle(bundle: Bundle, path: Path | str) -> Path:
    """Write `bundle` to directory `path` (created if needed)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    g, features, labels, splits, meta = bundle
    (path / "graph.edges").write_text("".join(f"{u} {v}\n" for u, v in g.edges()))
    with open(path / "features.csv", "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(
            [repr(float(x)) for x in row] for row in features
        )
    (path / "labels.csv").write_text("".join(f"{int(y)}\n" for y in labels))
    objs = [s.to_dict() for s in splits]
    split_json = json.dumps(objs[0] if len(objs) == 1 else objs)
    (path / "splits.json").write_text(split_json + "\n")
    meta_json = json.dumps(meta.to_dict(), indent=2, sort_keys=True)
    (path / "meta.json").write_text(meta_json + "\n")
    log.action(f"Wrote bundle '{path}'.")
    return path


# The 34 member karate club network: neighbours of each node with a larger index
KARATE_CLUB = """
0: 1 2 3 4 5 6 7 8 10 11 12 13 17 19 21 31
1: 2 3 7 13 17 19 21 30
2: 3 7 8 9 13 27 28 32
3: 7 12 13
4: 6 10
5: 6 10 16
6: 16
8: 30 32 33
9: 33
13: 33
14: 32 33
15: 32 33
18: 32 33
19: 33
20: 32 33
22: 32 33
23: 25 27 29 32 33
24: 25 27 31
25: 31
26: 29 33
27: 33
28: 31 33
29: 32 33
30: 32 33
31: 32 33
32: 33
"""
# Members who followed the officer when the club split (the rest followed Mr. Hi)
KARATE_OFFICER = (9, 14, 15, 18, 20, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31, 32, 33)

SYNTH_KINDS = ("erdos_renyi", "two_cliques", "star", "path", "karate")


def _class_splits(
    labels: NDArray[np.int64],
    sizes: Callable[[int], Tuple[int, int]],
    rng: np.random.Generator,
) -> Split:
    # Split the nodes of each class into (train, val, rest) of the given sizes
    train, val, test = [], [], []
    for cls in np.unique(labels):
        nodes = rng.permutation(np.flatnonzero(labels == cls))
        n_train, n_val = sizes(len(nodes))
        train += nodes[:n_train].tolist()
        val += nodes[n_train : n_train + n_val].tolist()
        test += nodes[n_train + n_val :].tolist()
    return Split(sorted(train), sorted(val), sorted(test))


def _fraction_sizes(n: int) -> Tuple[int, int]:
    return max(1, int(0.6 * n)), int(0.2 * n)


def synth_graph(
    kind: str, params: Mapping[str, Any] | None = None, seed: int = 0
) -> Bundle:
    """Generate a synthetic bundle of `kind`:

    - `erdos_renyi`: `n` nodes (200), each edge present with `prob` (0.025)
    - `two_cliques`: two cliques of `size` nodes (10) joined by one edge, with
      linearly separable one-hot-plus-noise features
    - `star`: node 0 joined to `n - 1` leaves (`n` = 5)
    - `path`: `n` nodes (10) in a line
    - `karate`: the fixed 34 node karate club graph with its two factions

    Other params: `features` (channels, 8), `classes` (2, for random labels)
    and `splits` (number of random split objects, 1). The result depends only
    on the params and `seed`."""
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    n_splits = int(params.pop("splits", 1))
    channels = int(params.pop("features", 2 if kind == "two_cliques" else 8))
    classes = int(params.pop("classes", 2))
    sizes = _fraction_sizes
    labels: NDArray[np.int64] | None = None
    features: FeatureMatrix | None = None
    try:
        if kind == "erdos_renyi":
            n, prob = int(params.pop("n", 200)), float(params.pop("prob", 0.025))
            if not 0.0 <= prob <= 1.0:
                raise BundleError(f"erdos_renyi: prob must be in [0, 1] ({prob}).")
            u, v = np.triu_indices(n, 1)
            keep = rng.random(len(u)) < prob
            edges = list(zip(u[keep].tolist(), v[keep].tolist()))
        elif kind == "two_cliques":
            size = int(params.pop("size", 10))
            if size < 7:
                raise BundleError(f"two_cliques: size must be >= 7 ({size}).")
            n = 2 * size
            edges = [(a, b) for a in range(size) for b in range(a + 1, size)]
            edges += [(a + size, b + size) for a, b in edges]
            edges.append((size - 1, size))  # The single cross edge
            labels = np.repeat(np.arange(2), size)
            features = rng.normal(0.0, 0.1, (n, max(channels, 2)))
            features[np.arange(n), labels] += 1.0
            sizes = lambda _: (3, 3)  # noqa: E731
        elif kind == "star":
            n = int(params.pop("n", 5))
            edges = [(0, i) for i in range(1, n)]
        elif kind == "path":
            n = int(params.pop("n", 10))
            edges = list(pairwise(range(n)))
        elif kind == "karate":
            n = 34
            edges = [
                (int(u), int(v))
                for line in KARATE_CLUB.strip().splitlines()
                for u, vs in [line.split(":")]
                for v in vs.split()
            ]
            labels = np.zeros(n, dtype=np.int64)
            labels[list(KARATE_OFFICER)] = 1
        else:
            raise BundleError(f"Unknown synthetic graph kind '{kind}' {SYNTH_KINDS}.")
    except (TypeError, ValueError) as err:
        raise BundleError(f"{kind}: invalid params ({err}).") from None
    if params:
        raise BundleError(f"{kind}: unknown params {sorted(params)}.")
    if n < 1 or channels < 1 or classes < 1 or n_splits < 1:
        raise BundleError(f"{kind}: sizes must be >= 1.")
    num_classes = classes
    if labels is None:
        labels = rng.integers(0, classes, n)
    else:
        num_classes = int(labels.max()) + 1
    if features is None:
        features = rng.normal(0.0, 1.0, (n, channels))
    splits = [_class_splits(labels, sizes, rng) for _ in range(n_splits)]
    g = graph_from_edge_list(edges, n)
    meta = BundleMeta(n, features.shape[1], num_classes, kind)
    log.debug(f"Synthesised {kind}: {g}")
    return Bundle(g, features, labels.astype(np.int64), splits, meta)
