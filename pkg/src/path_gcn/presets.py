# MIT License
"""Named hyperparameter presets for node classification, and loading of run
configurations from presets or JSON files.

Provides:
- `preset(name)`: the `ModelConfig` of a named preset.
- `load_config(name_or_file, overrides)`: a `ModelConfig` from a preset name or
  a JSON file (a bare config or a `summary.json`), with `NAME=VALUE` overrides.
- `config_grid(base, axes)`: the configs of every point of a hyperparameter grid.
- `preset_table()`: the presets as a `TableTuple` for printing.
"""

from __future__ import annotations

import itertools
import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Tuple

from . import logger
from .argtypes import ArgList
from .data_table import TableTuple
from .model import ModelConfig

log = logger.getLogger(__name__)

# The columns of each preset line below. Depth L is 2 in every preset.
PRESET_FIELDS = ("lr_gcn", "wd_gcn", "lr_oc", "wd_oc", "c", "p_drop", "k", "p")

# "-semi" presets use the standard semi-supervised splits, "-full" presets the
# fully-supervised 60/20/20 random splits.
PRESET_LAYOUT = """
cora-semi      : 1e-3 : 2e-5 : 1e-2 : 1e-5 : 64  : 0.6 : 5 : 5,
citeseer-semi  : 1e-3 : 1e-5 : 7e-3 : 5e-5 : 256 : 0.7 : 5 : 5,
pubmed-semi    : 5e-3 : 0    : 1e-2 : 1e-5 : 256 : 0.5 : 7 : 10,
cora-full      : 1e-4 : 1e-4 : 7e-2 : 1e-4 : 64  : 0.5 : 5 : 10,
citeseer-full  : 3e-4 : 5e-5 : 8e-3 : 1e-4 : 64  : 0.5 : 5 : 10,
pubmed-full    : 1e-4 : 2e-4 : 1e-2 : 1e-6 : 64  : 0.5 : 7 : 10,
chameleon-full : 5e-4 : 1e-5 : 5e-3 : 3e-5 : 64  : 0.5 : 3 : 10,
cornell-full   : 4e-4 : 1e-5 : 5e-2 : 5e-4 : 64  : 0.5 : 5 : 10,
texas-full     : 3e-4 : 5e-4 : 4e-2 : 1e-4 : 64  : 0.5 : 7 : 10,
wisconsin-full : 3e-4 : 2e-4 : 1e-2 : 5e-5 : 64  : 0.5 : 7 : 10,
actor-full     : 2e-4 : 1e-4 : 8e-2 : 5e-4 : 64  : 0.5 : 7 : 10,
wikics-full    : 3e-2 : 1e-4 : 7e-3 : 1e-5 : 64  : 0.3 : 7 : 5,
arxiv-full     : 1e-3 : 0    : 1e-3 : 0    : 256 : 0.1 : 5 : 10,
tiny           : 1e-2 : 1e-4 : 1e-2 : 1e-4 : 16  : 0.2 : 3 : 5
"""
# Fields which differ from the ModelConfig defaults for some presets
PRESET_EXTRAS: Dict[str, Dict[str, Any]] = {
    "tiny": {"max_epochs": 200, "patience": 50},
}


def _presets() -> Dict[str, Dict[str, Any]]:
    presets: Dict[str, Dict[str, Any]] = {}
    for name, *values in ArgList(PRESET_LAYOUT):
        if len(values) != len(PRESET_FIELDS):
            raise ValueError(f"Preset '{name}' has {len(values)} fields.")
        d: Dict[str, Any] = {
            f: int(v) if f in ("c", "k", "p") else float(v)
            for f, v in zip(PRESET_FIELDS, values)
        }
        presets[name] = {**d, **PRESET_EXTRAS.get(name, {})}
    return presets


PRESETS = _presets()


def preset(name: str) -> ModelConfig:
    """Return the config of the preset `name`."""
    if name not in PRESETS:
        raise ValueError(f"Unknown preset '{name}': choose from {list(PRESETS)}.")
    return ModelConfig.from_dict(PRESETS[name])


def load_config(
    name_or_file: str = "", overrides: Mapping[str, str] | None = None
) -> ModelConfig:
    """Return the config named by a preset or read from a JSON file, with
    `overrides` applied. An empty name gives the `ModelConfig` defaults."""
    if not name_or_file:
        cfg = ModelConfig()
    elif name_or_file in PRESETS:
        cfg = preset(name_or_file)
    elif Path(name_or_file).is_file():
        data = json.loads(Path(name_or_file).read_text())
        # Accept the summary.json written by a training run
        cfg = ModelConfig.from_dict(data.get("config", data))
    else:
        raise ValueError(
            f"Config '{name_or_file}' is neither a preset {list(PRESETS)} nor a file."
        )
    if overrides:
        cfg = cfg.with_overrides(overrides)
    log.debug(f"Config: {cfg}")
    return cfg


def preset_table() -> TableTuple:
    return TableTuple(
        "Presets",
        "{:<15} {:>7} {:>7} {:>7} {:>7} {:>4} {:>6} {:>2} {:>3}",
        "name " + " ".join(PRESET_FIELDS),
        [(name, *(d[f] for f in PRESET_FIELDS)) for name, d in PRESETS.items()],
    )


def config_grid(
    base: ModelConfig, axes: Mapping[str, Sequence[str]]
) -> List[Tuple[Dict[str, str], ModelConfig]]:
    """Return every combination of the values of `axes` (field name to values)
    as `(point, config)` pairs, where `point` maps each axis to its value and
    `config` is `base` with the point applied. The last axis varies fastest."""
    if not axes:
        raise ValueError("Grid: no axes given.")
    for name, values in axes.items():
        if not values or not all(values):
            raise ValueError(f"Grid: axis '{name}' needs NAME=V1[:V2...] values.")
    names = list(axes)
    grid: List[Tuple[Dict[str, str], ModelConfig]] = []
    for values in itertools.product(*axes.values()):
        point = dict(zip(names, values))
        grid.append((point, base.with_overrides(point)))
    log.debug(f"Grid: {len(grid)} configs over {names}.")
    return grid
