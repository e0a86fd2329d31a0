from __future__ import annotations

import binascii
import struct
from pathlib import Path

import numpy as np
import pytest

from path_gcn.checkpoint import (
    CHECKPOINT_MAGIC,
    CheckpointError,
    checkpoint_bytes,
    load_checkpoint,
    save_checkpoint,
)
from path_gcn.model import ModelConfig, PathGCNModel

HEADER = "<4sHHIII"


@pytest.fixture
def model() -> PathGCNModel:
    cfg = ModelConfig(L=2, c=4, k=3, p=2, variant="per-layer", seed=5)  # type: ignore
    return PathGCNModel.build(cfg, 3, 2)


def test_round_trip(model: PathGCNModel, tmp_path: Path):
    path = save_checkpoint(model, tmp_path / "model.ckpt")
    loaded = load_checkpoint(path)
    assert loaded.cfg == model.cfg
    assert (loaded.c_in, loaded.c_out) == (3, 2)
    for name, value in model.parameters().items():
        assert np.array_equal(loaded.parameters()[name], value), name
    assert checkpoint_bytes(loaded) == path.read_bytes()


def test_header(model: PathGCNModel):
    data = checkpoint_bytes(model)
    magic, version, flags, config_size, count, _ = struct.unpack_from(HEADER, data)
    assert (magic, version, flags) == (CHECKPOINT_MAGIC, 1, 0)
    assert count == len(model.parameters()) == 9
    config = data[20 : 20 + config_size]
    assert config.startswith(b'{"c_in":3,"c_out":2,"config":{')


def corrupt(data: bytes, offset: int, value: bytes) -> bytes:
    return data[:offset] + value + data[offset + len(value) :]


def test_load_errors(model: PathGCNModel, tmp_path: Path):
    data = checkpoint_bytes(model)
    path = tmp_path / "bad.ckpt"
    for bad, match in (
        (b"PGC", "too short"),
        (corrupt(data, 0, b"XXXX"), "bad magic"),
        (corrupt(data, 4, struct.pack("<H", 2)), "version 2"),
        (corrupt(data, len(data) - 1, bytes([data[-1] ^ 1])), "checksum"),
    ):
        path.write_bytes(bad)
        with pytest.raises(CheckpointError, match=match):
            load_checkpoint(path)


def test_truncated_tensor(model: PathGCNModel, tmp_path: Path):
    # A valid checksum over a payload which ends part way through a tensor
    data = checkpoint_bytes(model)[:-8]
    payload = data[20:]
    header = corrupt(data[:20], 16, struct.pack("<I", binascii.crc32(payload)))
    path = tmp_path / "short.ckpt"
    path.write_bytes(header + payload)
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
