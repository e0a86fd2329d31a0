# MIT License
"""Save and load trained models as versioned binary checkpoint files.

A checkpoint is a little-endian `CheckpointHeader`, then the model config as
canonical JSON, then each named parameter tensor:

    name_len: u16, name: utf-8, group: u8 (0=gcn, 1=oc), ndim: u8,
    shape: u32 * ndim, data: float64 * prod(shape)

The header carries a CRC32 of everything after it. Identical models produce
byte-identical files.
"""

from __future__ import annotations

import binascii
import json
import struct
from ctypes import LittleEndianStructure, c_char, c_uint16, c_uint32, sizeof
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from . import logger
from .model import ModelConfig, PathGCNModel
from .nn import GROUPS, Array, Group

log = logger.getLogger(__name__)

CHECKPOINT_MAGIC = b"PGCK"
CHECKPOINT_VERSION = 1
TENSOR_DTYPE = np.dtype("<f8")


class CheckpointError(Exception):
    "Raised if a checkpoint file is malformed or does not match its model."


class CheckpointHeader(LittleEndianStructure):
    """The fixed size header at the start of a checkpoint file."""

    _pack_ = 1
    _fields_ = [
        ("magic", c_char * 4),
        ("version", c_uint16),
        ("flags", c_uint16),
        ("config_size", c_uint32),
        ("tensor_count", c_uint32),
        ("payload_crc32", c_uint32),
    ]
    magic: bytes
    version: int
    flags: int
    config_size: int
    tensor_count: int
    payload_crc32: int


assert sizeof(CheckpointHeader) == 20


def _config_bytes(model: PathGCNModel) -> bytes:
    config = {"config": model.cfg.to_dict(), "c_in": model.c_in, "c_out": model.c_out}
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode()


def _tensor_bytes(name: str, group: Group, tensor: Array) -> bytes:
    encoded = name.encode()
    return b"".join(
        (
            struct.pack("<H", len(encoded)) + encoded,
            struct.pack("<BB", GROUPS.index(group), tensor.ndim),
            struct.pack(f"<{tensor.ndim}I", *tensor.shape),
            np.ascontiguousarray(tensor, dtype=TENSOR_DTYPE).tobytes(),
        )
    )


def checkpoint_bytes(model: PathGCNModel) -> bytes:
    """Return the checkpoint file contents for `model`."""
    config = _config_bytes(model)
    groups = model.groups()
    tensors = b"".join(
        _tensor_bytes(name, groups[name], tensor)
        for name, tensor in model.parameters().items()
    )
    payload = config + tensors
    header = CheckpointHeader(
        magic=CHECKPOINT_MAGIC,
        version=CHECKPOINT_VERSION,
        flags=0,
        config_size=len(config),
        tensor_count=len(groups),
        payload_crc32=binascii.crc32(payload),
    )
    return bytes(header) + payload


def save_checkpoint(model: PathGCNModel, filename: Path | str) -> Path:
    """Write `model` to `filename` and return the path."""
    path = Path(filename)
    path.write_bytes(checkpoint_bytes(model))
    log.action(f"Wrote checkpoint '{path}'.")
    return path


def _read_tensors(data: bytes, count: int) -> Dict[str, Tuple[str, Array]]:
    tensors: Dict[str, Tuple[str, Array]] = {}
    pos = 0
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode()
            pos += name_len
            group, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) * TENSOR_DTYPE.itemsize
            if pos + size > len(data):
                raise CheckpointError(f"Tensor '{name}' is truncated.")
            tensor = np.frombuffer(data, TENSOR_DTYPE, int(np.prod(shape)), pos)
            tensors[name] = (GROUPS[group], tensor.reshape(shape).astype(np.float64))
            pos += size
    except (struct.error, IndexError, UnicodeDecodeError) as err:
        raise CheckpointError(f"Malformed tensor record: {err}") from err
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} unexpected bytes after the tensors.")
    return tensors


def load_checkpoint(filename: Path | str) -> PathGCNModel:
    """Read a checkpoint and return the model it holds."""
    data = Path(filename).read_bytes()
    if len(data) < sizeof(CheckpointHeader):
        raise CheckpointError(f"'{filename}' is too short to be a checkpoint.")
    header = CheckpointHeader.from_buffer_copy(data)
    if header.magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"'{filename}' is not a checkpoint (bad magic).")
    if header.version != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {header.version}.")
    payload = data[sizeof(CheckpointHeader) :]
    if binascii.crc32(payload) != header.payload_crc32:
        raise CheckpointError(f"'{filename}' is corrupt (checksum mismatch).")
    try:
        config = json.loads(payload[: header.config_size])
        cfg = ModelConfig.from_dict(config["config"])
        model = PathGCNModel.build(cfg, config["c_in"], config["c_out"])
    except (ValueError, KeyError, TypeError) as err:
        raise CheckpointError(f"Invalid checkpoint config: {err}") from err
    tensors = _read_tensors(payload[header.config_size :], header.tensor_count)
    groups = model.groups()
    for name, (group, _) in tensors.items():
        if groups.get(name) != group:
            raise CheckpointError(f"Tensor '{name}' has group '{group}'.")
    try:
        model.load_state({name: tensor for name, (_, tensor) in tensors.items()})
    except ValueError as err:
        raise CheckpointError(str(err)) from err
    log.debug(f"Loaded {model} from '{filename}'.")
    return model
