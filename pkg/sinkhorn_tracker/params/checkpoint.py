"""
Binary checkpoint format for a ParameterStore.

Layout (all little-endian):
    magic      4 bytes  b"SKTP"
    version    uint32
    count      uint32   number of tensors
    per tensor:
        name_len uint16, name (utf-8), ndim uint8, dims uint32 * ndim
    body: every tensor's values as float64, in table order
"""
import struct
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import torch

from sinkhorn_tracker.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from sinkhorn_tracker.params.app import DTYPE, ModelConfig, ParameterStore, expected_shapes, store_from_tensors
from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import CheckpointVersionError, DataError, ShapeMismatchError

_HEADER = struct.Struct("<4sII")
_LE_FLOAT64 = np.dtype("<f8")


def save_params(params: ParameterStore, path) -> Path:
    path = Path(path)
    named = params.named_tensors()
    table = bytearray(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(named)))
    body = bytearray()
    for name, tensor in named:
        encoded = name.encode("utf-8")
        table += struct.pack("<H", len(encoded)) + encoded
        table += struct.pack("<B", tensor.dim())
        table += struct.pack(f"<{tensor.dim()}I", *tensor.shape)
        body += tensor.detach().cpu().numpy().astype(_LE_FLOAT64, copy=False).tobytes()
    try:
        path.write_bytes(bytes(table + body))
    except OSError as e:
        raise DataError(f"cannot write checkpoint: {e}", path=path)
    helper.log_json("INFO", "CHECKPOINT_SAVED", path=str(path), tensors=len(named),
                    parameters=params.num_parameters())
    return path


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise ShapeMismatchError(
                f"checkpoint truncated at byte {self.offset} (needed {size} more)", path=self.path)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def read_checkpoint(path) -> List[Tuple[str, torch.Tensor]]:
    """Decode a checkpoint into (name, tensor) pairs without checking them against a config."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"file not found: {path}", path=path)
    except OSError as e:
        raise DataError(f"cannot read checkpoint: {e}", path=path)

    reader = _Reader(data, path)
    if len(data) < _HEADER.size:
        raise ShapeMismatchError("checkpoint truncated inside the header", path=path)
    magic, version, count = reader.unpack(_HEADER.format)
    if magic != CHECKPOINT_MAGIC:
        raise DataError(f"not a parameter checkpoint (magic {magic!r})", path=path)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}", path=path)

    table = []
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        dims = reader.unpack(f"<{ndim}I") if ndim else ()
        table.append((name, tuple(dims)))

    tensors = []
    for name, dims in table:
        size = int(np.prod(dims)) if dims else 1
        raw = reader.take(size * _LE_FLOAT64.itemsize)
        values = np.frombuffer(raw, dtype=_LE_FLOAT64).astype(np.float64).reshape(dims)
        tensors.append((name, torch.from_numpy(values.copy()).to(DTYPE)))
    if reader.offset != len(data):
        raise ShapeMismatchError(
            f"checkpoint has {len(data) - reader.offset} trailing bytes", path=path)
    return tensors


def load_params(path, config: ModelConfig) -> ParameterStore:
    """Load and check every stored shape against the shapes `config` requires."""
    path = Path(path)
    stored: Dict[str, torch.Tensor] = dict(read_checkpoint(path))
    expected = expected_shapes(config)
    if set(stored) != set(expected):
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise ShapeMismatchError(
            f"checkpoint tensors do not match config (missing {missing}, unexpected {extra})", path=path)
    for name, shape in expected.items():
        if tuple(stored[name].shape) != shape:
            raise ShapeMismatchError(
                f"{name} stored with shape {tuple(stored[name].shape)}, config requires {shape}", path=path)
    helper.log_json("INFO", "CHECKPOINT_LOADED", path=str(path), tensors=len(stored))
    return store_from_tensors(config, stored)
