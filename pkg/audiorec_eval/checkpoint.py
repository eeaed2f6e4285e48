"""Named-tensor checkpoint container.

Layout (little-endian)::

    b"PARC" | version u8 (=1) | kind_len u16 | kind utf-8 | n_tensors u32
    n_tensors x (name_len u16 | name utf-8 | rank u8 | rank x u32 dims | float32 data, row-major)
    config_len u32 | config JSON utf-8
"""
import json
import struct
from pathlib import Path

import attr
import numpy as np

from .diagnostics import DataError

CHECKPOINT_MAGIC = b"PARC"
CHECKPOINT_VERSION = 1

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


@attr.s(frozen=True, eq=False)
class Checkpoint:
    kind = attr.ib()
    tensors = attr.ib()
    config = attr.ib(factory=dict)


def _pack_str(text, fmt=_U16):
    raw = text.encode("utf-8")
    return fmt.pack(len(raw)) + raw


def save_checkpoint(path, kind, tensors, config=None):
    """Write ``tensors`` (name -> array, stored as float32) with a model-kind tag and a config echo."""
    chunks = [CHECKPOINT_MAGIC, _U8.pack(CHECKPOINT_VERSION), _pack_str(kind), _U32.pack(len(tensors))]
    for name in sorted(tensors):
        array = np.ascontiguousarray(tensors[name], dtype="<f4")
        chunks.append(_pack_str(name))
        chunks.append(_U8.pack(array.ndim))
        chunks.extend(_U32.pack(d) for d in array.shape)
        chunks.append(array.tobytes())
    chunks.append(_pack_str(json.dumps(config or {}, sort_keys=True, default=str), fmt=_U32))
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, n):
        if self.offset + n > len(self.data):
            raise DataError(f"{self.path}: truncated checkpoint at byte offset {self.offset}")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt):
        return fmt.unpack(self.take(fmt.size))[0]

    def string(self, fmt=_U16):
        return self.take(self.unpack(fmt)).decode("utf-8")


def load_checkpoint(path):
    reader = _Reader(Path(path).read_bytes(), path)
    magic = reader.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} at byte offset 0, expected {CHECKPOINT_MAGIC!r}")
    version = reader.unpack(_U8)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    kind = reader.string()
    tensors = {}
    for _ in range(reader.unpack(_U32)):
        name = reader.string()
        rank = reader.unpack(_U8)
        shape = tuple(reader.unpack(_U32) for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    config = json.loads(reader.string(fmt=_U32))
    return Checkpoint(kind=kind, tensors=tensors, config=config)
