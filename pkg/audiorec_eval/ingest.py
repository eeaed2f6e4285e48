"""Readers and writers for interaction logs and embedding tables, plus chunk pooling.

PARE embedding file layout (little-endian)::

    b"PARE" | version u8 (=1) | n_items u32 | dim u32
    n_items x (id_len u16 | utf-8 id)
    n_items x dim float32, row-major
"""
import logging
import struct
import warnings
from pathlib import Path

import attr
import numpy as np
import pandas as pd

from .core import EVENT_COLUMNS, EmbeddingTable, IdMap, InteractionLog
from .diagnostics import DataError, DataWarning

logger = logging.getLogger(__name__)

PARE_MAGIC = b"PARE"
PARE_VERSION = 1
_HEADER = struct.Struct("<4sBII")
_ID_LEN = struct.Struct("<H")

MAX_SKIPPED_FRACTION = 0.1

_SEPARATORS = {"tsv": "\t", "csv": ","}


def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in _SEPARATORS:
            raise DataError(f"unknown interaction format {fmt!r}; use one of {sorted(_SEPARATORS)}")
        return fmt
    return "csv" if Path(path).suffix.lower() == ".csv" else "tsv"


def _parse_timestamps(raw):
    """Epoch seconds (int or float, truncated) or datetime strings -> float seconds, NaN if unparseable."""
    raw = raw.astype(str).str.strip()
    numeric = pd.to_numeric(raw, errors="coerce")
    is_text = numeric.isna() & (raw != "")
    seconds = np.floor(numeric.to_numpy(dtype=np.float64))
    if is_text.any():
        with warnings.catch_warnings():
            # mixed or unknown formats make pandas warn about per-element parsing
            warnings.simplefilter("ignore", UserWarning)
            dates = pd.to_datetime(raw[is_text], errors="coerce", utc=True)
        since_epoch = (dates - pd.Timestamp(0, tz="UTC")) / pd.Timedelta(seconds=1)
        seconds[is_text.to_numpy()] = np.floor(since_epoch.to_numpy(dtype=np.float64))
    return seconds


def _events_from_frame(frame, source):
    """Validate raw string columns, drop malformed rows and build a canonical ``InteractionLog``."""
    missing = [c for c in EVENT_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{source}: header must contain {EVENT_COLUMNS}, missing {missing}")
    seconds = _parse_timestamps(frame["timestamp"])
    valid = (np.isfinite(seconds) & (seconds >= 0)
             & (frame["user_id"].str.strip() != "").to_numpy()
             & (frame["item_id"].str.strip() != "").to_numpy())
    n_rows = len(frame)
    n_skipped = int(n_rows - valid.sum())
    if n_skipped:
        msg = f"{source}: skipped {n_skipped} of {n_rows} malformed rows"
        if n_rows and n_skipped / n_rows > MAX_SKIPPED_FRACTION:
            raise DataError(f"{msg} (more than {MAX_SKIPPED_FRACTION:.0%})")
        logger.warning(msg)
        warnings.warn(msg, DataWarning)
    events = pd.DataFrame({
        "user_id": frame["user_id"].str.strip().to_numpy()[valid],
        "item_id": frame["item_id"].str.strip().to_numpy()[valid],
        "timestamp": seconds[valid].astype(np.int64),
    })
    log = InteractionLog(events, n_skipped=n_skipped)
    logger.info("loaded %d events (%d users, %d items) from %s",
                len(log), len(log.users), len(log.items), source)
    return log


def load_interactions(path, fmt=None):
    """Read a ``user_id,item_id,timestamp`` file (csv or tsv, inferred from the suffix if not given).

    Rows with unparseable timestamps or empty IDs are skipped with a ``DataWarning``; more than 10%
    skipped rows is fatal.
    """
    fmt = _infer_format(path, fmt)
    frame = pd.read_csv(path, sep=_SEPARATORS[fmt], dtype=str, keep_default_na=False)
    frame.columns = [c.strip() for c in frame.columns]
    return _events_from_frame(frame, str(path))


def load_onion_history(path):
    """Read the Music4All-Onion listening history export (``user_id``, ``track_id``, ``timestamp``).

    Timestamps in that export are ``YYYY-MM-DD HH:MM:SS`` strings and become epoch seconds.
    """
    frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)
    frame.columns = [c.strip() for c in frame.columns]
    frame = frame.rename(columns={"track_id": "item_id"})
    return _events_from_frame(frame, str(path))


def save_interactions(frame, path):
    """Write an external event frame with the same header the loaders expect."""
    sep = _SEPARATORS[_infer_format(path, None)]
    frame[EVENT_COLUMNS].to_csv(path, sep=sep, index=False)


def _read_pare(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, n_items, dim = _HEADER.unpack_from(data, 0)
    if magic != PARE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} at byte offset 0, expected {PARE_MAGIC!r}")
    if version != PARE_VERSION:
        raise DataError(f"{path}: unsupported version {version} at byte offset 4")
    offset = _HEADER.size
    ids = []
    for _ in range(n_items):
        if offset + _ID_LEN.size > len(data):
            raise DataError(f"{path}: truncated id record at byte offset {offset}")
        (length,) = _ID_LEN.unpack_from(data, offset)
        offset += _ID_LEN.size
        if offset + length > len(data):
            raise DataError(f"{path}: truncated id record at byte offset {offset}")
        ids.append(data[offset:offset + length].decode("utf-8"))
        offset += length
    n_bytes = n_items * dim * 4
    if offset + n_bytes > len(data):
        raise DataError(f"{path}: truncated matrix at byte offset {offset}: need {n_bytes} bytes, "
                        f"{len(data) - offset} left")
    matrix = np.frombuffer(data, dtype="<f4", count=n_items * dim, offset=offset)
    matrix = matrix.reshape(n_items, dim).astype(np.float32)
    return ids, matrix


def _read_embedding_csv(path):
    frame = pd.read_csv(path, dtype={"item_id": str})
    if frame.columns[0] != "item_id":
        raise DataError(f"{path}: first column must be item_id, found {frame.columns[0]!r}")
    return frame["item_id"].tolist(), frame.iloc[:, 1:].to_numpy(dtype=np.float64)


def load_embeddings(path, backend=None):
    """Read an embedding table from a PARE file or a CSV whose first column is ``item_id``.

    :param backend: optional backend model name; when known, the table dim is checked against it
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        ids, matrix = _read_embedding_csv(path)
    else:
        ids, matrix = _read_pare(path)
    table = EmbeddingTable(IdMap(ids), matrix, backend=backend)
    logger.info("loaded %r from %s", table, path)
    return table


def write_embeddings(table, path):
    """Write ``table`` as PARE (or CSV when ``path`` ends in .csv)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        frame = pd.DataFrame(table.matrix, columns=[f"d{j}" for j in range(table.dim)])
        frame.insert(0, "item_id", list(table.ids))
        frame.to_csv(path, index=False, float_format="%.9g")
        return
    chunks = [_HEADER.pack(PARE_MAGIC, PARE_VERSION, len(table), table.dim)]
    for item_id in table.ids:
        raw = item_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataError(f"item id of {len(raw)} bytes does not fit a PARE id record")
        chunks.append(_ID_LEN.pack(len(raw)))
        chunks.append(raw)
    chunks.append(np.ascontiguousarray(table.matrix, dtype="<f4").tobytes())
    path.write_bytes(b"".join(chunks))


def _as_chunk_matrix(chunks):
    chunks = np.asarray(chunks, dtype=np.float64)
    if chunks.ndim != 2:
        raise DataError(f"chunk set must be a T x dim matrix, got shape {chunks.shape}")
    if chunks.shape[0] == 0:
        raise DataError("empty chunk set")
    if not np.isfinite(chunks).all():
        raise DataError("non-finite value in chunk set")
    return chunks


@attr.s(frozen=True, eq=False)
class ChunkEmbeddingSet:
    """Per-chunk embeddings of one track (one row per audio time-chunk)."""

    item_id = attr.ib(converter=str)
    chunks = attr.ib(converter=_as_chunk_matrix)


def pool_chunks(chunks):
    """Track-level embedding: arithmetic mean over chunks, accumulated in float64, emitted as float32."""
    if isinstance(chunks, ChunkEmbeddingSet):
        matrix = chunks.chunks
    else:
        matrix = _as_chunk_matrix(chunks)
    return matrix.mean(axis=0).astype(np.float32)


def _iter_chunk_arrays(path):
    path = Path(path)
    if path.is_dir():
        for fn in sorted(path.glob("*.npy")):
            yield fn.stem, np.load(fn)
    else:
        with np.load(path) as archive:
            for key in sorted(archive.files):
                yield key, archive[key]


def pool_chunk_archive(path, backend=None):
    """Pool every track of a ``.npz`` archive (or a directory of ``.npy`` files) into a table."""
    ids, rows = [], []
    for item_id, chunks in _iter_chunk_arrays(path):
        rows.append(pool_chunks(ChunkEmbeddingSet(item_id, chunks)))
        ids.append(item_id)
    if not rows:
        raise DataError(f"{path}: no chunk arrays found")
    return EmbeddingTable(IdMap(ids), np.vstack(rows), backend=backend)


def load_embedding_source(path, backend=None):
    """Embedding table from any supported source: PARE, CSV, or pooled chunks (``.npz`` / ``.npy`` dir)."""
    path = Path(path)
    if path.is_dir() or path.suffix.lower() == ".npz":
        table = pool_chunk_archive(path, backend=backend)
        logger.info("pooled %r from %s", table, path)
        return table
    return load_embeddings(path, backend=backend)


def load_interaction_source(path, fmt=None):
    """Interaction log from a csv/tsv file, or from the Music4All-Onion export when ``fmt="onion"``."""
    if fmt == "onion":
        return load_onion_history(path)
    return load_interactions(path, fmt)
