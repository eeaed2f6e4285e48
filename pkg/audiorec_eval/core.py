"""Shared domain types: interaction logs, ID maps, embedding tables, seen sets and rankings.

External IDs are strings; every model works on contiguous internal indices produced by ``IdMap``.
Event frames come in two flavours:

- external: columns ``user_id``, ``item_id``, ``timestamp`` (``InteractionLog.events``)
- internal: columns ``user``, ``item``, ``timestamp`` (``DatasetSplit`` partitions)
"""
import logging
import warnings
from collections.abc import Mapping

import attr
import numpy as np
import pandas as pd
from tqdm import tqdm

from .diagnostics import DataError, DataWarning
from .mappings import backend_dim

logger = logging.getLogger(__name__)

EVENT_COLUMNS = ["user_id", "item_id", "timestamp"]


def canonical_events(frame):
    """Return a copy of an external event frame sorted by (user_id, timestamp, item_id)."""
    missing = [c for c in EVENT_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"event frame misses columns {missing}; found {list(frame.columns)}")
    events = frame[EVENT_COLUMNS].copy()
    events["user_id"] = events["user_id"].astype(str)
    events["item_id"] = events["item_id"].astype(str)
    events["timestamp"] = events["timestamp"].astype(np.int64)
    if len(events) and events["timestamp"].min() < 0:
        bad = events.loc[events["timestamp"] < 0].iloc[0]
        raise DataError(f"negative timestamp {bad['timestamp']} for user {bad['user_id']!r}")
    events = events.sort_values(["user_id", "timestamp", "item_id"], kind="mergesort")
    return events.reset_index(drop=True)


@attr.s(frozen=True, eq=False, repr=False)
class InteractionLog:
    """Timestamped implicit-feedback events, always held in canonical order."""

    events = attr.ib(converter=canonical_events)
    n_skipped = attr.ib(default=0)

    @classmethod
    def from_records(cls, records, n_skipped=0):
        """Build a log from (user_id, item_id, timestamp) tuples."""
        return cls(pd.DataFrame(list(records), columns=EVENT_COLUMNS), n_skipped=n_skipped)

    def __len__(self):
        return len(self.events)

    @property
    def users(self):
        return pd.unique(self.events["user_id"])

    @property
    def items(self):
        return pd.unique(self.events["item_id"])

    def subset(self, mask):
        """Return the log restricted to a boolean row mask."""
        return InteractionLog(self.events.loc[np.asarray(mask, dtype=bool)])

    def __repr__(self):
        return "<InteractionLog(%r events, %r users, %r items)>" % (
            len(self), len(self.users), len(self.items))


def _to_id_tuple(values):
    return tuple(str(v) for v in values)


@attr.s(frozen=True, repr=False)
class IdMap:
    """Bijection between external string IDs and indices 0..n-1."""

    ids = attr.ib(converter=_to_id_tuple)
    _forward = attr.ib(init=False, eq=False)
    _index = attr.ib(init=False, eq=False)

    @_forward.default
    def _build_forward(self):
        forward = {}
        for idx, ext in enumerate(self.ids):
            if ext in forward:
                raise DataError(f"duplicate id {ext!r} in IdMap")
            forward[ext] = idx
        return forward

    @_index.default
    def _build_index(self):
        return pd.Index(self.ids, dtype=object)

    @classmethod
    def from_first_appearance(cls, values):
        """Map distinct values in the order they first appear."""
        return cls(pd.unique(np.asarray(list(values), dtype=object)))

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    def __contains__(self, ext):
        return ext in self._forward

    def index(self, ext):
        try:
            return self._forward[ext]
        except KeyError:
            raise DataError(f"unmapped id {ext!r}") from None

    def indices(self, values):
        """Vectorized forward mapping; raises ``DataError`` naming the first unmapped id."""
        values = np.asarray(values, dtype=object)
        idx = self._index.get_indexer(values)
        if (idx < 0).any():
            raise DataError(f"unmapped id {values[np.flatnonzero(idx < 0)[0]]!r}")
        return idx.astype(np.int64)

    def external(self, idx):
        return self.ids[idx]

    def externals(self, indices):
        return np.asarray(self.ids, dtype=object)[np.asarray(indices, dtype=np.int64)]

    def __repr__(self):
        return "<IdMap(%r ids)>" % len(self)


def _as_float32_matrix(matrix):
    matrix = np.ascontiguousarray(np.asarray(matrix, dtype=np.float32))
    if matrix.ndim != 2:
        raise DataError(f"embedding matrix must be 2-D, got shape {matrix.shape}")
    return matrix


@attr.s(frozen=True, eq=False, repr=False)
class EmbeddingTable:
    """Item-ID aligned float32 matrix of pretrained representations."""

    ids = attr.ib(validator=attr.validators.instance_of(IdMap))
    matrix = attr.ib(converter=_as_float32_matrix)
    backend = attr.ib(default=None)

    def __attrs_post_init__(self):
        if self.matrix.shape[0] != len(self.ids):
            raise DataError(f"embedding matrix has {self.matrix.shape[0]} rows for {len(self.ids)} ids")
        if self.matrix.shape[1] < 1:
            raise DataError("embedding dim must be positive")
        bad_rows = np.flatnonzero(~np.isfinite(self.matrix).all(axis=1))
        if bad_rows.size:
            raise DataError(f"non-finite values in embedding row {bad_rows[0]} "
                            f"(item {self.ids.external(bad_rows[0])!r})")
        expected = backend_dim(self.backend)
        if expected is not None and expected != self.dim:
            raise DataError(f"backend {self.backend} produces dim {expected}, table has dim {self.dim}")

    @classmethod
    def from_rows(cls, item_ids, matrix, backend=None):
        return cls(IdMap(item_ids), matrix, backend=backend)

    @property
    def dim(self):
        return self.matrix.shape[1]

    def __len__(self):
        return len(self.ids)

    def aligned(self, item_map):
        """Rows of the table in the order of ``item_map`` (every mapped item must have a row)."""
        return self.matrix[self.ids.indices(item_map.ids)]

    def __repr__(self):
        return "<EmbeddingTable(%r items, dim=%r, backend=%r)>" % (len(self), self.dim, self.backend)


def build_id_maps(log, embeddings=None):
    """Map users and items of ``log`` to contiguous indices.

    Items are kept only when every table in ``embeddings`` (one ``EmbeddingTable`` or a sequence of
    them) has a row for them; ``None`` keeps all log items. Users are mapped in first-appearance order
    over the events that survive the item filter.

    :return: (user IdMap, item IdMap, number of distinct log items dropped)
    """
    if len(log) == 0:
        raise DataError("interaction log is empty")
    events = log.events
    log_items = pd.Index(pd.unique(events["item_id"]), dtype=object)
    if embeddings is None:
        tables = []
    elif isinstance(embeddings, EmbeddingTable):
        tables = [embeddings]
    else:
        tables = list(embeddings)

    keep = np.ones(len(log_items), dtype=bool)
    for table in tables:
        keep &= log_items.isin(table.ids.ids)
    if not keep.any():
        sizes = ", ".join(str(len(t)) for t in tables)
        raise DataError(f"no overlap between {len(log_items)} log items and embedding items ({sizes})")

    n_dropped = int((~keep).sum())
    if n_dropped:
        msg = f"{n_dropped} of {len(log_items)} log items have no embedding and were dropped"
        logger.warning(msg)
        warnings.warn(msg, DataWarning)

    item_map = IdMap(log_items[keep])
    kept_events = events["item_id"].isin(item_map.ids)
    user_map = IdMap.from_first_appearance(events.loc[kept_events, "user_id"].to_numpy())
    return user_map, item_map, n_dropped


def remap_events(frame, user_map, item_map):
    """External event frame -> internal frame (``user``, ``item``, ``timestamp``)."""
    return pd.DataFrame({
        "user": user_map.indices(frame["user_id"].to_numpy()),
        "item": item_map.indices(frame["item_id"].to_numpy()),
        "timestamp": frame["timestamp"].to_numpy(dtype=np.int64),
    })


def unmap_events(frame, user_map, item_map):
    """Internal event frame -> external frame (``user_id``, ``item_id``, ``timestamp``)."""
    return pd.DataFrame({
        "user_id": user_map.externals(frame["user"].to_numpy()),
        "item_id": item_map.externals(frame["item"].to_numpy()),
        "timestamp": frame["timestamp"].to_numpy(dtype=np.int64),
    })


@attr.s(frozen=True, eq=False, repr=False)
class SeenSets:
    """Distinct training items per user, stored as sorted (user * n_items + item) codes."""

    n_items = attr.ib()
    codes = attr.ib()
    _offsets = attr.ib(init=False)

    @_offsets.default
    def _build_offsets(self):
        users = self.codes // self.n_items
        starts = np.r_[0, np.flatnonzero(np.diff(users)) + 1] if users.size else np.zeros(0, np.int64)
        bounds = np.r_[starts, users.size]
        return {int(users[s]): (int(s), int(e)) for s, e in zip(bounds[:-1], bounds[1:])}

    def items(self, user):
        """Sorted internal item indices seen by ``user`` (empty when the user has no train events)."""
        span = self._offsets.get(int(user))
        if span is None:
            return np.zeros(0, dtype=np.int64)
        return self.codes[span[0]:span[1]] % self.n_items

    def seen(self, user):
        return frozenset(int(i) for i in self.items(user))

    def users(self):
        return np.array(sorted(self._offsets), dtype=np.int64)

    def __contains__(self, user):
        return int(user) in self._offsets

    def __len__(self):
        return len(self._offsets)

    def contains(self, users, items):
        """Vectorized membership test of (user, item) pairs."""
        query = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(self.codes, query)
        pos = np.minimum(pos, max(self.codes.size - 1, 0))
        if not self.codes.size:
            return np.zeros(query.shape, dtype=bool)
        return self.codes[pos] == query

    def item_user_counts(self):
        """Number of distinct users per item."""
        return np.bincount(self.codes % self.n_items, minlength=self.n_items)

    def __repr__(self):
        return "<SeenSets(%r users, %r pairs)>" % (len(self), self.codes.size)


def build_seen_sets(train, item_map, user_map=None):
    """Build per-user seen sets from training events.

    ``train`` is either an internal frame (``user``, ``item``) or an external one (``user_id``,
    ``item_id``), the latter requiring ``user_map``.
    """
    if "item_id" in train.columns:
        if user_map is None:
            raise DataError("external events need a user IdMap to build seen sets")
        users = user_map.indices(train["user_id"].to_numpy())
        items = item_map.indices(train["item_id"].to_numpy())
    else:
        users = train["user"].to_numpy(dtype=np.int64)
        items = train["item"].to_numpy(dtype=np.int64)
        bad = np.flatnonzero((items < 0) | (items >= len(item_map)))
        if bad.size:
            raise DataError(f"unmapped item index {items[bad[0]]} (item map has {len(item_map)} ids)")
        if (users < 0).any():
            raise DataError(f"unmapped user index {users[users < 0][0]}")
    codes = np.unique(users * len(item_map) + items)
    return SeenSets(len(item_map), codes)


@attr.s(frozen=True, eq=False)
class Ranking:
    """Top-K items of one user, best first."""

    user = attr.ib()
    items = attr.ib()
    scores = attr.ib()
    truncated = attr.ib(default=False)

    def __len__(self):
        return len(self.items)


class Rankings(Mapping):
    """Rankings keyed by internal user index."""

    def __init__(self, rankings, k):
        self._by_user = {int(r.user): r for r in rankings}
        self.k = k

    def __getitem__(self, user):
        return self._by_user[int(user)]

    def __iter__(self):
        return iter(sorted(self._by_user))

    def __len__(self):
        return len(self._by_user)

    @property
    def n_truncated(self):
        return sum(r.truncated for r in self._by_user.values())

    def to_frame(self, user_map, item_map):
        """Long table ``user_id, rank, item_id, score`` (rank starts at 1)."""
        rows = [r for r in (self._by_user[u] for u in self) if len(r)]
        if not rows:
            return pd.DataFrame(columns=["user_id", "rank", "item_id", "score"])
        users = np.concatenate([np.full(len(r), r.user, dtype=np.int64) for r in rows])
        ranks = np.concatenate([np.arange(1, len(r) + 1) for r in rows])
        items = np.concatenate([r.items for r in rows])
        scores = np.concatenate([r.scores for r in rows])
        return pd.DataFrame({"user_id": user_map.externals(users), "rank": ranks,
                             "item_id": item_map.externals(items), "score": scores})

    def save(self, path, user_map, item_map):
        self.to_frame(user_map, item_map).to_csv(path, sep="\t", index=False, float_format="%.8g")


def top_k_unseen(scores, excluded, k):
    """Best ``k`` items of a score vector, skipping ``excluded``; ties go to the lower index.

    :return: (items, scores, truncated) where ``truncated`` flags fewer than ``k`` candidates
    """
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.ones(scores.shape[0], dtype=bool)
    keep[np.asarray(excluded, dtype=np.int64)] = False
    candidates = np.flatnonzero(keep)
    truncated = candidates.size < k
    k_eff = min(k, candidates.size)
    if k_eff == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0), truncated
    cand_scores = scores[candidates]
    if k_eff < candidates.size:
        kth = -np.partition(-cand_scores, k_eff - 1)[k_eff - 1]
        within = cand_scores >= kth
        candidates, cand_scores = candidates[within], cand_scores[within]
    order = np.lexsort((candidates, -cand_scores))[:k_eff]
    return candidates[order], cand_scores[order], truncated


def rank_users(score_batch, users, seen, k, batch_size=256, progress=False, label="ranking"):
    """Rank all items for ``users`` with a batched scorer.

    :param score_batch: callable mapping an int array of users to a (len(users), n_items) score matrix
    :param seen: ``SeenSets`` whose items are removed from each ranking
    """
    if k < 1:
        raise DataError(f"K must be >= 1, got {k}")
    users = np.asarray(users, dtype=np.int64)
    result = []
    starts = range(0, users.size, batch_size)
    for start in tqdm(starts, desc=label, disable=not progress):
        batch = users[start:start + batch_size]
        scores = score_batch(batch)
        if not np.isfinite(scores).all():
            raise DataError(f"non-finite scores while {label} users {batch[0]}..{batch[-1]}")
        for row, user in zip(scores, batch):
            items, item_scores, truncated = top_k_unseen(row, seen.items(user), k)
            result.append(Ranking(int(user), items, item_scores, truncated))
    rankings = Rankings(result, k)
    if rankings.n_truncated:
        msg = f"{rankings.n_truncated} of {len(rankings)} rankings hold fewer than {k} unseen items"
        logger.warning(msg)
        warnings.warn(msg, DataWarning)
    return rankings
