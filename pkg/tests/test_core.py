import logging

import numpy as np
import pandas as pd
import pytest
from pytest import approx, mark

from audiorec_eval.core import (EmbeddingTable, IdMap, InteractionLog, build_id_maps, build_seen_sets,
                                rank_users, remap_events, top_k_unseen, unmap_events)
from audiorec_eval.diagnostics import DataError, DataWarning

from .conftest import random_table

_log = logging.getLogger(__name__)


def test_log_canonical_order():
    log = InteractionLog.from_records([("b", "x", 5), ("a", "z", 3), ("a", "y", 3), ("a", "x", 1)])
    assert list(log.events["user_id"]) == ["a", "a", "a", "b"]
    # tie at t=3 falls back to item id
    assert list(log.events["item_id"]) == ["x", "y", "z", "x"]
    assert log.events["timestamp"].dtype == np.int64


def test_log_negative_timestamp():
    with pytest.raises(DataError, match="negative timestamp"):
        InteractionLog.from_records([("a", "x", -1)])


def test_log_missing_column():
    with pytest.raises(DataError, match="misses columns"):
        InteractionLog(pd.DataFrame({"user_id": ["a"], "item_id": ["x"]}))


def test_idmap_roundtrip():
    ids = IdMap(["t9", "t1", "t5"])
    assert ids.index("t1") == 1
    assert list(ids.indices(["t5", "t9"])) == [2, 0]
    assert list(ids.externals([0, 2])) == ["t9", "t5"]
    assert ids.external(1) == "t1"
    assert "t5" in ids and "t7" not in ids


def test_idmap_unmapped():
    ids = IdMap(["a", "b"])
    with pytest.raises(DataError, match="'zz'"):
        ids.indices(["a", "zz"])
    with pytest.raises(DataError):
        ids.index("zz")


def test_idmap_duplicate():
    with pytest.raises(DataError, match="duplicate"):
        IdMap(["a", "b", "a"])


def test_idmap_first_appearance_deterministic():
    first = IdMap.from_first_appearance(["c", "a", "c", "b", "a"])
    second = IdMap.from_first_appearance(["c", "a", "c", "b", "a"])
    assert first.ids == ("c", "a", "b")
    assert first == second


def test_remap_roundtrip(tiny_log):
    user_map, item_map, _ = build_id_maps(tiny_log)
    internal = remap_events(tiny_log.events, user_map, item_map)
    back = unmap_events(internal, user_map, item_map)
    pd.testing.assert_frame_equal(back, tiny_log.events.reset_index(drop=True))


def test_table_non_finite_row():
    matrix = np.ones((3, 2))
    matrix[1, 0] = np.nan
    with pytest.raises(DataError, match="row 1"):
        EmbeddingTable.from_rows(["a", "b", "c"], matrix)


def test_table_backend_dim():
    table = EmbeddingTable.from_rows(["a"], np.zeros((1, 200)), backend="MusiCNN")
    assert table.dim == 200
    with pytest.raises(DataError, match="MERT"):
        EmbeddingTable.from_rows(["a"], np.zeros((1, 200)), backend="MERT")


def test_table_float32(tiny_table):
    assert tiny_table.matrix.dtype == np.float32


def test_id_maps_drop_items_without_embedding(tiny_log):
    table = random_table(["i1", "i2", "i3", "i4", "i9"], 3)
    with pytest.warns(DataWarning, match="1 of 6"):
        user_map, item_map, n_dropped = build_id_maps(tiny_log, table)
    assert n_dropped == 1
    assert "i5" not in item_map
    assert len(item_map) == 5


def test_id_maps_intersection(tiny_log):
    a = random_table(["i1", "i2", "i3", "i5", "i9"], 3)
    b = random_table(["i1", "i2", "i3", "i4", "i9"], 5)
    with pytest.warns(DataWarning):
        _, item_map, n_dropped = build_id_maps(tiny_log, [a, b])
    assert set(item_map) == {"i1", "i2", "i3", "i9"}
    assert n_dropped == 2


def test_id_maps_no_overlap(tiny_log):
    with pytest.raises(DataError, match="no overlap"):
        build_id_maps(tiny_log, random_table(["zz"], 2))


def test_id_maps_empty_log():
    with pytest.raises(DataError, match="empty"):
        build_id_maps(InteractionLog.from_records([]))


def test_seen_sets(tiny_split):
    seen = tiny_split.seen
    u1 = tiny_split.user_map.index("u1")
    items = tiny_split.item_map.indices(["i1", "i2", "i3"])
    assert list(seen.items(u1)) == sorted(items)
    assert seen.seen(u1) == frozenset(int(i) for i in items)
    assert seen.contains([u1, u1], [items[0], tiny_split.item_map.index("i5")]).tolist() == [True, False]
    for u in seen.users():
        assert seen.items(u).max() < tiny_split.n_items
    counts = seen.item_user_counts()
    assert counts[tiny_split.item_map.index("i1")] == 2


def test_seen_sets_unmapped_item(tiny_split):
    frame = pd.DataFrame({"user": [0], "item": [99], "timestamp": [0]})
    with pytest.raises(DataError, match="99"):
        build_seen_sets(frame, tiny_split.item_map)


def test_top_k_ties_to_lower_index():
    items, scores, truncated = top_k_unseen([0.5, 0.9, 0.5, 0.9, 0.1], [], 3)
    assert list(items) == [1, 3, 0]
    assert list(scores) == approx([0.9, 0.9, 0.5])
    assert not truncated


def test_top_k_excludes_seen():
    items, _, truncated = top_k_unseen([0.5, 0.9, 0.4, 0.8], [1, 3], 2)
    assert list(items) == [0, 2]
    assert not truncated


def test_top_k_truncated():
    items, _, truncated = top_k_unseen([0.5, 0.9, 0.4], [1], 5)
    assert list(items) == [0, 2]
    assert truncated


@mark.parametrize("k", [1, 3, 7])
def test_top_k_matches_sort(k):
    rng = np.random.default_rng(k)
    scores = rng.normal(size=40)
    excluded = rng.choice(40, size=10, replace=False)
    items, _, _ = top_k_unseen(scores, excluded, k)
    keep = [i for i in np.argsort(-scores, kind="stable") if i not in set(excluded)]
    assert list(items) == keep[:k]


def test_rank_users_bad_k(tiny_split):
    with pytest.raises(DataError, match="K must be"):
        rank_users(lambda b: np.zeros((len(b), tiny_split.n_items)), [0], tiny_split.seen, 0)


def test_rank_users_non_finite(tiny_split):
    def scorer(batch):
        scores = np.zeros((len(batch), tiny_split.n_items))
        scores[0, 0] = np.nan
        return scores

    with pytest.raises(DataError, match="non-finite"):
        rank_users(scorer, [0, 1], tiny_split.seen, 2)


def test_rank_users_truncation_warning(tiny_split):
    with pytest.warns(DataWarning, match="fewer than 50"):
        rankings = rank_users(lambda b: np.zeros((len(b), tiny_split.n_items)), [0, 1], tiny_split.seen, 50)
    assert rankings.n_truncated == 2
    u = tiny_split.user_map.index("u1")
    assert len(rankings[u]) == tiny_split.n_items - 3


def test_rankings_frame(tiny_split):
    scores = np.arange(tiny_split.n_items, dtype=float)
    rankings = rank_users(lambda b: np.tile(scores, (len(b), 1)), [0, 1], tiny_split.seen, 2)
    frame = rankings.to_frame(tiny_split.user_map, tiny_split.item_map)
    assert list(frame.columns) == ["user_id", "rank", "item_id", "score"]
    assert len(frame) == 4
    assert list(frame["rank"]) == [1, 2, 1, 2]
    for u in rankings:
        assert not set(rankings[u].items) & tiny_split.seen.seen(u)
