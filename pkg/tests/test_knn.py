import numpy as np
import pytest
from pytest import approx

from audiorec_eval.constants import Partition
from audiorec_eval.diagnostics import DataError
from audiorec_eval.evaluation import evaluate_rankings
from audiorec_eval.knn import build_user_profiles, cosine_scores, item_matrix, recommend_knn
from audiorec_eval.synthetic import make_planted_dataset

from .conftest import split_log


def test_profile_is_mean(tiny_split, tiny_table):
    profiles = build_user_profiles(tiny_split, tiny_table)
    items = item_matrix(tiny_split, tiny_table).astype(np.float64)
    u1 = tiny_split.user_map.index("u1")
    expected = items[tiny_split.item_map.indices(["i1", "i2", "i3"])].mean(axis=0)
    assert profiles.matrix[u1] == approx(expected)
    assert profiles.n_users == tiny_split.n_users


def test_profile_uses_distinct_items(tiny_split):
    matrix = np.eye(tiny_split.n_items)
    profiles = build_user_profiles(tiny_split, matrix)
    for user in range(tiny_split.n_users):
        seen = tiny_split.seen.items(user)
        assert profiles.matrix[user, seen] == approx(np.full(seen.size, 1.0 / seen.size))


def test_matrix_row_mismatch(tiny_split):
    with pytest.raises(DataError, match="rows"):
        item_matrix(tiny_split, np.zeros((2, 3)))


def test_cosine_scores():
    scores = cosine_scores(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[2.0, 0.0], [1.0, 1.0], [0.0, -3.0]]))
    assert scores[0] == approx([1.0, np.sqrt(0.5), 0.0])
    assert scores[1] == approx([0.0, 0.0, 0.0])


def test_recommend_excludes_seen(tiny_split, tiny_table):
    profiles = build_user_profiles(tiny_split, tiny_table)
    items = item_matrix(tiny_split, tiny_table)
    rankings = recommend_knn(profiles, items, tiny_split.seen, 2)
    assert len(rankings) == tiny_split.n_users
    for user in rankings:
        ranking = rankings[user]
        assert not set(ranking.items) & tiny_split.seen.seen(user)
        assert list(ranking.scores) == sorted(ranking.scores, reverse=True)


def test_recommend_matches_bruteforce(tiny_split, tiny_table):
    profiles = build_user_profiles(tiny_split, tiny_table)
    items = item_matrix(tiny_split, tiny_table).astype(np.float64)
    rankings = recommend_knn(profiles, items, tiny_split.seen, 1, users=tiny_split.users(Partition.Test))
    for user in rankings:
        p = profiles.matrix[user]
        sims = {i: p @ items[i] / (np.linalg.norm(p) * np.linalg.norm(items[i]))
                for i in range(tiny_split.n_items) if i not in tiny_split.seen.seen(user)}
        assert rankings[user].items[0] == max(sims, key=sims.get)


def test_identical_embeddings_tie_to_lowest_index(tiny_split):
    matrix = np.ones((tiny_split.n_items, 3))
    profiles = build_user_profiles(tiny_split, matrix)
    rankings = recommend_knn(profiles, matrix, tiny_split.seen, 1)
    for user in rankings:
        unseen = [i for i in range(tiny_split.n_items) if i not in tiny_split.seen.seen(user)]
        assert rankings[user].items[0] == unseen[0]


def test_planted_informative_beats_random():
    data = make_planted_dataset(n_genres=5, n_items=200, n_users=80, seed=2)
    split = split_log(data.log, embeddings=[data.informative, data.random])
    relevance = split.relevance(Partition.Test)
    hits = {}
    for name, table in (("informative", data.informative), ("random", data.random)):
        items = item_matrix(split, table)
        rankings = recommend_knn(build_user_profiles(split, items), items, split.seen, 10, users=sorted(relevance))
        hits[name] = evaluate_rankings(rankings, relevance, 10).means["hitrate"]
    assert hits["informative"] > hits["random"]


@pytest.mark.parametrize("scale", [0.25, 3.7, 1000.0])
def test_rankings_ignore_embedding_scale(scale):
    data = make_planted_dataset(n_genres=3, n_items=40, n_users=20, dim=6, n_train=10, n_holdout=4, seed=2)
    split = split_log(data.log, embeddings=data.informative)
    items = item_matrix(split, data.informative).astype(np.float64)
    scaled = items * scale
    base = recommend_knn(build_user_profiles(split, items), items, split.seen, 10)
    other = recommend_knn(build_user_profiles(split, scaled), scaled, split.seen, 10)
    for user in range(split.n_users):
        assert np.array_equal(other[user].items, base[user].items)
    base_scores = cosine_scores(build_user_profiles(split, items).matrix, items)
    other_scores = cosine_scores(build_user_profiles(split, scaled).matrix, scaled)
    assert np.array_equal(np.argsort(other_scores, axis=1, kind="stable"),
                          np.argsort(base_scores, axis=1, kind="stable"))
