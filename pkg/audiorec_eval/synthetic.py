"""Synthetic listening logs with known structure, shared by tests and the driver scripts."""
import logging

import attr
import numpy as np
import pandas as pd

from .config import parse_boundary
from .constants import SECONDS_PER_DAY
from .core import EmbeddingTable, InteractionLog

logger = logging.getLogger(__name__)

DEFAULT_BOUNDARY = parse_boundary("2020-02-20")


def _user_ids(n):
    return np.array([f"u{i:05d}" for i in range(n)], dtype=object)


def _item_ids(n):
    return np.array([f"t{i:05d}" for i in range(n)], dtype=object)


@attr.s(frozen=True, eq=False)
class PlantedDataset:
    """A log whose users favour one latent genre, plus an informative and an uninformative table."""

    log = attr.ib()
    informative = attr.ib()
    random = attr.ib()
    item_genre = attr.ib()
    user_genre = attr.ib()
    boundary = attr.ib()


def make_planted_dataset(n_genres=20, n_items=2000, n_users=500, dim=32, n_train=40, n_holdout=10,
                         genre_affinity=0.8, noise=0.5, seed=0, boundary=DEFAULT_BOUNDARY):
    """Planted-genre data.

    Every user draws ``n_train`` training plays (spread over the 300 days before ``boundary``) and
    ``n_holdout`` holdout plays (over the 28 days after), each from their genre with probability
    ``genre_affinity`` and uniformly otherwise. The informative table is the item's genre centroid
    plus gaussian ``noise``; the random table is pure noise.
    """
    rng = np.random.default_rng(seed)
    item_genre = rng.integers(0, n_genres, size=n_items)
    user_genre = rng.integers(0, n_genres, size=n_users)
    by_genre = [np.flatnonzero(item_genre == g) for g in range(n_genres)]
    empty = [g for g, items in enumerate(by_genre) if items.size == 0]
    if empty:
        raise ValueError(f"genres {empty} received no items; use more items or fewer genres")

    def draw(user, n):
        own = rng.random(n) < genre_affinity
        pool = by_genre[user_genre[user]]
        return np.where(own, pool[rng.integers(0, pool.size, size=n)], rng.integers(0, n_items, size=n))

    users, items, stamps = [], [], []
    for user in range(n_users):
        for n, start, span in ((n_train, boundary - 300 * SECONDS_PER_DAY, 300 * SECONDS_PER_DAY),
                               (n_holdout, boundary, 28 * SECONDS_PER_DAY)):
            users.append(np.full(n, user))
            items.append(draw(user, n))
            stamps.append(start + rng.integers(0, span, size=n))
    user_ids, item_ids = _user_ids(n_users), _item_ids(n_items)
    events = pd.DataFrame({
        "user_id": user_ids[np.concatenate(users)],
        "item_id": item_ids[np.concatenate(items)],
        "timestamp": np.concatenate(stamps),
    })
    centroids = rng.normal(size=(n_genres, dim))
    informative = centroids[item_genre] + noise * rng.normal(size=(n_items, dim))
    uninformative = rng.normal(size=(n_items, dim))
    logger.info("planted dataset: %d users, %d items, %d genres, %d events",
                n_users, n_items, n_genres, len(events))
    return PlantedDataset(
        log=InteractionLog(events),
        informative=EmbeddingTable.from_rows(item_ids, informative),
        random=EmbeddingTable.from_rows(item_ids, uninformative),
        item_genre=item_genre,
        user_genre=user_genre,
        boundary=boundary,
    )


def make_repeated_item_dataset(n_users=200, n_items=20, min_len=3, max_len=12, seed=0,
                               boundary=DEFAULT_BOUNDARY):
    """Every user replays one planted item a few times before ``boundary``.

    After the boundary each user plays the next item (planted + 1 modulo ``n_items``) once, so the
    temporal split keeps every user.

    :return: (log, planted item id per user id)
    """
    rng = np.random.default_rng(seed)
    user_ids, item_ids = _user_ids(n_users), _item_ids(n_items)
    planted = rng.integers(0, n_items, size=n_users)
    lengths = rng.integers(min_len, max_len + 1, size=n_users)
    records = []
    for user in range(n_users):
        stamps = np.sort(boundary - rng.choice(np.arange(1, 200 * SECONDS_PER_DAY, 3600), size=lengths[user],
                                               replace=False))
        records.extend((user_ids[user], item_ids[planted[user]], int(s)) for s in stamps)
        records.append((user_ids[user], item_ids[(planted[user] + 1) % n_items], boundary + SECONDS_PER_DAY))
    return InteractionLog.from_records(records), dict(zip(user_ids, item_ids[planted]))


def make_random_log(seed=0, n_users=30, n_items=25, n_events=400, boundary=DEFAULT_BOUNDARY,
                    days_before=60, days_after=40):
    """Uniformly random events scattered around ``boundary``; used for split property checks."""
    rng = np.random.default_rng(seed)
    events = pd.DataFrame({
        "user_id": _user_ids(n_users)[rng.integers(0, n_users, size=n_events)],
        "item_id": _item_ids(n_items)[rng.integers(0, n_items, size=n_events)],
        "timestamp": boundary + rng.integers(-days_before * SECONDS_PER_DAY, days_after * SECONDS_PER_DAY,
                                             size=n_events),
    })
    return InteractionLog(events)
