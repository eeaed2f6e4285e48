"""Temporal train/validation/test protocol with cold-entity removal and new-item filtering."""
import json
import logging
from pathlib import Path

import attr
import numpy as np
import pandas as pd

from .constants import Partition
from .core import build_id_maps, build_seen_sets, remap_events, unmap_events
from .diagnostics import DataError
from .ingest import save_interactions

logger = logging.getLogger(__name__)


def temporal_split(log, config):
    """Cut ``log`` into the training window and the holdout window (both half-open).

    Events outside ``[boundary - train_window, boundary + holdout_window)`` are discarded.

    :return: (train log, holdout log)
    """
    stamps = log.events["timestamp"]
    start = config.boundary - config.train_window
    end = config.boundary + config.holdout_window
    train_mask = (stamps >= start) & (stamps < config.boundary)
    holdout_mask = (stamps >= config.boundary) & (stamps < end)
    if not holdout_mask.any():
        raise DataError(f"empty holdout: no events in [{config.boundary}, {end})")
    if not train_mask.any():
        raise DataError(f"empty train: no events in [{start}, {config.boundary})")
    n_discarded = len(log) - int(train_mask.sum()) - int(holdout_mask.sum())
    logger.info("temporal split: %d train, %d holdout, %d discarded events",
                train_mask.sum(), holdout_mask.sum(), n_discarded)
    return log.subset(train_mask), log.subset(holdout_mask)


def prior_events(log, config):
    """Events older than the training window; they still count as a user's listening history."""
    return log.subset(log.events["timestamp"] < config.boundary - config.train_window)


def _sorted_internal(frame):
    return frame.sort_values(["user", "timestamp", "item"], kind="mergesort").reset_index(drop=True)


@attr.s(frozen=True, eq=False, repr=False)
class DatasetSplit:
    """Train/validation/test partitions on internal indices, with the maps and training seen sets."""

    train = attr.ib()
    validation = attr.ib()
    test = attr.ib()
    user_map = attr.ib()
    item_map = attr.ib()
    seen = attr.ib()
    seed = attr.ib(default=None)
    n_dropped_items = attr.ib(default=0)

    @property
    def n_users(self):
        return len(self.user_map)

    @property
    def n_items(self):
        return len(self.item_map)

    def events(self, partition):
        if partition not in Partition.all:
            raise KeyError(f"unknown partition {partition!r}")
        return getattr(self, partition)

    def users(self, partition):
        """Sorted internal indices of the users present in ``partition``."""
        return np.unique(self.events(partition)["user"].to_numpy())

    def relevance(self, partition):
        """Distinct relevant items per evaluation user (binary relevance)."""
        frame = self.events(partition)[["user", "item"]].drop_duplicates()
        return {int(u): np.sort(g.to_numpy()) for u, g in frame.groupby("user")["item"]}

    def __repr__(self):
        return "<DatasetSplit(%r users, %r items, train=%r, validation=%r, test=%r)>" % (
            self.n_users, self.n_items, len(self.train), len(self.validation), len(self.test))


def sanitize_and_partition(train, holdout, seed, embeddings=None, prior=None):
    """Build a ``DatasetSplit`` from the two windows of ``temporal_split``.

    1. holdout events whose user or item is absent from train are dropped
    2. holdout events whose item the user already played (train, or ``prior`` if given) are dropped
    3. surviving holdout users are shuffled with ``seed`` and dealt alternately to validation and test

    :param embeddings: optional table(s); train items without a row in all of them leave the universe
    """
    user_map, item_map, n_dropped = build_id_maps(train, embeddings)
    train_events = train.events[train.events["item_id"].isin(item_map.ids)]
    train_int = _sorted_internal(remap_events(train_events, user_map, item_map))
    seen = build_seen_sets(train_int, item_map)

    hold = holdout.events
    known = hold["user_id"].isin(user_map.ids) & hold["item_id"].isin(item_map.ids)
    hold_int = remap_events(hold.loc[known], user_map, item_map)

    played = seen.contains(hold_int["user"].to_numpy(), hold_int["item"].to_numpy())
    if prior is not None and len(prior):
        old = prior.events
        old = old[old["user_id"].isin(user_map.ids) & old["item_id"].isin(item_map.ids)]
        old_codes = (user_map.indices(old["user_id"].to_numpy()) * len(item_map)
                     + item_map.indices(old["item_id"].to_numpy()))
        hold_codes = hold_int["user"].to_numpy() * len(item_map) + hold_int["item"].to_numpy()
        played |= np.isin(hold_codes, old_codes)
    hold_int = hold_int.loc[~played]
    logger.info("holdout sanitizing: %d cold events, %d already-played events, %d kept",
                int((~known).sum()), int(played.sum()), len(hold_int))

    eval_users = np.unique(hold_int["user"].to_numpy())
    if eval_users.size == 0:
        raise DataError("no evaluation users survive holdout sanitizing")
    if eval_users.size == 1:
        raise DataError("only one evaluation user survives holdout sanitizing, the test partition would be empty")
    order = np.random.default_rng(seed).permutation(eval_users)
    validation_users, test_users = order[0::2], order[1::2]

    split = DatasetSplit(
        train=train_int,
        validation=_sorted_internal(hold_int[hold_int["user"].isin(validation_users)]),
        test=_sorted_internal(hold_int[hold_int["user"].isin(test_users)]),
        user_map=user_map,
        item_map=item_map,
        seen=seen,
        seed=seed,
        n_dropped_items=n_dropped,
    )
    logger.info("built %r", split)
    return split


def split_report(split):
    """Users, distinct items and events per partition."""
    rows = []
    for partition in Partition.all:
        events = split.events(partition)
        rows.append({"partition": partition,
                     "users": int(events["user"].nunique()),
                     "items": int(events["item"].nunique()),
                     "interactions": len(events)})
    return pd.DataFrame(rows).set_index("partition")


def save_split(split, directory, config=None):
    """Write the three partitions as event files plus ``split_meta.json``; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for partition in Partition.all:
        path = directory / f"{partition}.tsv"
        save_interactions(unmap_events(split.events(partition), split.user_map, split.item_map), path)
        paths.append(path)
    meta = {
        "seed": split.seed,
        "n_dropped_items": split.n_dropped_items,
        "counts": split_report(split).to_dict(orient="index"),
    }
    if config is not None:
        meta.update(config.to_dict())
    meta_path = directory / "split_meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=int))
    paths.append(meta_path)
    return paths
