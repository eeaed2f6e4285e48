import numpy as np
import pandas as pd
from pytest import fixture

from audiorec_eval.config import SplitConfig, parse_boundary
from audiorec_eval.constants import SECONDS_PER_DAY
from audiorec_eval.core import EmbeddingTable, InteractionLog
from audiorec_eval.split import prior_events, sanitize_and_partition, temporal_split

BOUNDARY = parse_boundary("2020-02-20")
DAY = SECONDS_PER_DAY


def tiny_records():
    """Four train users over five items, one cold user, one cold item and one pre-window play."""
    B = BOUNDARY
    return [
        ("u1", "i1", B - 10 * DAY), ("u1", "i2", B - 9 * DAY), ("u1", "i3", B - 8 * DAY),
        ("u2", "i2", B - 10 * DAY), ("u2", "i4", B - 5 * DAY),
        ("u3", "i1", B - 7 * DAY), ("u3", "i3", B - 6 * DAY), ("u3", "i4", B - 3 * DAY),
        ("u4", "i5", B - 4 * DAY),
        ("u4", "i1", B - 400 * DAY),
        ("u1", "i4", B + 1 * DAY), ("u1", "i1", B + 2 * DAY),
        ("u2", "i1", B + 1 * DAY), ("u2", "i9", B + 2 * DAY),
        ("u3", "i2", B + 3 * DAY),
        ("u4", "i1", B + 1 * DAY), ("u4", "i2", B + 2 * DAY),
        ("u9", "i1", B + 1 * DAY),
    ]


def split_log(log, seed=0, embeddings=None, config=None):
    config = config or SplitConfig()
    train, holdout = temporal_split(log, config)
    return sanitize_and_partition(train, holdout, seed, embeddings=embeddings, prior=prior_events(log, config))


def random_table(item_ids, dim, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingTable.from_rows(list(item_ids), rng.normal(size=(len(item_ids), dim)))


@fixture
def tiny_log():
    return InteractionLog.from_records(tiny_records())


@fixture
def tiny_split(tiny_log):
    return split_log(tiny_log)


@fixture
def tiny_table():
    return random_table(["i1", "i2", "i3", "i4", "i5", "i9"], 4, seed=3)


@fixture
def events_frame():
    return pd.DataFrame(tiny_records(), columns=["user_id", "item_id", "timestamp"])
