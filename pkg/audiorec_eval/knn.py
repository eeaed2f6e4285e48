"""Profile-mean nearest neighbours: a user is the mean of their items' embeddings."""
import logging

import attr
import numpy as np
from scipy import sparse

from .core import EmbeddingTable, rank_users
from .diagnostics import DataError

logger = logging.getLogger(__name__)

COSINE_EPS = 1e-12


@attr.s(frozen=True, eq=False, repr=False)
class UserProfileMatrix:
    """Row ``u`` is the mean embedding of the distinct train items of user ``u``."""

    matrix = attr.ib()

    @property
    def n_users(self):
        return self.matrix.shape[0]

    def __repr__(self):
        return "<UserProfileMatrix(%r users, dim=%r)>" % self.matrix.shape


def item_matrix(split, embeddings):
    """Embedding rows in the split's internal item order (a ready matrix passes through)."""
    if isinstance(embeddings, EmbeddingTable):
        return embeddings.aligned(split.item_map)
    matrix = np.asarray(embeddings)
    if matrix.shape[0] != split.n_items:
        raise DataError(f"embedding matrix has {matrix.shape[0]} rows for {split.n_items} items")
    return matrix


def build_user_profiles(split, embeddings):
    matrix = item_matrix(split, embeddings).astype(np.float64)
    codes = split.seen.codes
    users, items = codes // split.n_items, codes % split.n_items
    counts = np.bincount(users, minlength=split.n_users)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DataError(f"user {split.user_map.external(empty[0])!r} has no train items")
    weights = sparse.csr_matrix((1.0 / counts[users], (users, items)), shape=(split.n_users, split.n_items))
    profiles = np.asarray(weights @ matrix)
    logger.info("built %d user profiles of dim %d", *profiles.shape)
    return UserProfileMatrix(profiles)


def cosine_scores(queries, items, eps=COSINE_EPS):
    """Cosine similarity of every query row with every item row; zero-norm rows score 0."""
    queries = np.asarray(queries, dtype=np.float64)
    items = np.asarray(items, dtype=np.float64)
    denom = np.outer(np.linalg.norm(queries, axis=1), np.linalg.norm(items, axis=1)) + eps
    return (queries @ items.T) / denom


def recommend_knn(profiles, items, seen, k, users=None, batch_size=512, progress=False):
    """Top-``k`` unseen items by cosine similarity to each user's profile.

    :param items: item embedding matrix aligned with the split's item map
    :param users: internal user indices to rank for (default: every profiled user)
    """
    items = np.asarray(items, dtype=np.float64)
    if users is None:
        users = np.arange(profiles.n_users)
    return rank_users(lambda batch: cosine_scores(profiles.matrix[batch], items), users, seen, k,
                      batch_size=batch_size, progress=progress, label="knn")
