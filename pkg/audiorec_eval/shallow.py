"""Two-tower Shallow Net.

Both towers are an embedding lookup followed by a dimension-preserving affine layer and a ReLU; a
pair scores the cosine of the two tower outputs. In pretrained-frozen mode the item embeddings are
the pretrained table and never change, user embeddings start at the mean of the user's items.
Training minimises the max-margin hinge loss against negative users sampled per positive pair.
"""
import logging
import warnings

import attr
import numpy as np
from tqdm import tqdm

from .checkpoint import load_checkpoint, save_checkpoint
from .constants import InitMode, ModelKind, Partition
from .core import rank_users
from .diagnostics import DataError, DataWarning, TrainingError
from .evaluation import evaluate_rankings
from .knn import build_user_profiles, item_matrix
from .optim import Adam, EarlyStopping, ReduceLROnPlateau, history_frame

logger = logging.getLogger(__name__)

SCORE_EPS = 1e-8
TENSOR_NAMES = ("user_emb", "item_emb", "w_user", "b_user", "w_item", "b_item")


@attr.s(eq=False, repr=False)
class ShallowParams:
    tensors = attr.ib()
    mode = attr.ib()
    margin = attr.ib(default=0.2)

    @property
    def trainable(self):
        if self.mode == InitMode.PretrainedFrozen:
            return [n for n in TENSOR_NAMES if n != "item_emb"]
        return list(TENSOR_NAMES)

    @property
    def dim(self):
        return self.tensors["w_user"].shape[0]

    @property
    def n_users(self):
        return self.tensors["user_emb"].shape[0]

    @property
    def n_items(self):
        return self.tensors["item_emb"].shape[0]

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self):
        return ShallowParams({n: a.copy() for n, a in self.tensors.items()}, self.mode, self.margin)

    def astype(self, dtype):
        return ShallowParams({n: a.astype(dtype) for n, a in self.tensors.items()}, self.mode, self.margin)

    def save(self, path, config=None):
        echo = {"mode": self.mode, "margin": self.margin}
        echo.update(config or {})
        save_checkpoint(path, ModelKind.Shallow, self.tensors, echo)

    @classmethod
    def load(cls, path):
        checkpoint = load_checkpoint(path)
        if checkpoint.kind != ModelKind.Shallow:
            raise DataError(f"{path}: checkpoint holds a {checkpoint.kind!r} model, not shallow")
        return cls(checkpoint.tensors, checkpoint.config["mode"], checkpoint.config["margin"])

    def __repr__(self):
        return "<ShallowParams(%s, %r users, %r items, dim=%r)>" % (
            self.mode, self.n_users, self.n_items, self.dim)


def init_shallow(split, embeddings=None, mode=InitMode.PretrainedFrozen, seed=0, dim=None, margin=0.2,
                 dtype="float32"):
    """Initialise both towers.

    pretrained-frozen: item embeddings are the pretrained table (frozen), user embeddings the mean of
    each user's train items. random-unfrozen: both embedding tables are seeded normal noise with
    std 1/sqrt(dim) and trainable; ``dim`` falls back to the table's dim when a table is given.
    The affine weights are uniform(-1/sqrt(dim), 1/sqrt(dim)), biases zero.
    """
    rng = np.random.default_rng(seed)
    if mode == InitMode.PretrainedFrozen:
        if embeddings is None:
            raise DataError("pretrained-frozen mode needs an embedding table")
        items = item_matrix(split, embeddings)
        if dim is not None and dim != items.shape[1]:
            raise DataError(f"dim {dim} does not match the embedding dim {items.shape[1]}")
        dim = items.shape[1]
        item_emb = np.array(items, dtype=dtype)
        user_emb = build_user_profiles(split, items).matrix.astype(dtype)
    elif mode == InitMode.RandomUnfrozen:
        if dim is None:
            if embeddings is None:
                raise DataError("random-unfrozen mode needs a dim or an embedding table")
            dim = item_matrix(split, embeddings).shape[1]
        scale = 1.0 / np.sqrt(dim)
        user_emb = rng.normal(0.0, scale, size=(split.n_users, dim)).astype(dtype)
        item_emb = rng.normal(0.0, scale, size=(split.n_items, dim)).astype(dtype)
    else:
        raise DataError(f"unknown init mode {mode!r}; use one of {InitMode.all}")
    bound = 1.0 / np.sqrt(dim)
    tensors = {
        "user_emb": user_emb,
        "item_emb": item_emb,
        "w_user": rng.uniform(-bound, bound, size=(dim, dim)).astype(dtype),
        "b_user": np.zeros(dim, dtype=dtype),
        "w_item": rng.uniform(-bound, bound, size=(dim, dim)).astype(dtype),
        "b_item": np.zeros(dim, dtype=dtype),
    }
    return ShallowParams(tensors, mode, margin)


def _tower(x, w, b):
    z = x @ w.T + b
    return z, np.maximum(z, 0.0)


def _tower_grad(x, z, w, grad_h):
    grad_z = grad_h * (z > 0)
    flat_z = grad_z.reshape(-1, grad_z.shape[-1])
    flat_x = x.reshape(-1, x.shape[-1])
    return flat_z.T @ flat_x, flat_z.sum(axis=0), grad_z @ w


def _cosine(a, b):
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    denom = na * nb + SCORE_EPS
    return (a * b).sum(axis=-1) / denom, na, nb, denom


def _cosine_grad(a, b, cos, na, nb, denom, grad_cos):
    inv_na = np.divide(1.0, na, out=np.zeros_like(na), where=na > 0)
    inv_nb = np.divide(1.0, nb, out=np.zeros_like(nb), where=nb > 0)
    g = grad_cos[..., None]
    grad_a = g * (b / denom[..., None] - (cos * nb * inv_na / denom)[..., None] * a)
    grad_b = g * (a / denom[..., None] - (cos * na * inv_nb / denom)[..., None] * b)
    return grad_a, grad_b


def score_pairs(params, users, items):
    """Cosine scores of aligned (user, item) index arrays."""
    t = params.tensors
    _, hu = _tower(t["user_emb"][np.asarray(users)], t["w_user"], t["b_user"])
    _, hi = _tower(t["item_emb"][np.asarray(items)], t["w_item"], t["b_item"])
    return _cosine(hu, hi)[0]


def score(params, user, item):
    return float(score_pairs(params, [user], [item])[0])


def hinge_loss(params, user, item, negatives):
    """Sum over negative users ``v`` of max(0, margin - s(user, item) + s(v, item))."""
    negatives = np.asarray(negatives)
    if negatives.size == 0:
        raise DataError("hinge loss needs at least one negative user")
    pos = score_pairs(params, [user], [item])[0]
    neg = score_pairs(params, negatives, np.full(negatives.size, item))
    return float(np.maximum(params.margin - pos + neg, 0.0).sum())


def shallow_loss_and_grads(params, users, items, negatives):
    """Summed hinge loss of a batch of positive pairs and its gradients.

    :param negatives: (batch, n_neg) negative user indices per pair
    :return: (loss, {tensor name: gradient}) for the trainable tensors
    """
    t = params.tensors
    users, items, negatives = np.asarray(users), np.asarray(items), np.asarray(negatives)
    xu, xv, xi = t["user_emb"][users], t["user_emb"][negatives], t["item_emb"][items]
    zu, hu = _tower(xu, t["w_user"], t["b_user"])
    zv, hv = _tower(xv, t["w_user"], t["b_user"])
    zi, hi = _tower(xi, t["w_item"], t["b_item"])

    pos, na_u, nb_pos, den_pos = _cosine(hu, hi)
    hi_b = hi[:, None, :]
    neg, na_v, nb_neg, den_neg = _cosine(hv, hi_b)
    terms = params.margin - pos[:, None] + neg
    active = terms > 0
    loss = float(np.where(active, terms, 0.0).sum())

    grad_neg = active.astype(hu.dtype)
    grad_pos = -grad_neg.sum(axis=1)
    ga_u, gb_pos = _cosine_grad(hu, hi, pos, na_u, nb_pos, den_pos, grad_pos)
    ga_v, gb_neg = _cosine_grad(hv, hi_b, neg, na_v, nb_neg, den_neg, grad_neg)
    grad_hi = gb_pos + gb_neg.sum(axis=1)

    gw_u, gb_u, gx_u = _tower_grad(xu, zu, t["w_user"], ga_u)
    gw_v, gb_v, gx_v = _tower_grad(xv, zv, t["w_user"], ga_v)
    gw_i, gb_i, gx_i = _tower_grad(xi, zi, t["w_item"], grad_hi)
    grads = {"w_user": gw_u + gw_v, "b_user": gb_u + gb_v, "w_item": gw_i, "b_item": gb_i}
    trainable = params.trainable
    if "user_emb" in trainable:
        grad = np.zeros_like(t["user_emb"])
        np.add.at(grad, users, gx_u)
        np.add.at(grad, negatives.ravel(), gx_v.reshape(-1, gx_v.shape[-1]))
        grads["user_emb"] = grad
    if "item_emb" in trainable:
        grad = np.zeros_like(t["item_emb"])
        np.add.at(grad, items, gx_i)
        grads["item_emb"] = grad
    return loss, grads


@attr.s(frozen=True, eq=False)
class InteractionIndex:
    """Which users played which item; the pool negative users are drawn from."""

    seen = attr.ib()
    n_users = attr.ib()
    item_counts = attr.ib(init=False)

    @item_counts.default
    def _count(self):
        return self.seen.item_user_counts()

    @classmethod
    def from_split(cls, split):
        return cls(split.seen, split.n_users)

    def has_negatives(self, items):
        return self.item_counts[np.asarray(items)] < self.n_users


def sample_negative_users(rng, item, n_neg, index):
    """Draw ``n_neg`` users uniformly (with replacement) among those who never played ``item``.

    Returns None, with a ``DataWarning``, when every user played the item.
    """
    if not index.has_negatives([item])[0]:
        msg = f"every user played item {item}; pair skipped"
        logger.warning(msg)
        warnings.warn(msg, DataWarning)
        return None
    return _sample_negatives(rng, np.array([item]), n_neg, index)[0]


def _sample_negatives(rng, items, n_neg, index):
    """Rejection sampling of a (len(items), n_neg) block; every item must have eligible users."""
    items = np.asarray(items, dtype=np.int64)[:, None]
    negatives = rng.integers(0, index.n_users, size=(items.shape[0], n_neg))
    bad = index.seen.contains(negatives, items)
    while bad.any():
        negatives[bad] = rng.integers(0, index.n_users, size=int(bad.sum()))
        bad[bad] = index.seen.contains(negatives[bad], np.broadcast_to(items, negatives.shape)[bad])
    return negatives


def _item_outputs(params):
    t = params.tensors
    return _tower(t["item_emb"].astype(np.float64), t["w_item"].astype(np.float64),
                  t["b_item"].astype(np.float64))[1]


def recommend_shallow(params, seen, k, users=None, batch_size=512, progress=False):
    """Top-``k`` unseen items per user by tower cosine."""
    t = params.tensors
    items_out = _item_outputs(params)
    items_norm = np.linalg.norm(items_out, axis=1)
    w_user, b_user = t["w_user"].astype(np.float64), t["b_user"].astype(np.float64)

    def score_batch(batch):
        _, hu = _tower(t["user_emb"][batch].astype(np.float64), w_user, b_user)
        denom = np.outer(np.linalg.norm(hu, axis=1), items_norm) + SCORE_EPS
        return (hu @ items_out.T) / denom

    if users is None:
        users = np.arange(params.n_users)
    return rank_users(score_batch, users, seen, k, batch_size=batch_size, progress=progress,
                      label="shallow")


def _validation_metric(params, split, relevance, k):
    rankings = recommend_shallow(params, split.seen, k, users=sorted(relevance))
    return float(evaluate_rankings(rankings, relevance, k).means["ndcg"])


def train_shallow(params, split, config):
    """Adam over shuffled positive pairs with fresh negatives every epoch.

    Validation NDCG@``monitor_k`` drives reduce-on-plateau and early stopping; the parameters of the
    best validation epoch are returned. Frozen tensors are never handed to the optimizer.

    :return: (trained params, history frame ``epoch, train_loss, val_metric, lr``)
    """
    if config.epochs == 0:
        return params, history_frame([])
    params = params.astype(config.dtype)
    rng = np.random.default_rng(config.seed)
    index = InteractionIndex.from_split(split)

    codes = split.seen.codes
    pair_users, pair_items = codes // split.n_items, codes % split.n_items
    usable = index.has_negatives(pair_items)
    if not usable.all():
        msg = f"{int((~usable).sum())} positive pairs skipped: their item was played by every user"
        logger.warning(msg)
        warnings.warn(msg, DataWarning)
        pair_users, pair_items = pair_users[usable], pair_items[usable]
    n_pairs = pair_users.size
    if n_pairs == 0:
        raise DataError("no trainable positive pairs")

    optimizer = Adam(params.tensors, params.trainable, lr=config.lr, beta1=config.beta1,
                     beta2=config.beta2, eps=config.adam_eps)
    plateau = ReduceLROnPlateau(optimizer, mode="max", factor=config.plateau_factor,
                                patience=config.plateau_patience, min_lr=config.min_lr)
    stopper = EarlyStopping(patience=config.early_stop_patience, mode="max")
    relevance = split.relevance(Partition.Validation)
    best = params.copy()
    history = []
    for epoch in tqdm(range(1, config.epochs + 1), desc="shallow", disable=not config.progress):
        order = rng.permutation(n_pairs)
        epoch_loss = 0.0
        for batch, start in enumerate(range(0, n_pairs, config.batch_size)):
            idx = order[start:start + config.batch_size]
            negatives = _sample_negatives(rng, pair_items[idx], config.n_neg, index)
            loss, grads = shallow_loss_and_grads(params, pair_users[idx], pair_items[idx], negatives)
            if not np.isfinite(loss):
                raise TrainingError("non-finite hinge loss", epoch=epoch, batch=batch)
            optimizer.step(grads)
            epoch_loss += loss
        lr = optimizer.lr
        val_metric = _validation_metric(params, split, relevance, config.monitor_k) if relevance else np.nan
        history.append({"epoch": epoch, "train_loss": epoch_loss / n_pairs, "val_metric": val_metric, "lr": lr})
        logger.info("shallow epoch %d: loss %.5f, val ndcg@%d %.5f, lr %.3g",
                    epoch, epoch_loss / n_pairs, config.monitor_k, val_metric, lr)
        if not relevance:
            best = params
            continue
        if stopper(val_metric, epoch):
            best = params.copy()
        plateau.step(val_metric)
        if stopper.early_stop:
            logger.info("early stopping after epoch %d (best epoch %d)", epoch, stopper.best_epoch)
            break
    return best, history_frame(history)
