"""Miniature BERT4Rec: a bidirectional transformer trained to recover masked items.

Token ids: PAD=0, MASK=1, item ``i`` is token ``i + 2``. In pretrained-frozen mode the input
embedding of an item is its pretrained row times a trainable projection; in random-unfrozen mode
it is a trainable ``d_model`` table. Blocks are post-LN (attention, residual, LayerNorm, GELU
feed-forward, residual, LayerNorm). Inference appends one MASK after the user's history and ranks
all items by the logits at that position.
"""
import logging

import attr
import numpy as np
from tqdm import tqdm

from .checkpoint import load_checkpoint, save_checkpoint
from .constants import InitMode, ModelKind
from .core import rank_users
from .diagnostics import DataError, TrainingError
from .evaluation import evaluate_rankings
from .knn import item_matrix
from .optim import Adam, EarlyStopping, ReduceLROnPlateau, history_frame

logger = logging.getLogger(__name__)

PAD = 0
MASK = 1
N_SPECIAL = 2
MAX_LEN = 300
LN_EPS = 1e-5
INIT_STD = 0.02
_GELU_C = np.sqrt(2.0 / np.pi)


@attr.s(frozen=True, eq=False, repr=False)
class SequenceDataset:
    """Chronological train token sequences, one per user, each cut to the most recent ``max_len``."""

    users = attr.ib()
    sequences = attr.ib()
    n_items = attr.ib()
    max_len = attr.ib(default=MAX_LEN)
    _rows = attr.ib(init=False)

    @_rows.default
    def _build_rows(self):
        return {int(u): i for i, u in enumerate(self.users)}

    def __len__(self):
        return len(self.sequences)

    @property
    def lengths(self):
        return np.array([len(s) for s in self.sequences], dtype=np.int64)

    def rows(self, users):
        try:
            return np.array([self._rows[int(u)] for u in users], dtype=np.int64)
        except KeyError as err:
            raise DataError(f"user {err.args[0]} has no sequence") from None

    def batch(self, rows, append_mask=False):
        """Right-padded token matrix of the given rows, optionally with MASK after each history."""
        seqs = [self.sequences[r] for r in rows]
        width = max(len(s) for s in seqs) + int(append_mask)
        tokens = np.full((len(seqs), width), PAD, dtype=np.int64)
        for i, seq in enumerate(seqs):
            tokens[i, :len(seq)] = seq
            if append_mask:
                tokens[i, len(seq)] = MASK
        return tokens

    def __repr__(self):
        lengths = self.lengths
        return "<SequenceDataset(%r users, max_len=%r, mean length %.1f)>" % (
            len(self), self.max_len, lengths.mean() if lengths.size else 0.0)


def build_sequences(split, max_len=MAX_LEN):
    train = split.train
    users = train["user"].to_numpy(dtype=np.int64)
    tokens = train["item"].to_numpy(dtype=np.int64) + N_SPECIAL
    uniq, starts = np.unique(users, return_index=True)
    bounds = np.r_[starts, users.size]
    sequences = tuple(tokens[s:e][-max_len:] for s, e in zip(bounds[:-1], bounds[1:]))
    n_cut = sum(int(e - s > max_len) for s, e in zip(bounds[:-1], bounds[1:]))
    if n_cut:
        logger.info("%d sequences cut to the most recent %d items", n_cut, max_len)
    return SequenceDataset(uniq, sequences, split.n_items, max_len)


def apply_masking(tokens, rng, mask_prob):
    """Replace each item token by MASK with probability ``mask_prob``, at least one per sequence.

    :return: (masked tokens, boolean target positions, original tokens at the targets in row-major order)
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    valid = tokens >= N_SPECIAL
    lengths = valid.sum(axis=1)
    if (lengths == 0).any():
        raise DataError("cannot mask an empty sequence")
    positions = (rng.random(tokens.shape) < mask_prob) & valid
    rows = np.flatnonzero(~positions.any(axis=1))
    if rows.size:
        cols = np.floor(rng.random(rows.size) * lengths[rows]).astype(np.int64)
        positions[rows, cols] = True
    return np.where(positions, MASK, tokens), positions, tokens[positions]


@attr.s(frozen=True)
class SeqArch:
    d_model = attr.ib(default=64)
    n_layers = attr.ib(default=2)
    n_heads = attr.ib(default=2)
    ff_mult = attr.ib(default=4)
    max_len = attr.ib(default=MAX_LEN)
    tie_output = attr.ib(default=False)

    @classmethod
    def from_config(cls, config):
        return cls(config.d_model, config.n_layers, config.n_heads, config.ff_mult, config.max_len,
                   config.tie_output)


@attr.s(eq=False, repr=False)
class SeqParams:
    tensors = attr.ib()
    mode = attr.ib()
    arch = attr.ib()

    @property
    def trainable(self):
        return sorted(n for n in self.tensors if not (n == "item_table" and self.mode == InitMode.PretrainedFrozen))

    @property
    def n_items(self):
        return self.tensors["out_b"].shape[0]

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self):
        return SeqParams({n: a.copy() for n, a in self.tensors.items()}, self.mode, self.arch)

    def astype(self, dtype):
        return SeqParams({n: a.astype(dtype) for n, a in self.tensors.items()}, self.mode, self.arch)

    def save(self, path, config=None):
        echo = {"mode": self.mode, "arch": attr.asdict(self.arch)}
        echo.update(config or {})
        save_checkpoint(path, ModelKind.SeqRec, self.tensors, echo)

    @classmethod
    def load(cls, path):
        checkpoint = load_checkpoint(path)
        if checkpoint.kind != ModelKind.SeqRec:
            raise DataError(f"{path}: checkpoint holds a {checkpoint.kind!r} model, not seqrec")
        return cls(checkpoint.tensors, checkpoint.config["mode"], SeqArch(**checkpoint.config["arch"]))

    def __repr__(self):
        return "<SeqParams(%s, %r items, d_model=%r, %r layers)>" % (
            self.mode, self.n_items, self.arch.d_model, self.arch.n_layers)


def init_seqrec(split, config, embeddings=None, mode=InitMode.PretrainedFrozen):
    """Initialise a model for ``split``'s items: weights N(0, 0.02), LayerNorm at identity.

    The pretrained projection is N(0, 1/sqrt(pretrained_dim)) so projected items start at the
    pretrained rows' scale.
    """
    arch = SeqArch.from_config(config)
    rng = np.random.default_rng(config.seed)
    dtype = config.dtype
    d, hidden = arch.d_model, arch.d_model * arch.ff_mult

    def normal(*shape):
        return rng.normal(0.0, INIT_STD, size=shape).astype(dtype)

    tensors = {}
    if mode == InitMode.PretrainedFrozen:
        if embeddings is None:
            raise DataError("pretrained-frozen mode needs an embedding table")
        table = item_matrix(split, embeddings)
        tensors["item_table"] = np.array(table, dtype=dtype)
        tensors["projection"] = rng.normal(0.0, 1.0 / np.sqrt(table.shape[1]),
                                           size=(table.shape[1], d)).astype(dtype)
    elif mode == InitMode.RandomUnfrozen:
        tensors["item_emb"] = normal(split.n_items, d)
    else:
        raise DataError(f"unknown init mode {mode!r}; use one of {InitMode.all}")
    tensors["special_emb"] = normal(N_SPECIAL, d)
    tensors["pos_emb"] = normal(arch.max_len + 1, d)
    for layer in range(arch.n_layers):
        p = f"block{layer}."
        for name in ("wq", "wk", "wv", "wo"):
            tensors[p + name] = normal(d, d)
        for name in ("bq", "bk", "bv", "bo", "b2", "ln1_beta", "ln2_beta"):
            tensors[p + name] = np.zeros(d, dtype=dtype)
        tensors[p + "ln1_gamma"] = np.ones(d, dtype=dtype)
        tensors[p + "ln2_gamma"] = np.ones(d, dtype=dtype)
        tensors[p + "w1"] = normal(d, hidden)
        tensors[p + "b1"] = np.zeros(hidden, dtype=dtype)
        tensors[p + "w2"] = normal(hidden, d)
    if not arch.tie_output:
        tensors["out_w"] = normal(d, split.n_items)
    tensors["out_b"] = np.zeros(split.n_items, dtype=dtype)
    return SeqParams(tensors, mode, arch)


# -- forward pieces ----------------------------------------------------------------------------

def _flat(a):
    return a.reshape(-1, a.shape[-1])


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _layer_norm(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * gamma + beta, (xhat, inv)


def _layer_norm_grad(grad, gamma, cache):
    xhat, inv = cache
    gx = grad * gamma
    grad_x = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
    return grad_x, _flat(grad * xhat).sum(axis=0), _flat(grad).sum(axis=0)


def _gelu(a):
    t = np.tanh(_GELU_C * (a + 0.044715 * a ** 3))
    return 0.5 * a * (1.0 + t), t


def _gelu_grad(a, t):
    return 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * a * a)


def _item_vectors(params, items=None):
    t = params.tensors
    if "item_table" in t:
        table = t["item_table"] if items is None else t["item_table"][items]
        return table @ t["projection"]
    return t["item_emb"] if items is None else t["item_emb"][items]


def _output_weights(params):
    if params.arch.tie_output:
        return _item_vectors(params).T
    return params.tensors["out_w"]


def _embed(params, tokens):
    t = params.tensors
    n_pos = tokens.shape[1]
    if n_pos > params.arch.max_len + 1:
        raise DataError(f"sequence length {n_pos} exceeds max_len + 1 = {params.arch.max_len + 1}")
    if tokens.min() < 0 or tokens.max() >= params.n_items + N_SPECIAL:
        raise DataError(f"token ids must lie in [0, {params.n_items + N_SPECIAL}), "
                        f"got [{tokens.min()}, {tokens.max()}]")
    is_item = tokens >= N_SPECIAL
    x = np.empty(tokens.shape + (params.arch.d_model,), dtype=t["pos_emb"].dtype)
    x[is_item] = _item_vectors(params, tokens[is_item] - N_SPECIAL)
    x[~is_item] = t["special_emb"][tokens[~is_item]]
    return x + t["pos_emb"][:n_pos]


def _block_forward(t, prefix, x, key_mask, n_heads):
    dh = x.shape[-1] // n_heads
    q = _split_heads(x @ t[prefix + "wq"] + t[prefix + "bq"], n_heads)
    k = _split_heads(x @ t[prefix + "wk"] + t[prefix + "bk"], n_heads)
    v = _split_heads(x @ t[prefix + "wv"] + t[prefix + "bv"], n_heads)
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
    scores = np.where(key_mask[:, None, None, :], scores, -np.inf)
    scores = np.exp(scores - scores.max(axis=-1, keepdims=True))
    attn = scores / scores.sum(axis=-1, keepdims=True)
    ctx = _merge_heads(attn @ v)
    h1, ln1 = _layer_norm(x + ctx @ t[prefix + "wo"] + t[prefix + "bo"],
                          t[prefix + "ln1_gamma"], t[prefix + "ln1_beta"])
    a = h1 @ t[prefix + "w1"] + t[prefix + "b1"]
    g, tanh_a = _gelu(a)
    out, ln2 = _layer_norm(h1 + g @ t[prefix + "w2"] + t[prefix + "b2"],
                           t[prefix + "ln2_gamma"], t[prefix + "ln2_beta"])
    cache = {"x": x, "q": q, "k": k, "v": v, "attn": attn, "ctx": ctx, "h1": h1, "ln1": ln1,
             "a": a, "g": g, "tanh_a": tanh_a, "ln2": ln2}
    return out, cache


def _block_backward(t, prefix, cache, grad_out, n_heads, grads):
    dh = grad_out.shape[-1] // n_heads
    grad_r2, grads[prefix + "ln2_gamma"], grads[prefix + "ln2_beta"] = _layer_norm_grad(
        grad_out, t[prefix + "ln2_gamma"], cache["ln2"])
    grads[prefix + "w2"] = _flat(cache["g"]).T @ _flat(grad_r2)
    grads[prefix + "b2"] = _flat(grad_r2).sum(axis=0)
    grad_a = (grad_r2 @ t[prefix + "w2"].T) * _gelu_grad(cache["a"], cache["tanh_a"])
    grads[prefix + "w1"] = _flat(cache["h1"]).T @ _flat(grad_a)
    grads[prefix + "b1"] = _flat(grad_a).sum(axis=0)
    grad_h1 = grad_r2 + grad_a @ t[prefix + "w1"].T

    grad_r1, grads[prefix + "ln1_gamma"], grads[prefix + "ln1_beta"] = _layer_norm_grad(
        grad_h1, t[prefix + "ln1_gamma"], cache["ln1"])
    grads[prefix + "wo"] = _flat(cache["ctx"]).T @ _flat(grad_r1)
    grads[prefix + "bo"] = _flat(grad_r1).sum(axis=0)
    grad_ctx = _split_heads(grad_r1 @ t[prefix + "wo"].T, n_heads)
    attn, q, k, v = cache["attn"], cache["q"], cache["k"], cache["v"]
    grad_attn = grad_ctx @ v.transpose(0, 1, 3, 2)
    grad_v = attn.transpose(0, 1, 3, 2) @ grad_ctx
    grad_s = attn * (grad_attn - (grad_attn * attn).sum(axis=-1, keepdims=True)) / np.sqrt(dh)
    grad_q = grad_s @ k
    grad_k = grad_s.transpose(0, 1, 3, 2) @ q

    x = cache["x"]
    grad_x = grad_r1
    for name, grad in (("q", grad_q), ("k", grad_k), ("v", grad_v)):
        grad = _merge_heads(grad)
        grads[prefix + "w" + name] = _flat(x).T @ _flat(grad)
        grads[prefix + "b" + name] = _flat(grad).sum(axis=0)
        grad_x = grad_x + grad @ t[prefix + "w" + name].T
    return grad_x


def forward(params, tokens):
    """Hidden states of every position plus the per-layer cache (attention weights under ``"attn"``)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    key_mask = tokens != PAD
    x = _embed(params, tokens)
    layers = []
    for layer in range(params.arch.n_layers):
        x, cache = _block_forward(params.tensors, f"block{layer}.", x, key_mask, params.arch.n_heads)
        if not np.isfinite(x).all():
            raise TrainingError("non-finite activation", layer=layer)
        layers.append(cache)
    return x, {"tokens": tokens, "key_mask": key_mask, "layers": layers}


def forward_logits(params, tokens):
    """Logits over all items at every position, shape (batch, length, n_items)."""
    hidden, _ = forward(params, tokens)
    return hidden @ _output_weights(params) + params.tensors["out_b"]


def seqrec_loss_and_grads(params, tokens, positions, targets):
    """Cross-entropy over the masked positions (mean over targets) and its gradients.

    :param positions: boolean (batch, length) target mask as returned by ``apply_masking``
    :param targets: original tokens at ``positions`` in row-major order
    """
    t = params.tensors
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size == 0:
        raise DataError("no masked target positions")
    hidden, cache = forward(params, tokens)
    tokens = cache["tokens"]
    h = hidden[positions]
    weights = _output_weights(params)
    logits = h @ weights + t["out_b"]
    logits = logits - logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    rows, items = np.arange(targets.size), targets - N_SPECIAL
    loss = float(-logp[rows, items].mean())

    grad_logits = np.exp(logp)
    grad_logits[rows, items] -= 1.0
    grad_logits /= targets.size
    grads = {"out_b": grad_logits.sum(axis=0)}
    grad_weights = h.T @ grad_logits
    grad_item_vectors = None
    if params.arch.tie_output:
        grad_item_vectors = grad_weights.T
    else:
        grads["out_w"] = grad_weights
    grad_hidden = np.zeros_like(hidden)
    grad_hidden[positions] = grad_logits @ weights.T

    for layer in reversed(range(params.arch.n_layers)):
        grad_hidden = _block_backward(t, f"block{layer}.", cache["layers"][layer], grad_hidden,
                                      params.arch.n_heads, grads)

    grads["pos_emb"] = np.zeros_like(t["pos_emb"])
    grads["pos_emb"][:tokens.shape[1]] = grad_hidden.sum(axis=0)
    is_item = tokens >= N_SPECIAL
    grads["special_emb"] = np.zeros_like(t["special_emb"])
    np.add.at(grads["special_emb"], tokens[~is_item], grad_hidden[~is_item])
    item_rows, grad_rows = tokens[is_item] - N_SPECIAL, grad_hidden[is_item]
    if "item_table" in t:
        grad_proj = t["item_table"][item_rows].T @ grad_rows
        if grad_item_vectors is not None:
            grad_proj += t["item_table"].T @ grad_item_vectors
        grads["projection"] = grad_proj
    else:
        grad_emb = np.zeros_like(t["item_emb"])
        np.add.at(grad_emb, item_rows, grad_rows)
        if grad_item_vectors is not None:
            grad_emb += grad_item_vectors
        grads["item_emb"] = grad_emb
    return loss, grads


# -- inference ---------------------------------------------------------------------------------

def _last_position_logits(params, dataset, rows, weights):
    tokens = dataset.batch(rows, append_mask=True)
    hidden, _ = forward(params, tokens)
    last = hidden[np.arange(len(rows)), dataset.lengths[rows]]
    return (last @ weights + params.tensors["out_b"]).astype(np.float64)


def score_last_position(params, dataset, users=None, batch_size=64):
    """Logits at an appended MASK after each user's history, one row per user."""
    users = dataset.users if users is None else np.asarray(users)
    rows = dataset.rows(users)
    weights = _output_weights(params)
    parts = [_last_position_logits(params, dataset, rows[s:s + batch_size], weights)
             for s in range(0, rows.size, batch_size)]
    return np.vstack(parts) if parts else np.zeros((0, params.n_items))


def recommend_seqrec(params, dataset, seen, k, users=None, batch_size=64, progress=False):
    """Top-``k`` unseen items from the last-position logits."""
    weights = _output_weights(params)
    users = dataset.users if users is None else users
    return rank_users(lambda batch: _last_position_logits(params, dataset, dataset.rows(batch), weights),
                      users, seen, k, batch_size=batch_size, progress=progress, label="seqrec")


# -- training ----------------------------------------------------------------------------------

def train_seqrec(params, dataset, config, validation=None, seen=None):
    """Adam on the masked-item cross-entropy.

    With ``validation`` (relevance sets) and ``seen``, NDCG@``monitor_k`` drives reduce-on-plateau and
    early stopping and the best epoch's parameters are returned; otherwise all epochs run.
    """
    if config.epochs == 0:
        return params, history_frame([])
    if validation and seen is None:
        raise DataError("validation monitoring needs the training seen sets")
    params = params.astype(config.dtype)
    rng = np.random.default_rng(config.seed)
    optimizer = Adam(params.tensors, params.trainable, lr=config.lr, beta1=config.beta1,
                     beta2=config.beta2, eps=config.adam_eps)
    plateau = ReduceLROnPlateau(optimizer, mode="max", factor=config.plateau_factor,
                                patience=config.plateau_patience, min_lr=config.min_lr)
    stopper = EarlyStopping(patience=config.early_stop_patience, mode="max")
    best = params.copy()
    history = []
    for epoch in tqdm(range(1, config.epochs + 1), desc="seqrec", disable=not config.progress):
        order = rng.permutation(len(dataset))
        total, n_targets = 0.0, 0
        for batch, start in enumerate(range(0, len(dataset), config.batch_size)):
            masked, positions, targets = apply_masking(
                dataset.batch(order[start:start + config.batch_size]), rng, config.mask_prob)
            loss, grads = seqrec_loss_and_grads(params, masked, positions, targets)
            if not np.isfinite(loss):
                raise TrainingError("non-finite cross-entropy loss", epoch=epoch, batch=batch)
            optimizer.step(grads)
            total += loss * targets.size
            n_targets += targets.size
        lr = optimizer.lr
        val_metric = np.nan
        if validation:
            rankings = recommend_seqrec(params, dataset, seen, config.monitor_k, users=sorted(validation))
            val_metric = float(evaluate_rankings(rankings, validation, config.monitor_k).means["ndcg"])
        history.append({"epoch": epoch, "train_loss": total / n_targets, "val_metric": val_metric, "lr": lr})
        logger.info("seqrec epoch %d: loss %.5f, val ndcg@%d %.5f, lr %.3g",
                    epoch, total / n_targets, config.monitor_k, val_metric, lr)
        if not validation:
            best = params
            continue
        if stopper(val_metric, epoch):
            best = params.copy()
        plateau.step(val_metric)
        if stopper.early_stop:
            logger.info("early stopping after epoch %d (best epoch %d)", epoch, stopper.best_epoch)
            break
    return best, history_frame(history)
