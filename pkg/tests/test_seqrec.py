import logging
from types import SimpleNamespace

import numpy as np
import pytest
from pytest import approx, fixture, mark

from audiorec_eval.config import SeqTrainConfig
from audiorec_eval.constants import InitMode, Partition
from audiorec_eval.core import InteractionLog, SeenSets
from audiorec_eval.diagnostics import DataError, DataWarning, TrainingError
from audiorec_eval.seqrec import (MASK, N_SPECIAL, PAD, SeqParams, apply_masking, build_sequences, forward,
                                  forward_logits, init_seqrec, recommend_seqrec, score_last_position,
                                  seqrec_loss_and_grads, train_seqrec)
from audiorec_eval.synthetic import make_repeated_item_dataset

from .conftest import BOUNDARY, split_log

_log = logging.getLogger(__name__)

TOY_TOKENS = np.array([[2, 3, 4, 5], [6, 2, 3, 0], [4, 5, 0, 0]])
TOY_POSITIONS = np.array([[False, True, False, True], [True, False, False, False], [False, True, False, False]])


def _toy_config(**kwargs):
    options = dict(d_model=8, n_layers=1, n_heads=2, ff_mult=4, max_len=4, dtype="float64", seed=0)
    options.update(kwargs)
    return SeqTrainConfig(**options)


def _jitter(params, seed=0):
    """Add noise to every trainable tensor so each path through the model carries signal."""
    rng = np.random.default_rng(seed)
    for name in params.trainable:
        params.tensors[name] = params.tensors[name] + rng.normal(scale=0.3, size=params.tensors[name].shape)
    return params


def _toy_params(n_items=5, mode=InitMode.RandomUnfrozen, tie_output=False, seed=0):
    table = np.random.default_rng(seed + 100).normal(size=(n_items, 3)) if mode == InitMode.PretrainedFrozen else None
    params = init_seqrec(SimpleNamespace(n_items=n_items), _toy_config(tie_output=tie_output), table, mode)
    return _jitter(params, seed)


def _numeric_grad(params, name, tokens, positions, targets, h=1e-5):
    tensor = params.tensors[name]
    grad = np.zeros_like(tensor)
    for idx in np.ndindex(tensor.shape):
        old = tensor[idx]
        tensor[idx] = old + h
        plus = seqrec_loss_and_grads(params, tokens, positions, targets)[0]
        tensor[idx] = old - h
        minus = seqrec_loss_and_grads(params, tokens, positions, targets)[0]
        tensor[idx] = old
        grad[idx] = (plus - minus) / (2 * h)
    return grad


@mark.parametrize("mode", InitMode.all)
@mark.parametrize("tie_output", [False, True])
def test_gradients_match_finite_differences(mode, tie_output):
    params = _toy_params(mode=mode, tie_output=tie_output)
    masked = np.where(TOY_POSITIONS, MASK, TOY_TOKENS)
    targets = TOY_TOKENS[TOY_POSITIONS]
    loss, grads = seqrec_loss_and_grads(params, masked, TOY_POSITIONS, targets)
    assert loss > 0
    assert set(grads) == set(params.trainable)
    if mode == InitMode.PretrainedFrozen:
        assert "item_table" not in grads
    for name in params.trainable:
        numeric = _numeric_grad(params, name, masked, TOY_POSITIONS, targets)
        scale = max(np.abs(grads[name]).max(), np.abs(numeric).max(), 1e-6)
        err = np.abs(grads[name] - numeric).max() / scale
        _log.info("%s: relative error %.2e", name, err)
        assert err <= 1e-3, name


def _gelu(a):
    return 0.5 * a * (1 + np.tanh(np.sqrt(2 / np.pi) * (a + 0.044715 * a ** 3)))


def _layer_norm(z, gamma, beta):
    return (z - z.mean()) / np.sqrt(z.var() + 1e-5) * gamma + beta


def _straight_line_logits(t, tokens, n_heads):
    """One block, one sequence, position by position."""
    x = np.array([(t["item_emb"][tok - 2] if tok >= 2 else t["special_emb"][tok]) + t["pos_emb"][pos]
                  for pos, tok in enumerate(tokens)])
    keys = [j for j, tok in enumerate(tokens) if tok != PAD]
    d = x.shape[1]
    dh = d // n_heads
    q = x @ t["block0.wq"] + t["block0.bq"]
    k = x @ t["block0.wk"] + t["block0.bk"]
    v = x @ t["block0.wv"] + t["block0.bv"]
    out = []
    for i in range(len(tokens)):
        ctx = np.zeros(d)
        for head in range(n_heads):
            cols = slice(head * dh, (head + 1) * dh)
            s = np.array([q[i, cols] @ k[j, cols] / np.sqrt(dh) for j in keys])
            w = np.exp(s - s.max())
            w /= w.sum()
            ctx[cols] = sum(wj * v[j, cols] for wj, j in zip(w, keys))
        h1 = _layer_norm(x[i] + ctx @ t["block0.wo"] + t["block0.bo"], t["block0.ln1_gamma"], t["block0.ln1_beta"])
        ff = _gelu(h1 @ t["block0.w1"] + t["block0.b1"]) @ t["block0.w2"] + t["block0.b2"]
        h2 = _layer_norm(h1 + ff, t["block0.ln2_gamma"], t["block0.ln2_beta"])
        out.append(h2 @ t["out_w"] + t["out_b"])
    return np.array(out)


def test_forward_matches_straight_line():
    params = _toy_params(n_items=4, seed=3)
    tokens = np.array([[2, 1, 5, 3], [4, 2, 0, 0]])
    logits = forward_logits(params, tokens)
    assert logits.shape == (2, 4, 4)
    for row in range(2):
        assert logits[row] == approx(_straight_line_logits(params.tensors, tokens[row], 2), rel=1e-9, abs=1e-9)


def test_attention_ignores_padding():
    params = _toy_params()
    _, cache = forward(params, TOY_TOKENS)
    attn = cache["layers"][0]["attn"]
    assert attn.sum(axis=-1) == approx(np.ones(attn.shape[:-1]), abs=1e-6)
    pad = TOY_TOKENS == PAD
    for row in range(TOY_TOKENS.shape[0]):
        assert not attn[row][..., pad[row]].any()


def test_identical_rows_identical_logits():
    params = _toy_params()
    logits = forward_logits(params, np.array([[2, 3, 1, 4], [2, 3, 1, 4]]))
    assert logits[0] == approx(logits[1], rel=1e-12, abs=1e-12)


def test_batch_permutation():
    params = _toy_params()
    perm = [2, 0, 1]
    logits = forward_logits(params, TOY_TOKENS)
    assert forward_logits(params, TOY_TOKENS[perm]) == approx(logits[perm], rel=1e-12, abs=1e-12)


def test_forward_rejects_bad_tokens():
    params = _toy_params()
    with pytest.raises(DataError, match="token ids"):
        forward(params, np.array([[2, 9]]))
    with pytest.raises(DataError, match="max_len"):
        forward(params, np.full((1, 6), 2))


def test_forward_non_finite():
    params = _toy_params()
    params.tensors["block0.w1"][:] = np.inf
    with pytest.raises(TrainingError, match="layer=0"):
        forward(params, TOY_TOKENS)


def test_masking_forced_single():
    tokens = np.array([[2, 3, 4, 0], [5, 0, 0, 0], [2, 3, 4, 5]])
    masked, positions, targets = apply_masking(tokens, np.random.default_rng(0), 1e-12)
    assert positions.sum(axis=1).tolist() == [1, 1, 1]
    assert (masked[positions] == MASK).all()
    assert np.array_equal(targets, tokens[positions])
    assert not positions[tokens == PAD].any()


def test_masking_all():
    tokens = np.array([[2, 3, 4, 0], [5, 0, 0, 0]])
    masked, positions, targets = apply_masking(tokens, np.random.default_rng(0), 1.0)
    assert np.array_equal(positions, tokens != PAD)
    assert np.array_equal(masked, np.where(tokens != PAD, MASK, PAD))
    assert targets.tolist() == [2, 3, 4, 5]


def test_masking_rate():
    tokens = np.full((1000, 100), 7)
    _, positions, _ = apply_masking(tokens, np.random.default_rng(5), 0.2)
    sigma = np.sqrt(0.2 * 0.8 / positions.size)
    assert abs(positions.mean() - 0.2) <= 3 * sigma


def test_masking_empty_sequence():
    with pytest.raises(DataError):
        apply_masking(np.array([[2, 3], [0, 0]]), np.random.default_rng(0), 0.5)


@fixture
def long_split():
    hour = 3600
    records = [("a", f"t{j:03d}", BOUNDARY - (400 - j) * hour) for j in range(400)]
    records += [("b", f"t{j:03d}", BOUNDARY - (10 - j) * hour) for j in range(5)]
    records += [("c", "t003", BOUNDARY - hour), ("c", "t001", BOUNDARY - hour)]
    records += [("b", "t010", BOUNDARY + hour), ("c", "t011", BOUNDARY + hour)]
    return split_log(InteractionLog.from_records(records))


def test_build_sequences(long_split):
    dataset = build_sequences(long_split)
    index = long_split.user_map.index
    items = long_split.item_map.indices
    a = dataset.sequences[dataset.rows([index("a")])[0]]
    assert len(a) == 300
    assert a.tolist() == (items([f"t{j:03d}" for j in range(100, 400)]) + N_SPECIAL).tolist()
    b = dataset.sequences[dataset.rows([index("b")])[0]]
    assert b.tolist() == (items([f"t{j:03d}" for j in range(5)]) + N_SPECIAL).tolist()
    c = dataset.sequences[dataset.rows([index("c")])[0]]
    assert c.tolist() == sorted(c.tolist())
    assert dataset.lengths.min() >= 1 and dataset.lengths.max() <= 300
    with pytest.raises(DataError):
        dataset.rows([99])


def test_build_sequences_short_limit(long_split):
    dataset = build_sequences(long_split, max_len=4)
    assert sorted(dataset.lengths.tolist()) == [2, 4, 4]


@fixture
def tiny_dataset(tiny_split):
    return build_sequences(tiny_split, max_len=20)


def _tiny_config(**kwargs):
    options = dict(d_model=8, n_layers=1, n_heads=2, max_len=20, batch_size=2, epochs=3, seed=1)
    options.update(kwargs)
    return SeqTrainConfig(**options)


def test_train_zero_epochs(tiny_split, tiny_dataset):
    params = init_seqrec(tiny_split, _tiny_config(), mode=InitMode.RandomUnfrozen)
    trained, history = train_seqrec(params, tiny_dataset, _tiny_config(epochs=0))
    assert trained is params
    assert history.empty


def test_train_keeps_frozen_table(tiny_split, tiny_dataset, tiny_table):
    params = init_seqrec(tiny_split, _tiny_config(), tiny_table)
    assert params.trainable == sorted(n for n in params.tensors if n != "item_table")
    before = params["item_table"].tobytes()
    projection = params["projection"].copy()
    trained, history = train_seqrec(params, tiny_dataset, _tiny_config())
    assert trained["item_table"].tobytes() == before
    assert not np.array_equal(trained["projection"], projection)
    assert len(history) == 3
    assert history["val_metric"].isna().all()


def test_train_with_validation(tiny_split, tiny_dataset):
    params = init_seqrec(tiny_split, _tiny_config(), mode=InitMode.RandomUnfrozen)
    relevance = tiny_split.relevance(Partition.Validation)
    with pytest.warns(DataWarning):
        _, history = train_seqrec(params, tiny_dataset, _tiny_config(), validation=relevance, seen=tiny_split.seen)
    assert 1 <= len(history) <= 3
    assert history["val_metric"].between(0, 1).all()
    with pytest.raises(DataError, match="seen"):
        train_seqrec(params, tiny_dataset, _tiny_config(), validation=relevance)


def test_train_deterministic(tiny_split, tiny_dataset):
    params = init_seqrec(tiny_split, _tiny_config(), mode=InitMode.RandomUnfrozen)
    a, _ = train_seqrec(params, tiny_dataset, _tiny_config())
    b, _ = train_seqrec(params, tiny_dataset, _tiny_config())
    for name in params.tensors:
        assert np.array_equal(a[name], b[name])


def test_recommend_forced_item(tiny_split, tiny_dataset):
    params = init_seqrec(tiny_split, _tiny_config(), mode=InitMode.RandomUnfrozen)
    params.tensors["out_w"][:] = 0
    params.tensors["out_b"][3] = 10.0
    rankings = recommend_seqrec(params, tiny_dataset, tiny_split.seen, 1)
    for user in rankings:
        if 3 in tiny_split.seen.seen(user):
            assert rankings[user].items[0] != 3
        else:
            assert rankings[user].items[0] == 3


def test_recommend_matches_argsort(tiny_split, tiny_dataset):
    params = _jitter(init_seqrec(tiny_split, _tiny_config(), mode=InitMode.RandomUnfrozen), seed=6)
    logits = score_last_position(params, tiny_dataset)
    rankings = recommend_seqrec(params, tiny_dataset, tiny_split.seen, 2)
    for row, user in enumerate(tiny_dataset.users):
        seen = tiny_split.seen.seen(user)
        expected = [int(i) for i in np.argsort(-logits[row], kind="stable") if int(i) not in seen][:2]
        assert list(rankings[user].items) == expected


def test_recommend_all_seen(tiny_split, tiny_dataset):
    params = init_seqrec(tiny_split, _tiny_config(), mode=InitMode.RandomUnfrozen)
    n_items = tiny_split.n_items
    everything = SeenSets(n_items, np.arange(tiny_split.n_users * n_items, dtype=np.int64))
    with pytest.warns(DataWarning):
        rankings = recommend_seqrec(params, tiny_dataset, everything, 3)
    assert all(len(rankings[u]) == 0 for u in rankings)


def test_learns_repeated_item():
    log, planted = make_repeated_item_dataset(n_users=200, n_items=20, seed=0)
    split = split_log(log)
    dataset = build_sequences(split)
    config = SeqTrainConfig(d_model=32, n_layers=1, n_heads=2, lr=0.005, epochs=150, mask_prob=0.3,
                            batch_size=32, seed=0)
    params = init_seqrec(split, config, mode=InitMode.RandomUnfrozen)
    trained, history = train_seqrec(params, dataset, config)
    assert history["train_loss"].iloc[-1] < history["train_loss"].iloc[0]
    top = score_last_position(trained, dataset).argmax(axis=1)
    expected = split.item_map.indices([planted[split.user_map.external(u)] for u in dataset.users])
    hit = float((top == expected).mean())
    _log.info("planted item ranked first for %.1f%% of users", 100 * hit)
    assert hit >= 0.95


def test_checkpoint_round_trip(tmp_path, tiny_split, tiny_table):
    params = init_seqrec(tiny_split, _tiny_config(tie_output=True), tiny_table)
    path = tmp_path / "seqrec.parc"
    params.save(path)
    loaded = SeqParams.load(path)
    assert loaded.mode == params.mode
    assert loaded.arch == params.arch
    assert "out_w" not in loaded.tensors
    for name in params.tensors:
        assert np.array_equal(loaded[name], params[name])
