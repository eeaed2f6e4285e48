import numpy as np
import pytest

from audiorec_eval.checkpoint import CHECKPOINT_MAGIC, load_checkpoint, save_checkpoint
from audiorec_eval.diagnostics import DataError
from audiorec_eval.seqrec import SeqParams
from audiorec_eval.shallow import ShallowParams


@pytest.fixture
def tensors():
    rng = np.random.default_rng(0)
    return {"w": rng.normal(size=(3, 4)), "b": np.arange(4, dtype=np.float32), "scalar_row": np.ones(1)}


def test_round_trip(tmp_path, tensors):
    path = tmp_path / "model.parc"
    save_checkpoint(path, "shallow", tensors, {"mode": "random-unfrozen", "lr": 0.001})
    assert path.read_bytes()[:4] == CHECKPOINT_MAGIC
    checkpoint = load_checkpoint(path)
    assert checkpoint.kind == "shallow"
    assert checkpoint.config == {"mode": "random-unfrozen", "lr": 0.001}
    assert sorted(checkpoint.tensors) == ["b", "scalar_row", "w"]
    for name, array in tensors.items():
        assert checkpoint.tensors[name].dtype == np.float32
        assert np.array_equal(checkpoint.tensors[name], array.astype(np.float32))


def test_bytes_deterministic(tmp_path, tensors):
    save_checkpoint(tmp_path / "a.parc", "seqrec", tensors)
    save_checkpoint(tmp_path / "b.parc", "seqrec", dict(reversed(list(tensors.items()))))
    assert (tmp_path / "a.parc").read_bytes() == (tmp_path / "b.parc").read_bytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.parc"
    path.write_bytes(b"PARE\x01")
    with pytest.raises(DataError, match="bad magic"):
        load_checkpoint(path)


def test_truncated(tmp_path, tensors):
    path = tmp_path / "cut.parc"
    save_checkpoint(path, "shallow", tensors)
    path.write_bytes(path.read_bytes()[:40])
    with pytest.raises(DataError, match="truncated"):
        load_checkpoint(path)


def test_unsupported_version(tmp_path, tensors):
    path = tmp_path / "v2.parc"
    save_checkpoint(path, "shallow", tensors)
    data = bytearray(path.read_bytes())
    data[4] = 2
    path.write_bytes(bytes(data))
    with pytest.raises(DataError, match="version 2"):
        load_checkpoint(path)


def test_kind_checked(tmp_path, tensors):
    path = tmp_path / "model.parc"
    save_checkpoint(path, "shallow", tensors, {"mode": "random-unfrozen", "margin": 0.2})
    with pytest.raises(DataError, match="not seqrec"):
        SeqParams.load(path)
    save_checkpoint(path, "seqrec", tensors, {})
    with pytest.raises(DataError, match="not shallow"):
        ShallowParams.load(path)
