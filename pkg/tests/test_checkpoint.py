import struct

import numpy as np
import pytest

from radseq import checkpoint
from radseq import sequencer as S
from radseq.errors import DataError


@pytest.fixture
def model(reduced):
    m = S.build(*reduced, seed=5)
    rng = np.random.default_rng(0)
    for v in m.params.values():
        v += rng.standard_normal(v.shape).astype(np.float32) * 0.01
    return m


def test_roundtrip_is_byte_exact(model, tmp_path):
    path = tmp_path / "m.rdsq"
    checkpoint.save(model, path, {"split": {"per_class": 3, "seed": 1}})
    loaded, meta = checkpoint.load(path)
    assert meta["seed"] == 5 and meta["split"] == {"per_class": 3, "seed": 1}
    assert list(loaded.params) == list(model.params)
    for k in model.params:
        assert loaded.params[k].tobytes() == model.params[k].tobytes()
    assert (loaded.spec, loaded.head) == (model.spec, model.head)
    extra = {k: meta[k] for k in ("split",)}
    assert checkpoint.to_bytes(loaded, extra) == path.read_bytes()


def test_layout(model):
    blob = checkpoint.to_bytes(model)
    assert blob[:4] == b"RDSQ"
    assert struct.unpack("<H", blob[4:6]) == (1,)
    (n,) = struct.unpack("<I", blob[6:10])
    pos = 10 + n
    (ln,) = struct.unpack("<H", blob[pos : pos + 2])
    name = blob[pos + 2 : pos + 2 + ln].decode()
    assert name == "col0.conv1.weight"
    pos += 2 + ln
    assert blob[pos] == 4
    assert struct.unpack("<4Q", blob[pos + 1 : pos + 33]) == (8, 3, 7, 7)
    first = np.frombuffer(blob[pos + 33 : pos + 37], "<f4")[0]
    assert first == model.params["col0.conv1.weight"].flat[0]


def test_loaded_model_gives_identical_outputs(model, tmp_path):
    checkpoint.save(model, tmp_path / "m.rdsq")
    loaded, _ = checkpoint.load(tmp_path / "m.rdsq")
    x = np.random.default_rng(1).standard_normal((2, 3, 36, 36)).astype(np.float32)
    assert S.forward(model, x).probabilities.tobytes() == S.forward(loaded, x).probabilities.tobytes()


@pytest.mark.parametrize(
    "mutate,msg",
    [
        (lambda b: b"XXXX" + b[4:], "magic"),
        (lambda b: b[:4] + struct.pack("<H", 9) + b[6:], "version"),
        (lambda b: b[:-3], "truncated"),
    ],
)
def test_corrupt_checkpoints(model, mutate, msg):
    with pytest.raises(DataError, match=msg):
        checkpoint.from_bytes(mutate(checkpoint.to_bytes(model)))


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        checkpoint.load(tmp_path / "nope.rdsq")
