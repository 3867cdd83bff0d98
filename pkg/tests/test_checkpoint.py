import numpy as np
import pytest

from pclr.checkpoint import load_checkpoint, save_checkpoint
from pclr.encoder import EncoderConfig, build_model
from pclr.errors import PayloadLengthError, ShapeMismatchError, VersionError


@pytest.fixture
def saved(tiny_config, tmp_path):
    model = build_model(tiny_config, 4)
    model.epoch, model.step_count, model.extra = 3, 17, {"note": "x"}
    for p in model.trainable():
        p.m += 0.25
    return model, save_checkpoint(model, tmp_path / "m.ckpt")


def test_round_trip_is_exact(saved):
    model, path = saved
    back = load_checkpoint(path)
    assert back.config == model.config
    assert (back.epoch, back.step_count, back.extra) == (3, 17, {"note": "x"})
    for name, p in model.params.items():
        q = back.params[name]
        assert q.trainable == p.trainable
        assert np.array_equal(q.data, p.data)
        if p.trainable:
            assert np.array_equal(q.m, p.m) and np.array_equal(q.v, p.v)


def test_save_is_byte_deterministic(saved, tmp_path):
    model, path = saved
    again = save_checkpoint(model, tmp_path / "again.ckpt")
    assert path.read_bytes() == again.read_bytes()
    assert not list(tmp_path.glob("*.tmp"))


def test_truncated_payload(saved):
    _, path = saved
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(PayloadLengthError, match="payload length mismatch"):
        load_checkpoint(path)


def test_truncated_prefix(saved):
    _, path = saved
    path.write_bytes(path.read_bytes()[:10])
    with pytest.raises(PayloadLengthError):
        load_checkpoint(path)


def test_unknown_version(saved):
    _, path = saved
    blob = bytearray(path.read_bytes())
    blob[8] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_bad_magic(saved):
    _, path = saved
    path.write_bytes(b"NOTACKPT" + path.read_bytes()[8:])
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_shape_mismatch_names_array(saved):
    _, path = saved
    other = EncoderConfig(input_length=256, leads=5, kernel_size=3, stem_channels=4, block_channels=(4, 6, 6, 8))
    with pytest.raises(ShapeMismatchError, match="conv1d/kernel"):
        load_checkpoint(path, expected_config=other)
