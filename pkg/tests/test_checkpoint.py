import numpy as np
import pytest

from app.core.errors import CheckpointError
from app.services.checkpoint import (
    CHECKSUM_SIZE,
    MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from app.services.diagnostics import toy_settings
from app.services.params import init_params


def test_round_trip_is_bitwise(tiny_settings, tiny_params, tmp_path):
    path = tmp_path / "nested" / "model.ckpt"
    save_checkpoint(tiny_params, path)
    restored = load_checkpoint(path, tiny_settings)
    assert restored.names() == tiny_params.names()
    for (_, a), (_, b) in zip(tiny_params.items(), restored.items()):
        assert a.shape == b.shape
        assert a.data.tobytes() == b.data.tobytes()


def test_layout_starts_with_magic(tiny_params):
    blob = encode_checkpoint(tiny_params)
    assert blob[:4] == MAGIC
    assert int.from_bytes(blob[4:8], "little") == 1


def test_corrupted_payload_fails_the_checksum(tiny_params):
    blob = bytearray(encode_checkpoint(tiny_params))
    blob[40] ^= 0x01
    with pytest.raises(CheckpointError, match="checksum"):
        decode_checkpoint(bytes(blob))


def test_bad_magic_and_truncation(tiny_params):
    blob = encode_checkpoint(tiny_params)
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"NOPE" + blob[4:])
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob[:10])
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob[:-CHECKSUM_SIZE - 3] + blob[-CHECKSUM_SIZE:])


def test_shape_validation_against_configuration(tiny_params, tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(tiny_params, path)
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path, toy_settings(embed_dim=8))
    assert load_checkpoint(path).num_values() == tiny_params.num_values()


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_values_survive_exactly(tiny_settings):
    params = init_params(tiny_settings, seed=11, std=1.0)
    np.testing.assert_array_equal(decode_checkpoint(encode_checkpoint(params)).to_vector(),
                                  params.to_vector())
