import numpy as np
import pytest

from driftlab.agents import init_lm, init_params, train_lm
from driftlab.autodiff import Rng
from driftlab.checkpoint import (
    FREEZE_HASH_KEY,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    pack_agents,
    save_checkpoint,
    unpack_agents,
)
from driftlab.errors import CheckpointError, ContractError


def sample_tensors():
    rng = Rng(0)
    return {
        "a.weight": rng.uniform(-1, 1, size=(3, 4)),
        "a.bias": rng.uniform(-1, 1, size=(4,)),
        "scalar": np.array(2.5),
    }


def test_save_load_save_is_byte_identical(tmp_path):
    first = save_checkpoint(tmp_path / "one.ckpt", sample_tensors())
    loaded = load_checkpoint(first)
    second = save_checkpoint(tmp_path / "two.ckpt", loaded)
    assert first.read_bytes() == second.read_bytes()
    assert list(loaded) == ["a.weight", "a.bias", "scalar"]
    assert loaded["scalar"].shape == ()


def test_header_layout():
    blob = encode_checkpoint({"x": np.zeros(2)})
    assert blob[:8] == b"SSILCKPT"
    assert int.from_bytes(blob[8:12], "little") == 1
    assert int.from_bytes(blob[12:16], "little") == 1


def test_corruption_is_detected():
    blob = bytearray(encode_checkpoint(sample_tensors()))
    blob[20] ^= 0xFF
    with pytest.raises(CheckpointError, match="CRC"):
        decode_checkpoint(bytes(blob))


def test_bad_magic_and_truncation():
    blob = encode_checkpoint(sample_tensors())
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"NOTACKPT" + blob[8:])
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob[:10])


def test_agents_round_trip_with_frozen_lm():
    sender = init_params(1, 5, 5, hidden=4)
    receiver = init_params(2, 5, 5, hidden=4)
    lm = init_lm(3, 5, hidden=4)
    train_lm(lm, [(0, 1, 2), (3, 4, 0)], epochs=1, rng=Rng(0))
    tensors = decode_checkpoint(encode_checkpoint(pack_agents(sender, receiver, lm)))
    assert FREEZE_HASH_KEY in tensors
    agents = unpack_agents(tensors)
    assert agents["sender"].content_hash() == sender.content_hash()
    assert agents["receiver"].content_hash() == receiver.content_hash()
    assert agents["lm"].freeze_hash == lm.freeze_hash


def test_tampered_lm_fails_the_freeze_check():
    lm = init_lm(3, 5, hidden=4)
    train_lm(lm, [(0, 1, 2)], epochs=1, rng=Rng(0))
    tensors = pack_agents(lm=lm)
    tensors["lm.bias"] = tensors["lm.bias"] + 1.0
    with pytest.raises(ContractError):
        unpack_agents(tensors)
