"""Checkpoint container: byte-exact round trips and forward fidelity."""

import numpy as np
import pytest
import torch

from georeason.model.checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_state_from_arrays,
    save_checkpoint,
    state_dict_tensors,
)
from georeason.model.encoder import EncoderConfig, GroundedEncoder
from georeason.model.encoding import collate, encode_plain_text
from georeason.model.vocab import build_vocab


@pytest.fixture
def model():
    torch.manual_seed(11)
    cfg = EncoderConfig(vocab_size=20, d_model=8, n_heads=2, n_layers=1,
                        ff_dim=16, max_seq_len=16)
    return GroundedEncoder(cfg)


def test_arrays_round_trip(tmp_path, model):
    path = tmp_path / "ckpt.bin"
    tensors = state_dict_tensors(model, "encoder.")
    save_checkpoint(path, {"encoder": model.config.to_dict()}, tensors)
    config, arrays = load_checkpoint(path)
    assert config["encoder"]["d_model"] == 8
    assert set(arrays) == set(tensors)
    for name, t in tensors.items():
        np.testing.assert_array_equal(arrays[name], t.detach().numpy().astype("<f4"))


def test_byte_exact_resave(tmp_path, model):
    p1 = tmp_path / "a.bin"
    p2 = tmp_path / "b.bin"
    save_checkpoint(p1, {"encoder": model.config.to_dict()}, state_dict_tensors(model))
    config, arrays = load_checkpoint(p1)
    save_checkpoint(p2, config, arrays)
    assert p1.read_bytes() == p2.read_bytes()


def test_forward_identical_after_reload(tmp_path, model):
    vocab = build_vocab(["alpha beta gamma delta"], max_size=20)
    batch = collate([encode_plain_text("alpha beta gamma", vocab, 16)])
    before = model(batch)

    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, {"encoder": model.config.to_dict()}, state_dict_tensors(model, "encoder."))
    config, arrays = load_checkpoint(path)
    restored = GroundedEncoder(EncoderConfig(**config["encoder"]))
    load_state_from_arrays(restored, arrays, "encoder.")
    after = restored(batch)
    assert torch.equal(before, after)


def test_bad_header_rejected(tmp_path):
    path = tmp_path / "broken.bin"
    path.write_bytes(b"\x00\x01not json\n1234")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_unsupported_version_rejected(tmp_path):
    path = tmp_path / "versioned.bin"
    path.write_bytes(b'{"format_version": 99, "config": {}, "tensors": []}\n')
    with pytest.raises(CheckpointError, match="format_version"):
        load_checkpoint(path)


def test_truncated_data_rejected(tmp_path):
    path = tmp_path / "short.bin"
    header = b'{"config":{},"format_version":1,"tensors":[{"name":"w","offset":0,"shape":[4]}]}\n'
    path.write_bytes(header + b"\x00" * 8)  # needs 16 bytes
    with pytest.raises(CheckpointError, match="EOF"):
        load_checkpoint(path)


def test_scalar_and_empty_shapes(tmp_path):
    path = tmp_path / "shapes.bin"
    save_checkpoint(path, {}, {"scalar": np.float32(3.5), "empty": np.zeros((0, 4), "<f4")})
    _, arrays = load_checkpoint(path)
    assert arrays["scalar"].shape == ()
    assert arrays["scalar"] == np.float32(3.5)
    assert arrays["empty"].shape == (0, 4)
