"""Toy dual encoder: determinism, golden values, hashing, registry."""
from __future__ import annotations

import math
import zlib

import numpy as np
import pytest
import torch

from codol.backend import (
    BackendDescriptor,
    ToyDualEncoder,
    available_backends,
    create_backend,
    make_toy_backend,
)

# frozen from a reference run of this construction; any change to the tensor
# draw order, shapes or dtype shows up here first
HASH16 = "6ee07d40227528bcf1c47a44c8b058175a4b617af729fbf5ee27be6b9bf3779d"
HASH16_SEED1 = "12ff496cb5fd32859ae6008b7ce7bbb991a9d39a4b539efbd50604cf532d40a9"

TEXT_GOLD = [0.391931654038, -0.126680173620, 0.045871653401, -0.171325812024]
IMG_GOLD = [-0.369858629306, 0.062413864211, 0.203831537430, 0.137749768612]
IMG_UNNORM_GOLD = [-0.599127138409, 0.101103061816, 0.330182929536, 0.223138297030]
UNNORM_NORM = 1.6198814653425333
BIRD_ROW_GOLD = [-0.259668192419, 0.208057689375, -0.153387631687]


def test_param_hash_frozen(toy16):
    assert toy16.param_hash() == HASH16


def test_param_hash_seed_sensitivity():
    b = make_toy_backend(seed=1, feature_dim=16, embed_dim=16, depth=2)
    assert b.param_hash() == HASH16_SEED1
    assert b.param_hash() != HASH16


def test_construction_bit_identical(toy16):
    again = make_toy_backend(seed=0, feature_dim=16, embed_dim=16, depth=2)
    for name, t in toy16.named_tensors().items():
        assert torch.equal(t, again.named_tensors()[name]), name
    assert again.param_hash() == toy16.param_hash()


def test_encode_text_golden(toy16):
    t = toy16.encode_text(toy16.embed_name("a photo of a dog"))
    assert t.dtype == torch.float64
    np.testing.assert_allclose(t[:4].numpy(), TEXT_GOLD, atol=1e-10)
    assert abs(float(torch.linalg.vector_norm(t)) - 1.0) < 1e-12


def test_encode_image_golden(toy16):
    x = torch.linspace(-1.0, 1.0, 16, dtype=torch.float64)
    z = toy16.encode_image(x)
    np.testing.assert_allclose(z[:4].numpy(), IMG_GOLD, atol=1e-10)
    assert abs(float(torch.linalg.vector_norm(z)) - 1.0) < 1e-12


def test_normalize_flag_off():
    b = make_toy_backend(seed=0, feature_dim=16, embed_dim=16, depth=2, normalize=False)
    x = torch.linspace(-1.0, 1.0, 16, dtype=torch.float64)
    z = b.encode_image(x)
    np.testing.assert_allclose(z[:4].numpy(), IMG_UNNORM_GOLD, atol=1e-10)
    assert abs(float(torch.linalg.vector_norm(z)) - UNNORM_NORM) < 1e-10


def test_token_rows_crc32(toy16):
    # whole-word hashing, lowercased; frozen indices double-checked against
    # an inline crc32 computation
    assert toy16.token_rows("a photo of a dog") == [3651, 1048, 506, 3651, 2429]
    assert toy16.token_rows("Bird") == toy16.token_rows("bird") == [3598]
    for word, row in [("a", 3651), ("photo", 1048), ("of", 506), ("dog", 2429)]:
        assert zlib.crc32(word.encode()) % 4096 == row


def test_embed_name_selects_table_rows(toy16):
    row = toy16.embed_name("bird")
    assert row.shape == (1, 16)
    np.testing.assert_allclose(row[0, :3].numpy(), BIRD_ROW_GOLD, atol=1e-10)
    assert torch.equal(row[0], toy16.named_tensors()["embed_table"][3598])


def test_token_rows_empty_name(toy16):
    with pytest.raises(ValueError, match="at least one token"):
        toy16.token_rows("   ")


def test_position_weights_formula(toy16):
    # w(l) = 1 + 0.5 sin(0.7 l + 0.3); constant sequences pool to themselves
    w = toy16._pos_weights
    for l in range(10):
        assert abs(float(w[l]) - (1.0 + 0.5 * math.sin(0.7 * l + 0.3))) < 1e-12
    row = toy16.embed_name("dog")
    const = row.repeat(5, 1)
    assert torch.allclose(toy16.encode_text(const), toy16.encode_text(row), atol=1e-12)


def test_pooling_weights_change_order_sensitivity(toy16):
    a = toy16.embed_name("bird car")
    b = toy16.embed_name("car bird")
    assert not torch.allclose(toy16.encode_text(a), toy16.encode_text(b))


def test_encode_text_validation(toy16):
    with pytest.raises(ValueError, match="non-empty"):
        toy16.encode_text(torch.zeros((0, 16), dtype=torch.float64))
    with pytest.raises(ValueError, match="embed_dim"):
        toy16.encode_text(torch.zeros((3, 8), dtype=torch.float64))
    with pytest.raises(ValueError, match="max_length"):
        toy16.encode_text(torch.zeros((78, 16), dtype=torch.float64))


def test_encode_image_validation(toy16):
    with pytest.raises(ValueError, match="input values"):
        toy16.encode_image(torch.zeros(8, dtype=torch.float64))
    with pytest.raises(ValueError, match="flat vector"):
        toy16.encode_image(torch.zeros((4, 4), dtype=torch.float64))


def test_encode_image_raw_array():
    b = make_toy_backend(seed=0, feature_dim=16, embed_dim=16, depth=2, image_dim=12)
    raw = np.arange(12, dtype=np.float64).reshape(3, 2, 2)
    z3 = b.encode_image(raw)
    z1 = b.encode_image(torch.arange(12, dtype=torch.float64))
    assert torch.allclose(z3, z1, atol=1e-12)


def test_encode_text_differentiable(toy16):
    seq = toy16.embed_name("a photo of a dog").clone().requires_grad_(True)
    out = toy16.encode_text(seq).sum()
    out.backward()
    assert seq.grad is not None
    assert float(seq.grad.abs().sum()) > 0


def test_backend_tensors_frozen(toy16):
    assert all(not t.requires_grad for t in toy16.named_tensors().values())


def test_descriptor_validation():
    with pytest.raises(ValueError):
        BackendDescriptor("x", 0, 16, 77, 1.0, True)
    with pytest.raises(ValueError):
        BackendDescriptor("x", 16, 16, 0, 1.0, True)
    with pytest.raises(ValueError):
        BackendDescriptor("x", 16, 16, 77, 0.0, True)
    with pytest.raises(ValueError):
        ToyDualEncoder(vocab_rows=0)


def test_registry_round_trip(toy16):
    assert "toy" in available_backends()
    rebuilt = create_backend(toy16.spec())
    assert rebuilt.param_hash() == toy16.param_hash()
    with pytest.raises(ValueError, match="name"):
        create_backend({"seed": 0})
    with pytest.raises(ValueError, match="unknown backend"):
        create_backend({"name": "resnet"})


def test_spec_reports_construction(toy16):
    spec = toy16.spec()
    assert spec["name"] == "toy"
    assert spec["seed"] == 0
    assert spec["feature_dim"] == spec["embed_dim"] == 16
    assert spec["depth"] == 2
