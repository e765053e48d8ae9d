"""Conditioning networks: hand-computed forward oracle, inits, broadcasting."""
from __future__ import annotations

import pytest
import torch

from codol.metanet import MetaNet, MetaNets, bottleneck_dim, condition_tokens


def test_bottleneck_dim_floor():
    assert bottleneck_dim(16) == 1
    assert bottleneck_dim(32) == 2
    assert bottleneck_dim(256) == 16
    assert bottleneck_dim(8) == 1  # floored at 1 below one full group
    assert bottleneck_dim(31) == 1


def _hand_net():
    # D=4 -> H=1 -> B=4 so every product is checkable by hand
    net = MetaNet(4, 4, init="zero")
    with torch.no_grad():
        net.w1.copy_(torch.tensor([[0.5, -1.0, -2.0, 0.25]], dtype=torch.float64))
        net.b1.copy_(torch.tensor([0.1], dtype=torch.float64))
        net.w2.copy_(torch.tensor([[1.0], [-0.5], [0.25], [2.0]], dtype=torch.float64))
        net.b2.copy_(torch.tensor([0.0, 0.1, -0.1, 1.0], dtype=torch.float64))
    return net


def test_forward_hand_oracle_active():
    # pre-activation 0.5*1 + (-1)*0 + (-2)*(-1) + 0.25*2 + 0.1 = 3.1 (ReLU on)
    net = _hand_net()
    z = torch.tensor([1.0, 0.0, -1.0, 2.0], dtype=torch.float64)
    expected = torch.tensor([3.1, -1.45, 0.675, 7.2], dtype=torch.float64)
    assert torch.allclose(net(z), expected, atol=1e-12)


def test_forward_hand_oracle_clipped():
    # pre-activation -2.9 clips to zero, so the output is exactly b2
    net = _hand_net()
    z = torch.tensor([-1.0, 0.0, 1.0, -2.0], dtype=torch.float64)
    assert torch.allclose(net(z), net.b2, atol=1e-12)


def test_init_modes():
    zero = MetaNet(32, 16, seed=5, init="zero")
    assert float(zero.w1.detach().abs().sum()) == 0.0
    assert float(zero.w2.detach().abs().sum()) == 0.0

    gauss = MetaNet(32, 16, seed=5, init="gaussian")
    assert float(gauss.w1.detach().abs().sum()) > 0
    assert float(gauss.w2.detach().abs().sum()) > 0

    zout = MetaNet(32, 16, seed=5, init="zero-out")
    assert float(zout.w2.detach().abs().sum()) == 0.0
    # draw order is preserved, so the hidden layer matches the gaussian init
    assert torch.equal(zout.w1, gauss.w1)
    # a zeroed output layer means the bias starts as an exact no-op
    z = torch.randn(32, generator=torch.Generator().manual_seed(3), dtype=torch.float64)
    assert torch.equal(zout(z), torch.zeros(16, dtype=torch.float64))

    with pytest.raises(ValueError, match="unknown init"):
        MetaNet(32, 16, init="xavier")


def test_determinism_and_shapes():
    a = MetaNet(32, 16, seed=9)
    b = MetaNet(32, 16, seed=9)
    assert torch.equal(a.w1, b.w1) and torch.equal(a.w2, b.w2)
    assert a.w1.shape == (2, 32) and a.w2.shape == (16, 2)
    assert a.b1.shape == (2,) and a.b2.shape == (16,)
    c = MetaNet(32, 16, seed=10)
    assert not torch.equal(a.w1, c.w1)


def test_param_count():
    net = MetaNet(32, 16)
    h = bottleneck_dim(32)
    assert net.param_count() == h * 32 + h + 16 * h + 16
    assert all(p.requires_grad for p in net.parameters())


def test_forward_dim_check():
    net = MetaNet(32, 16)
    with pytest.raises(ValueError, match="feature dim"):
        net(torch.zeros(8, dtype=torch.float64))


def test_condition_tokens_broadcast():
    tokens = torch.zeros((3, 4), dtype=torch.float64)
    bias = torch.tensor([1.0, 2.0, 3.0, 4.0], dtype=torch.float64)
    out = condition_tokens(tokens, bias)
    assert torch.equal(out, bias.expand(3, 4))

    stacked = torch.zeros((2, 3, 4), dtype=torch.float64)
    out3 = condition_tokens(stacked, bias)
    assert out3.shape == (2, 3, 4)
    assert torch.equal(out3[1, 2], bias)


def test_condition_tokens_passthrough():
    tokens = torch.randn((3, 4), generator=torch.Generator().manual_seed(4), dtype=torch.float64)
    assert condition_tokens(tokens, None) is tokens
    empty = torch.zeros((0, 4), dtype=torch.float64)
    assert condition_tokens(empty, torch.ones(4, dtype=torch.float64)) is empty


def test_condition_tokens_shape_check():
    tokens = torch.zeros((3, 4), dtype=torch.float64)
    with pytest.raises(ValueError, match="bias shape"):
        condition_tokens(tokens, torch.ones(5, dtype=torch.float64))


def test_metanets_modules():
    nets = MetaNets()
    assert nets.modules() == []
    nets.domain = MetaNet(16, 16)
    nets.cls = MetaNet(16, 16)
    assert nets.modules() == [nets.domain, nets.cls]


def test_gradient_flow():
    net = MetaNet(16, 16, seed=0, init="gaussian")
    # sign-match the input to w1 so the single bottleneck unit is active;
    # a dead ReLU would zero the w2 gradient and prove nothing
    z = net.w1[0].detach().sign()
    net(z).sum().backward()
    assert net.w1.grad is not None and net.w2.grad is not None
    assert float(net.w2.grad.abs().sum()) > 0
