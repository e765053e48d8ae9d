"""Instance-conditioning meta networks.

A meta network is a two-layer bottleneck MLP mapping an image feature (D)
through a hidden layer of width max(1, D // 16) to a single bias vector (B).
The domain meta network adds that bias to every domain context token, so the
domain block becomes input-conditional while staying one shared set of
learnable tokens. The same mechanism applied to the class block gives the
class-conditional baseline.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .backend import DTYPE


def bottleneck_dim(feature_dim: int) -> int:
    return max(1, feature_dim // 16)


class MetaNet(nn.Module):
    """Linear(D, H) -> ReLU -> Linear(H, B) with H = max(1, D // 16)."""

    def __init__(
        self,
        feature_dim: int,
        embed_dim: int,
        seed: int = 0,
        init: str = "gaussian",
        std: float = 0.02,
    ) -> None:
        super().__init__()
        if init not in ("gaussian", "zero", "zero-out"):
            raise ValueError(f"unknown init {init!r}")
        hidden = bottleneck_dim(feature_dim)
        self.feature_dim = int(feature_dim)
        self.embed_dim = int(embed_dim)
        self.hidden_dim = hidden
        w1 = torch.zeros((hidden, feature_dim), dtype=DTYPE)
        w2 = torch.zeros((embed_dim, hidden), dtype=DTYPE)
        if init != "zero":
            g = torch.Generator().manual_seed(int(seed))
            w1 = torch.randn(w1.shape, generator=g, dtype=DTYPE) * std
            drawn_w2 = torch.randn(w2.shape, generator=g, dtype=DTYPE) * std
            if init == "gaussian":
                w2 = drawn_w2
            # "zero-out" keeps the drawn first layer but zeroes the output
            # layer: the bias starts as a no-op yet still receives gradient
        self.w1 = nn.Parameter(w1)
        self.b1 = nn.Parameter(torch.zeros(hidden, dtype=DTYPE))
        self.w2 = nn.Parameter(w2)
        self.b2 = nn.Parameter(torch.zeros(embed_dim, dtype=DTYPE))

    def forward(self, feature: Tensor) -> Tensor:
        if feature.shape[-1] != self.feature_dim:
            raise ValueError(f"expected feature dim {self.feature_dim}, got {feature.shape[-1]}")
        h = torch.relu(feature @ self.w1.T + self.b1)
        return h @ self.w2.T + self.b2

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def condition_tokens(tokens: Tensor, bias: Tensor | None) -> Tensor:
    """Broadcast-add one bias vector to every token of a context block.

    ``tokens`` is (M, B) or (Y, M, B); ``bias`` is (B,). A zero-length block
    or a None bias passes through unchanged.
    """
    if bias is None or tokens.shape[-2] == 0:
        return tokens
    if bias.dim() != 1 or bias.shape[0] != tokens.shape[-1]:
        raise ValueError(f"bias shape {tuple(bias.shape)} does not match token width {tokens.shape[-1]}")
    return tokens + bias


@dataclass
class MetaNets:
    """Optional conditioning networks attached to a prompt model."""

    domain: MetaNet | None = None
    cls: MetaNet | None = None

    def modules(self) -> list[MetaNet]:
        return [m for m in (self.domain, self.cls) if m is not None]
