"""Frozen image/text dual-encoder contract and a deterministic toy implementation.

Every backend exposes the same three operations: encode an image into a
D-dimensional feature, encode a token-embedding sequence into a D-dimensional
text feature, and embed a whitespace-separated name into per-token rows of the
B-dimensional embedding space. Backends are frozen: their tensors never
require grad and their bytes are hashable so training can assert nothing
leaked into the optimizer.

Library convention: float64 everywhere. Adapters for external encoders should
convert at this boundary.
"""
from __future__ import annotations

import hashlib
import json
import math
import zlib
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
import torch
from torch import Tensor

DTYPE = torch.float64


@dataclass(frozen=True)
class BackendDescriptor:
    """Static facts a caller needs without touching backend internals."""

    name: str
    feature_dim: int
    embed_dim: int
    max_length: int
    default_tau: float
    normalize: bool
    vocab_size: int = 0

    def __post_init__(self) -> None:
        if self.feature_dim < 1 or self.embed_dim < 1:
            raise ValueError("feature_dim and embed_dim must be positive")
        if self.max_length < 1:
            raise ValueError("max_length must be positive")
        if self.default_tau <= 0:
            raise ValueError("default_tau must be positive")


class DualEncoderBackend(ABC):
    """Contract for a frozen dual encoder."""

    @property
    @abstractmethod
    def descriptor(self) -> BackendDescriptor: ...

    @abstractmethod
    def encode_image(self, image: Tensor | np.ndarray) -> Tensor:
        """Map an image (flat vector or raw channel-first array) to a D-vector."""

    @abstractmethod
    def encode_text(self, sequence: Tensor) -> Tensor:
        """Map a token-embedding sequence of shape (L, B) to a D-vector.

        Must be differentiable with respect to ``sequence`` so gradients can
        flow back into learnable prompt tokens.
        """

    @abstractmethod
    def embed_name(self, name: str) -> Tensor:
        """Embed a name as one row per whitespace token, shape (n_tokens, B)."""

    @abstractmethod
    def named_tensors(self) -> dict[str, Tensor]:
        """All frozen tensors, keyed by stable names."""

    def param_hash(self) -> str:
        """sha256 over the descriptor and all frozen tensor bytes.

        Stable across processes for the same construction arguments; used to
        prove the encoder did not move during training.
        """
        h = hashlib.sha256()
        h.update(json.dumps(asdict(self.descriptor), sort_keys=True).encode("utf-8"))
        for name in sorted(self.named_tensors()):
            t = self.named_tensors()[name].detach().cpu().contiguous()
            h.update(name.encode("utf-8"))
            h.update(str(t.dtype).encode("utf-8"))
            h.update(np.ascontiguousarray(t.numpy()).astype("<f8").tobytes())
        return h.hexdigest()

    def _maybe_normalize(self, v: Tensor) -> Tensor:
        if not self.descriptor.normalize:
            return v
        norm = torch.linalg.vector_norm(v, dim=-1, keepdim=True)
        return v / torch.clamp(norm, min=1e-12)


def _affine_stack_dims(in_dim: int, out_dim: int, depth: int) -> list[tuple[int, int]]:
    # depth affine layers; hidden width equals out_dim
    if depth < 1:
        raise ValueError("depth must be >= 1")
    dims = [in_dim] + [out_dim] * depth
    return [(dims[i], dims[i + 1]) for i in range(depth)]


class ToyDualEncoder(DualEncoderBackend):
    """Seeded, frozen, closed-form dual encoder for desk-scale verification.

    Image side: affine layers with tanh between them and an affine map last,
    input width ``image_dim``, output width ``feature_dim``.
    Text side: position-weighted mean pooling over the (L, B) sequence with
    weights w(l) = 1 + 0.5*sin(0.7*l + 0.3), followed by the same kind of
    affine/tanh stack from B to D.
    Names are tokenized whole-word (lowercased split) and each word picks a
    row of a seeded embedding table via crc32 hashing.

    All tensors are drawn once from a torch.Generator seeded with ``seed`` in
    a fixed order (embedding table, image stack, text stack), so two encoders
    built with the same arguments are bit-identical.
    """

    def __init__(
        self,
        seed: int = 0,
        feature_dim: int = 16,
        embed_dim: int = 16,
        depth: int = 2,
        max_length: int = 77,
        normalize: bool = True,
        image_dim: int | None = None,
        vocab_rows: int = 4096,
        default_tau: float = 1.0,
    ) -> None:
        if vocab_rows < 1:
            raise ValueError("vocab_rows must be positive")
        self.seed = int(seed)
        self.image_dim = int(image_dim) if image_dim is not None else int(feature_dim)
        self.vocab_rows = int(vocab_rows)
        self._descriptor = BackendDescriptor(
            name="toy",
            feature_dim=int(feature_dim),
            embed_dim=int(embed_dim),
            max_length=int(max_length),
            default_tau=float(default_tau),
            normalize=bool(normalize),
            vocab_size=int(vocab_rows),
        )
        g = torch.Generator().manual_seed(self.seed)

        def draw(shape: tuple[int, ...], std: float) -> Tensor:
            t = torch.randn(shape, generator=g, dtype=DTYPE) * std
            t.requires_grad_(False)
            return t

        b = int(embed_dim)
        self._embed_table = draw((self.vocab_rows, b), 1.0 / math.sqrt(b))
        self._image_layers: list[tuple[Tensor, Tensor]] = []
        for fan_in, fan_out in _affine_stack_dims(self.image_dim, int(feature_dim), depth):
            w = draw((fan_out, fan_in), 1.0 / math.sqrt(fan_in))
            bias = draw((fan_out,), 0.05)
            self._image_layers.append((w, bias))
        self._text_layers: list[tuple[Tensor, Tensor]] = []
        for fan_in, fan_out in _affine_stack_dims(b, int(feature_dim), depth):
            w = draw((fan_out, fan_in), 1.0 / math.sqrt(fan_in))
            bias = draw((fan_out,), 0.05)
            self._text_layers.append((w, bias))
        self._pos_weights = 1.0 + 0.5 * torch.sin(
            0.7 * torch.arange(int(max_length), dtype=DTYPE) + 0.3
        )

    @property
    def descriptor(self) -> BackendDescriptor:
        return self._descriptor

    def spec(self) -> dict[str, Any]:
        """Constructor arguments; create_backend(spec) rebuilds bit-identically."""
        return {
            "name": "toy",
            "seed": self.seed,
            "feature_dim": self._descriptor.feature_dim,
            "embed_dim": self._descriptor.embed_dim,
            "depth": len(self._image_layers),
            "max_length": self._descriptor.max_length,
            "normalize": self._descriptor.normalize,
            "image_dim": self.image_dim,
            "vocab_rows": self.vocab_rows,
            "default_tau": self._descriptor.default_tau,
        }

    def _run_stack(self, x: Tensor, layers: list[tuple[Tensor, Tensor]]) -> Tensor:
        for i, (w, bias) in enumerate(layers):
            x = x @ w.T + bias
            if i < len(layers) - 1:
                x = torch.tanh(x)
        return x

    def encode_image(self, image: Tensor | np.ndarray) -> Tensor:
        if isinstance(image, np.ndarray):
            image = torch.from_numpy(np.ascontiguousarray(image))
        x = image.to(DTYPE)
        if x.dim() == 3:
            x = x.reshape(-1)
        if x.dim() != 1:
            raise ValueError(f"expected a flat vector or 3-d array, got shape {tuple(image.shape)}")
        if x.shape[0] != self.image_dim:
            raise ValueError(f"expected {self.image_dim} input values, got {x.shape[0]}")
        return self._maybe_normalize(self._run_stack(x, self._image_layers))

    def encode_text(self, sequence: Tensor) -> Tensor:
        if sequence.dim() != 2 or sequence.shape[0] < 1:
            raise ValueError(f"expected a non-empty (L, B) sequence, got shape {tuple(sequence.shape)}")
        length, b = sequence.shape
        if b != self._descriptor.embed_dim:
            raise ValueError(f"expected embed_dim {self._descriptor.embed_dim}, got {b}")
        if length > self._descriptor.max_length:
            raise ValueError(f"sequence length {length} exceeds max_length {self._descriptor.max_length}")
        w = self._pos_weights[:length]
        pooled = (w[:, None] * sequence.to(DTYPE)).sum(dim=0) / w.sum()
        return self._maybe_normalize(self._run_stack(pooled, self._text_layers))

    def token_rows(self, name: str) -> list[int]:
        """crc32 row index per whitespace-separated, lowercased word."""
        words = name.lower().split()
        if not words:
            raise ValueError("name must contain at least one token")
        return [zlib.crc32(word.encode("utf-8")) % self.vocab_rows for word in words]

    def embed_name(self, name: str) -> Tensor:
        rows = self.token_rows(name)
        return self._embed_table[rows, :]

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {"embed_table": self._embed_table}
        for i, (w, bias) in enumerate(self._image_layers):
            out[f"image.{i}.weight"] = w
            out[f"image.{i}.bias"] = bias
        for i, (w, bias) in enumerate(self._text_layers):
            out[f"text.{i}.weight"] = w
            out[f"text.{i}.bias"] = bias
        return out


def make_toy_backend(seed: int = 0, **kwargs: Any) -> ToyDualEncoder:
    return ToyDualEncoder(seed=seed, **kwargs)


_REGISTRY: dict[str, Callable[..., DualEncoderBackend]] = {}


def register_backend(name: str, factory: Callable[..., DualEncoderBackend]) -> None:
    """Register a backend factory; factory receives the spec minus 'name'."""
    if not name:
        raise ValueError("backend name must be non-empty")
    _REGISTRY[name] = factory


def available_backends() -> list[str]:
    return sorted(_REGISTRY)


def create_backend(spec: Mapping[str, Any]) -> DualEncoderBackend:
    """Build a backend from a spec mapping with a 'name' key.

    The spec is the unit of persistence: checkpoints store it and rebuild the
    frozen encoder from it, then verify the parameter hash.
    """
    if "name" not in spec:
        raise ValueError("backend spec needs a 'name' key")
    name = spec["name"]
    if name not in _REGISTRY:
        raise ValueError(f"unknown backend {name!r}; known: {available_backends()}")
    kwargs = {k: v for k, v in spec.items() if k != "name"}
    return _REGISTRY[name](**kwargs)


register_backend("toy", make_toy_backend)
