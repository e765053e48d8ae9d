"""Learnable prompt contexts and prompt sequence assembly.

A prompt for class y under domain j is the token-embedding sequence

    [class context tokens] [domain context tokens] [class name] [domain name]

where the two context blocks are learnable and the name blocks come from the
frozen backend embedding table. Plain class-prompt tuning drops the two
domain blocks; zero-shot drops both learnable blocks and uses a fixed word
template instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
from torch import Tensor, nn

from .backend import DTYPE, DualEncoderBackend

CLASS_CTX = "class_ctx"
DOMAIN_CTX = "domain_ctx"
CLASS_NAME = "class_name"
DOMAIN_NAME = "domain_name"
TEMPLATE = "template"

DEFAULT_TEMPLATE: tuple[str, ...] = ("a", "photo", "of", "a")


def init_contexts(
    class_ctx_len: int,
    domain_ctx_len: int,
    embed_dim: int,
    seed: int,
    class_specific: bool = False,
    n_classes: int | None = None,
    std: float = 0.02,
) -> tuple[Tensor, Tensor]:
    """Draw fresh context tokens from N(0, std^2) with a dedicated generator.

    Returns (class_ctx, domain_ctx) with shapes (M_c, B) and (M_k, B), or
    (n_classes, M_c, B) for the class-specific variant. Either length may be
    zero; the corresponding block is then empty. The draw order is fixed
    (class block first), so models that share a seed share the class block
    regardless of the domain block length.
    """
    if class_ctx_len < 0 or domain_ctx_len < 0:
        raise ValueError("context lengths must be >= 0")
    if class_specific and not n_classes:
        raise ValueError("class_specific init needs n_classes")
    g = torch.Generator().manual_seed(int(seed))
    if class_specific:
        class_shape: tuple[int, ...] = (int(n_classes), class_ctx_len, embed_dim)
    else:
        class_shape = (class_ctx_len, embed_dim)
    class_ctx = torch.randn(class_shape, generator=g, dtype=DTYPE) * std
    domain_ctx = torch.randn((domain_ctx_len, embed_dim), generator=g, dtype=DTYPE) * std
    return class_ctx, domain_ctx


class PromptParams(nn.Module):
    """Holds the learnable context blocks."""

    def __init__(self, class_ctx: Tensor, domain_ctx: Tensor) -> None:
        super().__init__()
        if class_ctx.dim() not in (2, 3) or domain_ctx.dim() != 2:
            raise ValueError("class_ctx must be (M_c, B) or (Y, M_c, B); domain_ctx must be (M_k, B)")
        self.class_ctx = nn.Parameter(class_ctx.to(DTYPE).clone())
        self.domain_ctx = nn.Parameter(domain_ctx.to(DTYPE).clone())

    @classmethod
    def init(
        cls,
        class_ctx_len: int,
        domain_ctx_len: int,
        embed_dim: int,
        seed: int,
        class_specific: bool = False,
        n_classes: int | None = None,
    ) -> "PromptParams":
        c, d = init_contexts(
            class_ctx_len, domain_ctx_len, embed_dim, seed,
            class_specific=class_specific, n_classes=n_classes,
        )
        return cls(c, d)

    @property
    def class_specific(self) -> bool:
        return self.class_ctx.dim() == 3

    def class_block(self, class_id: int) -> Tensor:
        """The (M_c, B) class block, row-selected for class-specific params."""
        if self.class_specific:
            return self.class_ctx[class_id]
        return self.class_ctx


class NameVocabulary:
    """Class and domain names with cached per-backend embeddings."""

    def __init__(self, class_names: Sequence[str], domain_names: Sequence[str]) -> None:
        self.class_names = tuple(class_names)
        self.domain_names = tuple(domain_names)
        if not self.class_names:
            raise ValueError("need at least one class name")
        for kind, names in (("class", self.class_names), ("domain", self.domain_names)):
            if any(not n.strip() for n in names):
                raise ValueError(f"{kind} names must be non-empty")
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {kind} names")
        self._cache: dict[tuple[int, str], Tensor] = {}

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_domains(self) -> int:
        return len(self.domain_names)

    def _embed(self, backend: DualEncoderBackend, name: str) -> Tensor:
        key = (id(backend), name)
        if key not in self._cache:
            self._cache[key] = backend.embed_name(name).detach()
        return self._cache[key]

    def class_embedding(self, backend: DualEncoderBackend, class_id: int) -> Tensor:
        return self._embed(backend, self.class_names[class_id])

    def domain_embedding(self, backend: DualEncoderBackend, domain_id: int) -> Tensor:
        return self._embed(backend, self.domain_names[domain_id])

    def restrict_domains(self, domain_ids: Sequence[int]) -> "NameVocabulary":
        """A view with only the given domains, preserving the given order."""
        names = [self.domain_names[i] for i in domain_ids]
        return NameVocabulary(self.class_names, names)


@dataclass(frozen=True)
class PromptAssembly:
    """An assembled prompt: the (L, B) sequence plus segment bookkeeping."""

    embeddings: Tensor
    segments: tuple[tuple[str, int], ...]
    class_id: int
    domain_id: int | None = None

    @property
    def length(self) -> int:
        return int(self.embeddings.shape[0])

    def segment_slice(self, tag: str) -> slice:
        start = 0
        for seg_tag, seg_len in self.segments:
            if seg_tag == tag:
                return slice(start, start + seg_len)
            start += seg_len
        raise KeyError(f"no segment {tag!r}")


def _finish(
    backend: DualEncoderBackend,
    parts: list[tuple[str, Tensor]],
    class_id: int,
    domain_id: int | None,
) -> PromptAssembly:
    kept = [(tag, t) for tag, t in parts if t.shape[0] > 0]
    if not kept:
        raise ValueError("prompt would be empty")
    emb = torch.cat([t for _, t in kept], dim=0)
    if emb.shape[0] > backend.descriptor.max_length:
        raise ValueError(
            f"prompt length {emb.shape[0]} exceeds backend max_length "
            f"{backend.descriptor.max_length}"
        )
    segs = tuple((tag, int(t.shape[0])) for tag, t in kept)
    return PromptAssembly(embeddings=emb, segments=segs, class_id=class_id, domain_id=domain_id)


def assemble_codol(
    backend: DualEncoderBackend,
    vocab: NameVocabulary,
    class_block: Tensor,
    domain_block: Tensor,
    class_id: int,
    domain_id: int,
) -> PromptAssembly:
    """Full prompt: class ctx, domain ctx, class name, domain name."""
    if not 0 <= class_id < vocab.n_classes:
        raise IndexError(f"class_id {class_id} out of range")
    if not 0 <= domain_id < vocab.n_domains:
        raise IndexError(f"domain_id {domain_id} out of range")
    parts = [
        (CLASS_CTX, class_block),
        (DOMAIN_CTX, domain_block),
        (CLASS_NAME, vocab.class_embedding(backend, class_id)),
        (DOMAIN_NAME, vocab.domain_embedding(backend, domain_id)),
    ]
    return _finish(backend, parts, class_id, domain_id)


def assemble_coop(
    backend: DualEncoderBackend,
    vocab: NameVocabulary,
    class_block: Tensor,
    class_id: int,
) -> PromptAssembly:
    """Class-only prompt: class ctx, class name."""
    if not 0 <= class_id < vocab.n_classes:
        raise IndexError(f"class_id {class_id} out of range")
    parts = [
        (CLASS_CTX, class_block),
        (CLASS_NAME, vocab.class_embedding(backend, class_id)),
    ]
    return _finish(backend, parts, class_id, None)


def assemble_zeroshot(
    backend: DualEncoderBackend,
    vocab: NameVocabulary,
    class_id: int,
    domain_id: int | None = None,
    template: Sequence[str] = DEFAULT_TEMPLATE,
) -> PromptAssembly:
    """Hand-written prompt: template words, class name, optional domain name."""
    if not 0 <= class_id < vocab.n_classes:
        raise IndexError(f"class_id {class_id} out of range")
    if domain_id is not None and not 0 <= domain_id < vocab.n_domains:
        raise IndexError(f"domain_id {domain_id} out of range")
    if template:
        tmpl = torch.cat([backend.embed_name(w) for w in template], dim=0)
    else:
        tmpl = torch.zeros((0, backend.descriptor.embed_dim), dtype=DTYPE)
    parts = [
        (TEMPLATE, tmpl),
        (CLASS_NAME, vocab.class_embedding(backend, class_id)),
    ]
    if domain_id is not None:
        parts.append((DOMAIN_NAME, vocab.domain_embedding(backend, domain_id)))
    return _finish(backend, parts, class_id, domain_id)
