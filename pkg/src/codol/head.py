"""Class-by-domain scoring grid, marginalized posteriors, loss and prediction.

For an image feature z the model scores every (class y, domain j) prompt by
cosine similarity, turns the (Y, K) score grid into a joint posterior
p(y, j | z), and classifies with the domain-marginalized p(y | z). Two
posterior constructions are supported:

* ``joint-softmax``: one softmax over all Y*K grid entries (the canonical
  form; the marginal is the row sum of the joint).
* ``per-domain-softmax``: a softmax over classes inside each domain column,
  with the joint defined as that column softmax divided by K. The marginal
  is then the uniform mixture of per-domain class posteriors.

Both are computed in log space with log-sum-exp stabilization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import Tensor

from .backend import DTYPE, DualEncoderBackend
from .metanet import MetaNets, condition_tokens
from .prompt import (
    DEFAULT_TEMPLATE,
    NameVocabulary,
    PromptParams,
    assemble_codol,
    assemble_coop,
    assemble_zeroshot,
)

POSTERIOR_MODES = ("joint-softmax", "per-domain-softmax")

# trainable variants; the two zero-shot forms live in zero_shot_posterior
VARIANTS = ("codol", "codol-no-dmn", "codol-cmn", "coop", "cocoop")
DOMAIN_VARIANTS = ("codol", "codol-no-dmn", "codol-cmn")


def cosine(a: Tensor, b: Tensor) -> Tensor:
    denom = torch.clamp(torch.linalg.vector_norm(a) * torch.linalg.vector_norm(b), min=1e-12)
    return (a * b).sum() / denom


@dataclass
class Posterior:
    """Joint class-domain posterior held in log space."""

    log_joint: Tensor  # (Y, K)

    @property
    def joint(self) -> Tensor:
        return torch.exp(self.log_joint)

    @property
    def log_marginal(self) -> Tensor:
        return torch.logsumexp(self.log_joint, dim=1)

    @property
    def marginal(self) -> Tensor:
        return torch.exp(self.log_marginal)


def posterior(scores: Tensor, tau: float, mode: str = "joint-softmax") -> Posterior:
    """Turn a (Y, K) score grid into a joint posterior at temperature tau."""
    if scores.dim() != 2 or scores.shape[0] < 1 or scores.shape[1] < 1:
        raise ValueError(f"expected a non-empty (Y, K) grid, got shape {tuple(scores.shape)}")
    if tau <= 0:
        raise ValueError("tau must be positive")
    if mode not in POSTERIOR_MODES:
        raise ValueError(f"unknown posterior mode {mode!r}; known: {POSTERIOR_MODES}")
    ls = scores.to(DTYPE) / tau
    if mode == "joint-softmax":
        log_joint = ls - torch.logsumexp(ls.reshape(-1), dim=0)
    else:
        k = scores.shape[1]
        log_joint = ls - torch.logsumexp(ls, dim=0, keepdim=True) - math.log(k)
    return Posterior(log_joint=log_joint)


def score_grid(
    backend: DualEncoderBackend,
    vocab: NameVocabulary,
    params: PromptParams,
    nets: MetaNets,
    z: Tensor,
    variant: str = "codol",
) -> Tensor:
    """Cosine similarities between z and every prompt, shape (Y, K).

    Domain-aware variants produce one column per vocabulary domain; class-only
    variants ("coop", "cocoop") produce a single column. Meta-network biases
    are recomputed from z for every call, which is what makes the prompts
    instance-conditional.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; known: {VARIANTS}")
    with_domains = variant in DOMAIN_VARIANTS
    if with_domains and vocab.n_domains < 1:
        raise ValueError(f"variant {variant!r} needs at least one domain name")

    domain_bias = None
    if variant in ("codol", "codol-cmn") and nets.domain is not None:
        domain_bias = nets.domain(z)
    class_bias = None
    if variant in ("codol-cmn", "cocoop") and nets.cls is not None:
        class_bias = nets.cls(z)

    n_cols = vocab.n_domains if with_domains else 1
    if with_domains:
        domain_blocks = [condition_tokens(params.domain_ctx, domain_bias) for _ in range(n_cols)]
    rows = []
    for y in range(vocab.n_classes):
        class_block = condition_tokens(params.class_block(y), class_bias)
        cols = []
        for j in range(n_cols):
            if with_domains:
                asm = assemble_codol(backend, vocab, class_block, domain_blocks[j], y, j)
            else:
                asm = assemble_coop(backend, vocab, class_block, y)
            t = backend.encode_text(asm.embeddings)
            cols.append(cosine(z, t))
        rows.append(torch.stack(cols))
    return torch.stack(rows)


def zero_shot_posterior(
    backend: DualEncoderBackend,
    vocab: NameVocabulary,
    z: Tensor,
    with_domain: bool = False,
    tau: float | None = None,
    mode: str = "joint-softmax",
    template: Sequence[str] = DEFAULT_TEMPLATE,
) -> Posterior:
    """Posterior from hand-written prompts, no learnable parts.

    ``with_domain`` appends each domain name and marginalizes the resulting
    (Y, K) grid exactly like the trained model does; otherwise the grid is
    (Y, 1).
    """
    if tau is None:
        tau = backend.descriptor.default_tau
    if with_domain and vocab.n_domains < 1:
        raise ValueError("with_domain needs at least one domain name")
    domain_ids: list[int | None] = list(range(vocab.n_domains)) if with_domain else [None]
    rows = []
    for y in range(vocab.n_classes):
        cols = []
        for j in domain_ids:
            asm = assemble_zeroshot(backend, vocab, y, j, template=template)
            t = backend.encode_text(asm.embeddings)
            cols.append(cosine(z, t))
        rows.append(torch.stack(cols))
    return posterior(torch.stack(rows), tau=tau, mode=mode)


def nll_loss(
    posteriors: Sequence[Posterior],
    class_ids: Sequence[int],
    domain_ids: Sequence[int | None] | None = None,
    supervise_domain: bool = False,
) -> Tensor:
    """Mean negative log likelihood over a batch.

    Default: -log of the domain-marginalized class probability. With
    ``supervise_domain`` and a known domain id, -log of the joint entry for
    the labeled (class, domain) pair; samples with unknown domain fall back
    to the marginal term.
    """
    if len(posteriors) == 0:
        raise ValueError("empty batch")
    if len(posteriors) != len(class_ids):
        raise ValueError("posteriors and class_ids length mismatch")
    if domain_ids is not None and len(domain_ids) != len(posteriors):
        raise ValueError("domain_ids length mismatch")
    terms = []
    for i, post in enumerate(posteriors):
        y = class_ids[i]
        if not 0 <= y < post.log_joint.shape[0]:
            raise IndexError(f"class id {y} out of range for grid {tuple(post.log_joint.shape)}")
        k = domain_ids[i] if domain_ids is not None else None
        if supervise_domain and k is not None:
            if not 0 <= k < post.log_joint.shape[1]:
                raise IndexError(f"domain id {k} out of range for grid {tuple(post.log_joint.shape)}")
            terms.append(post.log_joint[y, k])
        else:
            terms.append(post.log_marginal[y])
    return -torch.stack(terms).mean()


def predict(post: Posterior) -> int:
    """Argmax of the marginal class posterior; ties go to the lowest class id."""
    log_marginal = post.log_marginal.detach().cpu().numpy()
    return int(np.argmax(log_marginal))
