"""Context initialization, name vocabulary and prompt assembly."""
from __future__ import annotations

import pytest
import torch

from codol.prompt import (
    CLASS_CTX,
    CLASS_NAME,
    DOMAIN_CTX,
    DOMAIN_NAME,
    TEMPLATE,
    DEFAULT_TEMPLATE,
    NameVocabulary,
    PromptParams,
    assemble_codol,
    assemble_coop,
    assemble_zeroshot,
    init_contexts,
)


def test_init_contexts_shapes_and_determinism():
    c1, d1 = init_contexts(4, 2, 16, seed=3)
    c2, d2 = init_contexts(4, 2, 16, seed=3)
    assert c1.shape == (4, 16) and d1.shape == (2, 16)
    assert torch.equal(c1, c2) and torch.equal(d1, d2)
    c3, _ = init_contexts(4, 2, 16, seed=4)
    assert not torch.equal(c1, c3)


def test_init_contexts_class_block_drawn_first():
    # the class block must not depend on the domain block length
    c_a, _ = init_contexts(4, 2, 16, seed=3)
    c_b, _ = init_contexts(4, 7, 16, seed=3)
    assert torch.equal(c_a, c_b)


def test_init_contexts_scale():
    c, _ = init_contexts(200, 0, 64, seed=0, std=0.02)
    assert abs(float(c.std()) - 0.02) < 0.002
    assert abs(float(c.mean())) < 0.002


def test_init_contexts_class_specific():
    c, d = init_contexts(4, 2, 16, seed=0, class_specific=True, n_classes=5)
    assert c.shape == (5, 4, 16) and d.shape == (2, 16)
    with pytest.raises(ValueError, match="n_classes"):
        init_contexts(4, 2, 16, seed=0, class_specific=True)
    with pytest.raises(ValueError, match=">= 0"):
        init_contexts(-1, 2, 16, seed=0)


def test_prompt_params_class_block():
    params = PromptParams.init(3, 2, 16, seed=0, class_specific=True, n_classes=4)
    assert params.class_specific
    assert torch.equal(params.class_block(2), params.class_ctx[2])
    shared = PromptParams.init(3, 2, 16, seed=0)
    assert not shared.class_specific
    assert torch.equal(shared.class_block(1), shared.class_ctx)
    assert all(p.requires_grad for p in shared.parameters())
    with pytest.raises(ValueError):
        PromptParams(torch.zeros(4), torch.zeros((2, 16)))


def test_vocabulary_validation():
    with pytest.raises(ValueError, match="at least one class"):
        NameVocabulary([], ["d"])
    with pytest.raises(ValueError, match="duplicate class"):
        NameVocabulary(["a", "a"], ["d"])
    with pytest.raises(ValueError, match="non-empty"):
        NameVocabulary(["a"], [" "])
    v = NameVocabulary(["a", "b"], [])
    assert v.n_classes == 2 and v.n_domains == 0


def test_vocabulary_embedding_cache(toy16):
    v = NameVocabulary(["bird", "car"], ["photo"])
    e1 = v.class_embedding(toy16, 0)
    e2 = v.class_embedding(toy16, 0)
    assert e1 is e2
    assert torch.equal(e1, toy16.embed_name("bird"))


def test_restrict_domains_preserves_order(toy16):
    v = NameVocabulary(["bird"], ["cartoon", "photo", "sketch"])
    r = v.restrict_domains([2, 0])
    assert r.domain_names == ("sketch", "cartoon")
    assert r.class_names == v.class_names
    assert torch.equal(r.domain_embedding(toy16, 0), toy16.embed_name("sketch"))


def test_assemble_codol_layout(toy16):
    v = NameVocabulary(["bird", "car"], ["cartoon", "photo"])
    c = torch.zeros((3, 16), dtype=torch.float64)
    d = torch.ones((2, 16), dtype=torch.float64)
    asm = assemble_codol(toy16, v, c, d, class_id=1, domain_id=0)
    assert [t for t, _ in asm.segments] == [CLASS_CTX, DOMAIN_CTX, CLASS_NAME, DOMAIN_NAME]
    assert asm.length == 3 + 2 + 1 + 1
    assert asm.class_id == 1 and asm.domain_id == 0
    assert torch.equal(asm.embeddings[asm.segment_slice(CLASS_CTX)], c)
    assert torch.equal(asm.embeddings[asm.segment_slice(DOMAIN_CTX)], d)
    assert torch.equal(
        asm.embeddings[asm.segment_slice(CLASS_NAME)], toy16.embed_name("car")
    )
    assert torch.equal(
        asm.embeddings[asm.segment_slice(DOMAIN_NAME)], toy16.embed_name("cartoon")
    )


def test_assemble_drops_empty_blocks(toy16):
    v = NameVocabulary(["bird"], ["photo"])
    empty = torch.zeros((0, 16), dtype=torch.float64)
    asm = assemble_codol(toy16, v, empty, empty, 0, 0)
    assert [t for t, _ in asm.segments] == [CLASS_NAME, DOMAIN_NAME]
    with pytest.raises(KeyError):
        asm.segment_slice(CLASS_CTX)


def test_assemble_coop_layout(toy16):
    v = NameVocabulary(["bird"], [])
    c = torch.zeros((2, 16), dtype=torch.float64)
    asm = assemble_coop(toy16, v, c, 0)
    assert [t for t, _ in asm.segments] == [CLASS_CTX, CLASS_NAME]
    assert asm.domain_id is None


def test_assemble_zeroshot_layout(toy16):
    v = NameVocabulary(["bird"], ["photo"])
    asm = assemble_zeroshot(toy16, v, 0, None)
    assert [t for t, _ in asm.segments] == [TEMPLATE, CLASS_NAME]
    assert asm.length == len(DEFAULT_TEMPLATE) + 1
    tmpl = torch.cat([toy16.embed_name(w) for w in DEFAULT_TEMPLATE])
    assert torch.equal(asm.embeddings[asm.segment_slice(TEMPLATE)], tmpl)

    with_dom = assemble_zeroshot(toy16, v, 0, 0)
    assert [t for t, _ in with_dom.segments] == [TEMPLATE, CLASS_NAME, DOMAIN_NAME]

    custom = assemble_zeroshot(toy16, v, 0, None, template=("an", "image", "of"))
    assert custom.length == 3 + 1

    bare = assemble_zeroshot(toy16, v, 0, None, template=())
    assert [t for t, _ in bare.segments] == [CLASS_NAME]


def test_assemble_bounds_checks(toy16):
    v = NameVocabulary(["bird"], ["photo"])
    c = torch.zeros((1, 16), dtype=torch.float64)
    with pytest.raises(IndexError):
        assemble_codol(toy16, v, c, c, 1, 0)
    with pytest.raises(IndexError):
        assemble_codol(toy16, v, c, c, 0, 5)
    with pytest.raises(IndexError):
        assemble_coop(toy16, v, c, -1)
    with pytest.raises(IndexError):
        assemble_zeroshot(toy16, v, 0, 9)


def test_assemble_max_length(toy16):
    v = NameVocabulary(["bird"], ["photo"])
    c = torch.zeros((77, 16), dtype=torch.float64)
    with pytest.raises(ValueError, match="max_length"):
        assemble_codol(toy16, v, c, torch.zeros((0, 16), dtype=torch.float64), 0, 0)


def test_gradient_reaches_context(toy16):
    v = NameVocabulary(["bird"], ["photo"])
    params = PromptParams.init(3, 2, 16, seed=0)
    asm = assemble_codol(toy16, v, params.class_ctx, params.domain_ctx, 0, 0)
    toy16.encode_text(asm.embeddings).sum().backward()
    assert params.class_ctx.grad is not None and params.domain_ctx.grad is not None
    assert float(params.class_ctx.grad.abs().sum()) > 0
    assert float(params.domain_ctx.grad.abs().sum()) > 0
