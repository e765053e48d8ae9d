"""Shared fixtures: the frozen desk-scale backend, dataset and train config.

Everything here is deterministic. The acceptance fixture is intentionally
easy (small noise, saturated accuracy) so directional comparisons between
methods are stable across machines; the training dynamics are still live
(larger learning rates demonstrably break splits).
"""
from __future__ import annotations

import pytest

from codol.backend import make_toy_backend
from codol.data import synth_aligned_dataset, synth_dataset
from codol.pipeline import TrainConfig

FIXTURE_CLASSES = ("bird", "car", "dog", "tree")
FIXTURE_DOMAINS = ("cartoon", "photo", "sketch")

BACKEND_SPEC = {"name": "toy", "seed": 0, "feature_dim": 16, "embed_dim": 16, "depth": 2}


def make_fixture_backend():
    return make_toy_backend(seed=0, feature_dim=16, embed_dim=16, depth=2)


def make_fixture_manifest(backend, per_cell: int = 10):
    return synth_aligned_dataset(
        backend,
        FIXTURE_CLASSES,
        FIXTURE_DOMAINS,
        per_cell=per_cell,
        seed=0,
        class_scale=0.5,
        pair_scale=0.3,
        domain_scale=0.2,
        noise=0.05,
    )


def make_fixture_config(**overrides) -> TrainConfig:
    base = dict(
        variant="codol",
        class_ctx_len=4,
        domain_ctx_len=2,
        epochs=10,
        batch_size=256,  # >= n_train, i.e. full-batch steps
        lr=0.02,
        tau=0.1,
        ctx_init="template",
        meta_init="zero-out",
        backend=dict(BACKEND_SPEC),
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def toy16():
    return make_fixture_backend()


@pytest.fixture(scope="session")
def fixture_manifest(toy16):
    return make_fixture_manifest(toy16)


@pytest.fixture(scope="session")
def fixture_cfg():
    return make_fixture_config()


@pytest.fixture(scope="session")
def tiny_manifest():
    """Backend-independent 2x2 dataset for fast unit tests."""
    return synth_dataset(
        ["cat", "boat"], ["paint", "photo"], per_cell=3, seed=7, feature_dim=16
    )


@pytest.fixture(scope="session")
def tiny_aligned(toy16):
    """Small aligned dataset for fast training-path tests."""
    return synth_aligned_dataset(
        toy16, ["bird", "car"], ["cartoon", "photo"], per_cell=3, seed=1, noise=0.05
    )


def make_tiny_config(**overrides) -> TrainConfig:
    base = dict(
        variant="codol",
        class_ctx_len=2,
        domain_ctx_len=1,
        epochs=2,
        batch_size=64,
        lr=0.02,
        tau=0.1,
        ctx_init="template",
        meta_init="zero-out",
        backend=dict(BACKEND_SPEC),
    )
    base.update(overrides)
    return TrainConfig(**base)
