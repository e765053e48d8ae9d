"""Training and evaluation pipelines over frozen dual encoders.

Only the prompt contexts and the meta networks learn; the backend is frozen
and its parameter hash is asserted unchanged across training. Training
minimizes the negative log of the domain-marginalized class posterior
(optionally the joint posterior for samples with labeled domains), with SGD
plus momentum and a cosine learning-rate schedule stepped once per epoch.

Protocols: "multi-source" trains on all domains but one and evaluates on the
held-out one; "single-source" trains on one domain and evaluates on every
other. Each split runs once per seed; reports aggregate seeds per split and
splits into one average.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch

from .backend import DTYPE, DualEncoderBackend, create_backend
from .checkpoint import Checkpoint, CheckpointError
from .data import DatasetManifest, ProtocolSplit, make_splits, mask_domain_labels, subset_by_domains
from .head import (
    POSTERIOR_MODES,
    VARIANTS,
    Posterior,
    nll_loss,
    posterior,
    predict,
    score_grid,
    zero_shot_posterior,
)
from .metanet import MetaNet, MetaNets
from .prompt import DEFAULT_TEMPLATE, NameVocabulary, PromptParams
from .report import EvalCell, EvalReport

ZERO_SHOT_VARIANTS = ("zeroshot", "zeroshot-domain")
ALL_VARIANTS = VARIANTS + ZERO_SHOT_VARIANTS

# fixed offsets so every component draws from its own stream per seed
_DMN_SEED_OFFSET = 7919
_CMN_SEED_OFFSET = 104729
DEFAULT_SEEDS = (0, 1, 2)


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite; names the epoch and step."""


@dataclass
class TrainConfig:
    variant: str = "codol"
    class_ctx_len: int = 16
    domain_ctx_len: int = 16
    class_specific: bool = False
    epochs: int = 10
    batch_size: int = 1
    accum_steps: int = 1
    lr: float = 0.002
    momentum: float = 0.9
    lr_schedule: str = "cosine"
    seed: int = 0
    tau: float | None = None
    posterior_mode: str = "joint-softmax"
    supervise_domain: bool = False
    ctx_init: str = "gaussian"
    meta_init: str = "gaussian"
    train_dmn: bool = True
    backend: dict[str, Any] = field(default_factory=lambda: {"name": "toy"})

    def __post_init__(self) -> None:
        if self.variant not in ALL_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; known: {ALL_VARIANTS}")
        if self.class_ctx_len < 0 or self.domain_ctx_len < 0:
            raise ValueError("context lengths must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or self.accum_steps < 1:
            raise ValueError("batch_size and accum_steps must be >= 1")
        # lr 0 is allowed on purpose: a zero step is the no-op oracle for the optimizer
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.posterior_mode not in POSTERIOR_MODES:
            raise ValueError(f"unknown posterior_mode {self.posterior_mode!r}")
        if self.ctx_init not in ("gaussian", "template"):
            raise ValueError(f"unknown ctx_init {self.ctx_init!r}")
        if self.meta_init not in ("gaussian", "zero", "zero-out"):
            raise ValueError(f"unknown meta_init {self.meta_init!r}")

    def to_json_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, doc: dict[str, Any]) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)


@dataclass
class PromptModel:
    """A backend plus everything learnable, ready to score images."""

    backend: DualEncoderBackend
    vocab: NameVocabulary  # domains restricted to the split's training domains
    params: PromptParams
    nets: MetaNets
    variant: str
    tau: float
    posterior_mode: str

    def posterior_for(self, z: torch.Tensor) -> Posterior:
        scores = score_grid(self.backend, self.vocab, self.params, self.nets, z, self.variant)
        return posterior(scores, tau=self.tau, mode=self.posterior_mode)

    def predict(self, z: torch.Tensor) -> int:
        with torch.no_grad():
            return predict(self.posterior_for(z))

    def trainable_parameters(self, train_dmn: bool = True) -> list[torch.nn.Parameter]:
        out = list(self.params.parameters())
        if self.nets.domain is not None and train_dmn:
            out.extend(self.nets.domain.parameters())
        if self.nets.cls is not None:
            out.extend(self.nets.cls.parameters())
        return out


def build_model(
    manifest: DatasetManifest,
    train_domains: Sequence[int],
    cfg: TrainConfig,
    backend: DualEncoderBackend | None = None,
) -> PromptModel:
    """Fresh model for a split; all initialization is derived from cfg.seed."""
    if cfg.variant in ZERO_SHOT_VARIANTS:
        raise ValueError(f"variant {cfg.variant!r} has nothing to train")
    backend = backend if backend is not None else create_backend(cfg.backend)
    d = backend.descriptor
    vocab = manifest.vocabulary().restrict_domains(list(train_domains))
    params = PromptParams.init(
        cfg.class_ctx_len,
        cfg.domain_ctx_len,
        d.embed_dim,
        seed=cfg.seed,
        class_specific=cfg.class_specific,
        n_classes=manifest.n_classes,
    )
    if cfg.ctx_init == "template" and cfg.class_ctx_len > 0:
        # start the class block at the hand-written template so tuning begins
        # from the zero-shot prompt instead of a random point
        rows = torch.cat([backend.embed_name(w) for w in DEFAULT_TEMPLATE], dim=0)
        block = torch.stack([rows[i % rows.shape[0]] for i in range(cfg.class_ctx_len)])
        with torch.no_grad():
            params.class_ctx.copy_(block.expand_as(params.class_ctx) if params.class_specific else block)
    nets = MetaNets()
    if cfg.variant in ("codol", "codol-cmn"):
        nets.domain = MetaNet(d.feature_dim, d.embed_dim, seed=cfg.seed + _DMN_SEED_OFFSET, init=cfg.meta_init)
    if cfg.variant in ("codol-cmn", "cocoop"):
        nets.cls = MetaNet(d.feature_dim, d.embed_dim, seed=cfg.seed + _CMN_SEED_OFFSET, init=cfg.meta_init)
    tau = cfg.tau if cfg.tau is not None else d.default_tau
    return PromptModel(backend, vocab, params, nets, cfg.variant, tau, cfg.posterior_mode)


def featurize(backend: DualEncoderBackend, manifest: DatasetManifest, sample: Any) -> torch.Tensor:
    """Image feature for a sample: inline vectors bypass the image encoder.

    A vector whose length equals the backend feature dim is taken as a
    precomputed feature (normalized per the backend convention); one matching
    the image input dim, or a raw 3-d array, goes through encode_image.
    """
    d = backend.descriptor
    arr: np.ndarray | None = None
    if sample.feature is not None:
        arr = np.asarray(sample.feature, dtype=np.float64)
    elif sample.ref.endswith(".npy"):
        root = Path(str(manifest.meta.get("root", ".")))
        arr = np.load(root / sample.ref)
    else:
        raise ValueError(f"sample {sample.ref!r} has no inline feature and no loadable ref")
    if arr.ndim == 1 and arr.shape[0] == d.feature_dim:
        z = torch.from_numpy(np.ascontiguousarray(arr)).to(DTYPE)
        if d.normalize:
            z = z / torch.clamp(torch.linalg.vector_norm(z), min=1e-12)
        return z
    return backend.encode_image(arr)


def _model_tensors(model: PromptModel) -> dict[str, np.ndarray]:
    out = {
        "prompt.class_ctx": model.params.class_ctx.detach().numpy().copy(),
        "prompt.domain_ctx": model.params.domain_ctx.detach().numpy().copy(),
    }
    for prefix, net in (("meta.domain", model.nets.domain), ("meta.cls", model.nets.cls)):
        if net is not None:
            for pname, p in (("w1", net.w1), ("b1", net.b1), ("w2", net.w2), ("b2", net.b2)):
                out[f"{prefix}.{pname}"] = p.detach().numpy().copy()
    return out


def train(
    manifest: DatasetManifest,
    split: ProtocolSplit,
    cfg: TrainConfig,
    backend: DualEncoderBackend | None = None,
) -> tuple[PromptModel, Checkpoint]:
    """Train prompts for one split and package the result as a checkpoint.

    Deterministic: same manifest, split, config and seed give bit-identical
    parameters. The backend hash is taken before and after and must match.
    """
    backend = backend if backend is not None else create_backend(cfg.backend)
    hash_before = backend.param_hash()
    samples = manifest.train_samples(split.train_domains)
    if not samples:
        raise ValueError("no training samples for this split")
    model = build_model(manifest, split.train_domains, cfg, backend)

    feats = [featurize(backend, manifest, s).detach() for s in samples]
    labels = [s.class_id for s in samples]
    col = {dom: i for i, dom in enumerate(split.train_domains)}
    ks = [None if s.domain_id is None else col[s.domain_id] for s in samples]

    trainables = model.trainable_parameters(train_dmn=cfg.train_dmn)
    opt = torch.optim.SGD(trainables, lr=cfg.lr, momentum=cfg.momentum)
    sched = None
    if cfg.lr_schedule == "cosine":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.epochs)

    shuffle = torch.Generator().manual_seed(cfg.seed)
    n = len(samples)
    train_log: list[dict[str, Any]] = []
    for epoch in range(cfg.epochs):
        perm = torch.randperm(n, generator=shuffle).tolist()
        lr_now = opt.param_groups[0]["lr"]
        loss_sum = 0.0
        pending = 0
        opt.zero_grad()
        for step in range(0, n, cfg.batch_size):
            idx = perm[step : step + cfg.batch_size]
            posts = [model.posterior_for(feats[i]) for i in idx]
            loss = nll_loss(
                posts,
                [labels[i] for i in idx],
                [ks[i] for i in idx],
                supervise_domain=cfg.supervise_domain,
            )
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}")
            (loss / cfg.accum_steps).backward()
            loss_sum += float(loss.item()) * len(idx)
            pending += 1
            if pending == cfg.accum_steps:
                opt.step()
                opt.zero_grad()
                pending = 0
        if pending:
            opt.step()
            opt.zero_grad()
        if sched is not None:
            sched.step()
        train_log.append({"epoch": epoch, "loss": loss_sum / n, "lr": lr_now})

    hash_after = backend.param_hash()
    if hash_after != hash_before:
        raise RuntimeError("frozen backend changed during training")

    ckpt = Checkpoint(
        config=cfg.to_json_dict(),
        vocab={"classes": list(manifest.classes), "domains": list(manifest.domains)},
        split={"train_domains": list(split.train_domains), "test_domain": split.test_domain},
        train_log=train_log,
        tensors=_model_tensors(model),
        extra={"backend_hash": hash_before, "dataset": manifest.name},
    )
    return model, ckpt


def restore_model(ckpt: Checkpoint, backend: DualEncoderBackend | None = None) -> PromptModel:
    """Rebuild a model from a checkpoint and verify the backend hash."""
    cfg = TrainConfig.from_json_dict(ckpt.config)
    backend = backend if backend is not None else create_backend(cfg.backend)
    expected = ckpt.extra.get("backend_hash")
    if expected is not None and backend.param_hash() != expected:
        raise CheckpointError("backend hash mismatch: checkpoint was trained on a different encoder")
    d = backend.descriptor
    classes = list(ckpt.vocab.get("classes", []))
    domains = list(ckpt.vocab.get("domains", []))
    train_domains = list(ckpt.split.get("train_domains", range(len(domains))))
    vocab = NameVocabulary(classes, domains).restrict_domains(train_domains)
    params = PromptParams(
        torch.from_numpy(ckpt.tensors["prompt.class_ctx"]).to(DTYPE),
        torch.from_numpy(ckpt.tensors["prompt.domain_ctx"]).to(DTYPE),
    )
    nets = MetaNets()
    for prefix, attr in (("meta.domain", "domain"), ("meta.cls", "cls")):
        if f"{prefix}.w1" in ckpt.tensors:
            net = MetaNet(d.feature_dim, d.embed_dim, init="zero")
            with torch.no_grad():
                for pname in ("w1", "b1", "w2", "b2"):
                    getattr(net, pname).copy_(torch.from_numpy(ckpt.tensors[f"{prefix}.{pname}"]))
            setattr(nets, attr, net)
    tau = cfg.tau if cfg.tau is not None else d.default_tau
    return PromptModel(backend, vocab, params, nets, cfg.variant, tau, cfg.posterior_mode)


def evaluate(model: PromptModel, manifest: DatasetManifest, test_domain: int) -> tuple[float, int]:
    """Accuracy of argmax-of-marginal prediction on the held-out domain."""
    samples = manifest.test_samples(test_domain)
    if not samples:
        raise ValueError(f"no samples in test domain {test_domain}")
    correct = 0
    with torch.no_grad():
        for s in samples:
            z = featurize(model.backend, manifest, s)
            if model.predict(z) == s.class_id:
                correct += 1
    return correct / len(samples), len(samples)


def evaluate_zero_shot(
    manifest: DatasetManifest,
    test_domain: int,
    marginal_domains: Sequence[int],
    with_domain: bool,
    cfg: TrainConfig,
    backend: DualEncoderBackend | None = None,
) -> tuple[float, int]:
    """Zero-shot accuracy on a held-out domain.

    ``marginal_domains`` names the domains whose prompts are marginalized
    when ``with_domain`` is set; passing the training domains mirrors what a
    trained model can see.
    """
    backend = backend if backend is not None else create_backend(cfg.backend)
    vocab = manifest.vocabulary().restrict_domains(list(marginal_domains))
    samples = manifest.test_samples(test_domain)
    if not samples:
        raise ValueError(f"no samples in test domain {test_domain}")
    correct = 0
    with torch.no_grad():
        for s in samples:
            z = featurize(backend, manifest, s)
            post = zero_shot_posterior(
                backend, vocab, z, with_domain=with_domain, tau=cfg.tau, mode=cfg.posterior_mode
            )
            if predict(post) == s.class_id:
                correct += 1
    return correct / len(samples), len(samples)


def _checkpoint_name(manifest: DatasetManifest, split: ProtocolSplit, cfg: TrainConfig, seed: int) -> str:
    src = "-".join(manifest.domains[j] for j in split.train_domains)
    dst = manifest.domains[split.test_domain]
    return f"{cfg.variant}_{src}_to_{dst}_seed{seed}.ckpt"


def run_split(
    manifest: DatasetManifest,
    split: ProtocolSplit,
    cfg: TrainConfig,
    backend: DualEncoderBackend | None = None,
) -> tuple[float, int, Checkpoint | None]:
    """Train (if the variant learns) and evaluate one split with cfg.seed."""
    if cfg.variant in ZERO_SHOT_VARIANTS:
        acc, n = evaluate_zero_shot(
            manifest,
            split.test_domain,
            split.train_domains,
            with_domain=(cfg.variant == "zeroshot-domain"),
            cfg=cfg,
            backend=backend,
        )
        return acc, n, None
    model, ckpt = train(manifest, split, cfg, backend)
    acc, n = evaluate(model, manifest, split.test_domain)
    return acc, n, ckpt


def _run_split_job(args: tuple[dict, tuple, dict, str | None]) -> dict[str, Any]:
    # module-level so ProcessPoolExecutor can pickle it
    from .checkpoint import save_checkpoint
    from .data import manifest_from_json_dict

    manifest_doc, split_tuple, cfg_doc, ckpt_path = args
    manifest = manifest_from_json_dict(manifest_doc)
    split = ProtocolSplit(tuple(split_tuple[0]), split_tuple[1])
    cfg = TrainConfig.from_json_dict(cfg_doc)
    acc, n, ckpt = run_split(manifest, split, cfg)
    if ckpt_path is not None and ckpt is not None:
        save_checkpoint(ckpt, ckpt_path)
    return {"accuracy": acc, "n": n}


def run_protocol(
    manifest: DatasetManifest,
    protocol: str,
    cfg: TrainConfig,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    checkpoint_dir: str | Path | None = None,
    backend: DualEncoderBackend | None = None,
    workers: int = 1,
    ratio: float | None = None,
) -> EvalReport:
    """Every split of a protocol, once per seed, aggregated into a report."""
    if not seeds:
        raise ValueError("need at least one seed")
    splits = make_splits(manifest, protocol)
    report = EvalReport(protocol=protocol, dataset=manifest.name, variant=cfg.variant)
    jobs: list[tuple[ProtocolSplit, int, TrainConfig]] = []
    for split in splits:
        if cfg.variant in ZERO_SHOT_VARIANTS:
            # deterministic: evaluate once, record the same cell under each seed
            acc, n, _ = run_split(manifest, split, replace(cfg, seed=seeds[0]), backend)
            for seed in seeds:
                report.cells.append(_make_cell(manifest, split, cfg, seed, acc, n, ratio))
            continue
        for seed in seeds:
            jobs.append((split, seed, replace(cfg, seed=seed)))

    def ckpt_path(split: ProtocolSplit, job_cfg: TrainConfig, seed: int) -> Path | None:
        if checkpoint_dir is None:
            return None
        return Path(checkpoint_dir) / _checkpoint_name(manifest, split, job_cfg, seed)

    if workers > 1 and jobs:
        manifest_doc = manifest.to_json_dict()
        payloads = [
            (
                manifest_doc,
                (list(s.train_domains), s.test_domain),
                c.to_json_dict(),
                str(p) if (p := ckpt_path(s, c, seed)) is not None else None,
            )
            for s, seed, c in jobs
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_split_job, payloads))
        for (split, seed, _job_cfg), res in zip(jobs, results):
            report.cells.append(
                _make_cell(manifest, split, cfg, seed, res["accuracy"], res["n"], ratio)
            )
    else:
        for split, seed, job_cfg in jobs:
            acc, n, ckpt = run_split(manifest, split, job_cfg, backend)
            report.cells.append(_make_cell(manifest, split, cfg, seed, acc, n, ratio))
            path = ckpt_path(split, job_cfg, seed)
            if path is not None and ckpt is not None:
                from .checkpoint import save_checkpoint

                save_checkpoint(ckpt, path)
    return report


def _make_cell(
    manifest: DatasetManifest,
    split: ProtocolSplit,
    cfg: TrainConfig,
    seed: int,
    acc: float,
    n: int,
    ratio: float | None,
) -> EvalCell:
    return EvalCell(
        variant=cfg.variant,
        dataset=manifest.name,
        train_domains=tuple(manifest.domains[j] for j in split.train_domains),
        test_domain=manifest.domains[split.test_domain],
        seed=seed,
        class_ctx_len=cfg.class_ctx_len,
        domain_ctx_len=cfg.domain_ctx_len,
        accuracy=acc,
        ratio=ratio,
        n_test=n,
    )


def sweep_context_lengths(
    manifest: DatasetManifest,
    protocol: str,
    pairs: Sequence[tuple[int, int]],
    cfg: TrainConfig,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    backend: DualEncoderBackend | None = None,
    workers: int = 1,
) -> list[dict[str, Any]]:
    """One protocol run per (class length, domain length) pair."""
    if not pairs:
        raise ValueError("need at least one context length pair")
    out = []
    for mc, mk in pairs:
        run_cfg = replace(cfg, class_ctx_len=mc, domain_ctx_len=mk)
        rep = run_protocol(manifest, protocol, run_cfg, seeds, backend=backend, workers=workers)
        out.append({"M_c": mc, "M_k": mk, "average": rep.average(), "report": rep})
    return out


def domain_ratio_experiment(
    manifest: DatasetManifest,
    protocol: str,
    ratios: Sequence[float],
    cfg: TrainConfig,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    backend: DualEncoderBackend | None = None,
) -> dict[str, Any]:
    """Mask domain labels down to each ratio, train, evaluate held-out domains.

    Masking happens on a manifest restricted to the split's training domains,
    so samples from the held-out domain can never enter training by losing
    their label. Evaluation always uses the untouched manifest.
    """
    for r in ratios:
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"ratio {r} outside [0, 1]")
    splits = make_splits(manifest, protocol)
    rows: list[dict[str, Any]] = []
    cells: list[EvalCell] = []
    for ratio in ratios:
        per_seed: dict[int, list[float]] = {s: [] for s in seeds}
        for split in splits:
            train_pool = subset_by_domains(manifest, split.train_domains)
            for seed in seeds:
                mask_seed = seed * 100003 + int(round(ratio * 1000))
                masked = mask_domain_labels(train_pool, ratio, seed=mask_seed)
                run_cfg = replace(cfg, seed=seed)
                model, _ = train(masked, split, run_cfg, backend)
                acc, n = evaluate(model, manifest, split.test_domain)
                per_seed[seed].append(acc)
                cells.append(_make_cell(manifest, split, run_cfg, seed, acc, n, ratio))
        seed_means = {s: sum(v) / len(v) for s, v in per_seed.items()}
        vals = list(seed_means.values())
        mean = sum(vals) / len(vals)
        spread = max(vals) - min(vals)
        rows.append({"ratio": float(ratio), "mean": mean, "spread": spread, "per_seed": seed_means})
    return {"protocol": protocol, "dataset": manifest.name, "rows": rows, "cells": cells}


@dataclass
class AlignmentReport:
    """Mean cosine between held-out images (rows: true class) and prompts (cols)."""

    class_names: tuple[str, ...]
    domain_names: tuple[str, ...]  # training domains the prompts marginalize over
    test_domain: str
    full: np.ndarray  # (C, Y) with domain blocks in place, averaged over domains
    ablated: np.ndarray  # (C, Y) with domain blocks removed

    @property
    def matched_full(self) -> float:
        return float(np.mean(np.diag(self.full)))

    @property
    def matched_ablated(self) -> float:
        return float(np.mean(np.diag(self.ablated)))

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "class_names": list(self.class_names),
            "domain_names": list(self.domain_names),
            "test_domain": self.test_domain,
            "full": [[float(v) for v in row] for row in self.full],
            "ablated": [[float(v) for v in row] for row in self.ablated],
            "matched_full": self.matched_full,
            "matched_ablated": self.matched_ablated,
        }


def alignment_analysis(
    model: PromptModel,
    manifest: DatasetManifest,
    split: ProtocolSplit,
) -> AlignmentReport:
    """Compare image/prompt cosine alignment with and without domain blocks.

    The "full" matrix scores held-out images against the trained prompts
    (domain columns averaged); the "ablated" matrix rebuilds the prompts with
    the domain context and domain name removed, keeping the same trained
    class context. A domain-aware prompt should raise the matched-pair
    diagonal relative to its ablation when domain information matters.
    """
    samples = manifest.test_samples(split.test_domain)
    if not samples:
        raise ValueError(f"no samples in test domain {split.test_domain}")
    c_n = manifest.n_classes
    sums_full = np.zeros((c_n, c_n))
    sums_abl = np.zeros((c_n, c_n))
    counts = np.zeros(c_n)
    ablated_variant = "cocoop" if model.nets.cls is not None else "coop"
    full_variant = model.variant if model.variant in VARIANTS else "codol"
    with torch.no_grad():
        for s in samples:
            z = featurize(model.backend, manifest, s)
            grid = score_grid(model.backend, model.vocab, model.params, model.nets, z, full_variant)
            sums_full[s.class_id] += grid.mean(dim=1).numpy()
            abl = score_grid(model.backend, model.vocab, model.params, model.nets, z, ablated_variant)
            sums_abl[s.class_id] += abl[:, 0].numpy()
            counts[s.class_id] += 1
    if np.any(counts == 0):
        missing = [manifest.classes[i] for i in np.flatnonzero(counts == 0)]
        raise ValueError(f"test domain has no samples for classes {missing}")
    return AlignmentReport(
        class_names=manifest.classes,
        domain_names=model.vocab.domain_names,
        test_domain=manifest.domains[split.test_domain],
        full=sums_full / counts[:, None],
        ablated=sums_abl / counts[:, None],
    )
