"""Dataset manifests, synthetic data, protocol splits and label masking.

A dataset is a JSON manifest: class names, domain names, and samples that
carry a ref (path or synthetic tag), a class id, a domain id (or null when
the domain label is unknown), a train/test tag, and optionally an inline
feature vector. Leave-one-domain-out and single-source protocols are built
on top of the domain ids:

* training samples for a split are the "train"-tagged samples whose domain
  is one of the split's source domains, plus any "train"-tagged sample with
  a null domain (those can only learn through the marginalized loss);
* evaluation samples are all samples of the held-out domain regardless of
  tag, since the held-out domain never contributes to training.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import torch

from .backend import DualEncoderBackend
from .prompt import DEFAULT_TEMPLATE, NameVocabulary, assemble_zeroshot

MEDIA_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp", ".webp", ".npy")
SPLIT_TAGS = ("train", "test")

MANIFEST_KEYS = ("classes", "domains", "samples", "meta")
SAMPLE_KEYS = ("ref", "class", "domain", "split", "feature")


class ManifestError(ValueError):
    """Raised for schema or consistency violations in a manifest."""


@dataclass
class Sample:
    ref: str
    class_id: int
    domain_id: int | None
    split: str = "train"
    feature: np.ndarray | None = None

    def copy(self) -> "Sample":
        feat = None if self.feature is None else self.feature.copy()
        return Sample(self.ref, self.class_id, self.domain_id, self.split, feat)


@dataclass
class DatasetManifest:
    classes: tuple[str, ...]
    domains: tuple[str, ...]
    samples: list[Sample]
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.classes = tuple(self.classes)
        self.domains = tuple(self.domains)
        self.validate()

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_domains(self) -> int:
        return len(self.domains)

    @property
    def name(self) -> str:
        return str(self.meta.get("name", "dataset"))

    def validate(self) -> None:
        if not self.classes:
            raise ManifestError("classes: must be non-empty")
        for kind, names in (("classes", self.classes), ("domains", self.domains)):
            if any(not isinstance(n, str) or not n.strip() for n in names):
                raise ManifestError(f"{kind}: names must be non-empty strings")
            if len(set(names)) != len(names):
                raise ManifestError(f"{kind}: duplicate names")
        for i, s in enumerate(self.samples):
            where = f"samples[{i}]"
            if not isinstance(s.ref, str) or not s.ref:
                raise ManifestError(f"{where}.ref: must be a non-empty string")
            if not isinstance(s.class_id, int) or not 0 <= s.class_id < self.n_classes:
                raise ManifestError(f"{where}.class: {s.class_id!r} out of range")
            if s.domain_id is not None and (
                not isinstance(s.domain_id, int) or not 0 <= s.domain_id < self.n_domains
            ):
                raise ManifestError(f"{where}.domain: {s.domain_id!r} out of range")
            if s.split not in SPLIT_TAGS:
                raise ManifestError(f"{where}.split: {s.split!r} not one of {SPLIT_TAGS}")

    def vocabulary(self) -> NameVocabulary:
        return NameVocabulary(self.classes, self.domains)

    def copy(self) -> "DatasetManifest":
        return DatasetManifest(
            classes=self.classes,
            domains=self.domains,
            samples=[s.copy() for s in self.samples],
            meta=copy.deepcopy(self.meta),
        )

    def train_samples(self, train_domains: Sequence[int]) -> list[Sample]:
        allowed = set(train_domains)
        return [
            s for s in self.samples
            if s.split == "train" and (s.domain_id is None or s.domain_id in allowed)
        ]

    def test_samples(self, test_domain: int) -> list[Sample]:
        return [s for s in self.samples if s.domain_id == test_domain]

    def to_json_dict(self) -> dict[str, Any]:
        samples = []
        for s in self.samples:
            d: dict[str, Any] = {
                "ref": s.ref,
                "class": s.class_id,
                "domain": s.domain_id,
                "split": s.split,
            }
            if s.feature is not None:
                d["feature"] = [float(v) for v in np.asarray(s.feature).ravel()]
            samples.append(d)
        return {
            "classes": list(self.classes),
            "domains": list(self.domains),
            "samples": samples,
            "meta": self.meta,
        }


def _require_type(value: Any, types: type | tuple[type, ...], where: str, what: str) -> Any:
    if not isinstance(value, types):
        raise ManifestError(f"{where}: expected {what}, got {type(value).__name__}")
    return value


def manifest_from_json_dict(doc: Any) -> DatasetManifest:
    _require_type(doc, dict, "manifest", "an object")
    unknown = set(doc) - set(MANIFEST_KEYS)
    if unknown:
        raise ManifestError(f"manifest: unknown keys {sorted(unknown)}")
    for key in ("classes", "domains", "samples"):
        if key not in doc:
            raise ManifestError(f"manifest: missing {key!r} key")
    classes = _require_type(doc["classes"], list, "classes", "a list")
    domains = _require_type(doc["domains"], list, "domains", "a list")
    raw_samples = _require_type(doc["samples"], list, "samples", "a list")
    meta = _require_type(doc.get("meta", {}), dict, "meta", "an object")
    samples: list[Sample] = []
    for i, raw in enumerate(raw_samples):
        where = f"samples[{i}]"
        _require_type(raw, dict, where, "an object")
        unknown = set(raw) - set(SAMPLE_KEYS)
        if unknown:
            raise ManifestError(f"{where}: unknown keys {sorted(unknown)}")
        for key in ("ref", "class", "domain", "split"):
            if key not in raw:
                raise ManifestError(f"{where}: missing {key!r} key")
        ref = _require_type(raw["ref"], str, f"{where}.ref", "a string")
        class_id = raw["class"]
        if isinstance(class_id, bool) or not isinstance(class_id, int):
            raise ManifestError(f"{where}.class: expected an integer")
        domain_id = raw["domain"]
        if domain_id is not None and (isinstance(domain_id, bool) or not isinstance(domain_id, int)):
            raise ManifestError(f"{where}.domain: expected an integer or null")
        split = _require_type(raw["split"], str, f"{where}.split", "a string")
        feature = None
        if "feature" in raw and raw["feature"] is not None:
            vals = _require_type(raw["feature"], list, f"{where}.feature", "a list of numbers")
            if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in vals):
                raise ManifestError(f"{where}.feature: expected a list of numbers")
            feature = np.asarray(vals, dtype=np.float64)
        samples.append(Sample(ref, class_id, domain_id, split, feature))
    return DatasetManifest(classes=tuple(classes), domains=tuple(domains), samples=samples, meta=meta)


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ManifestError(f"{path}: invalid JSON ({err})") from err
    return manifest_from_json_dict(doc)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write canonical JSON (sorted keys, 2-space indent); round-trips byte-identically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(manifest.to_json_dict(), sort_keys=True, indent=2)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def scan_layout(root: str | Path) -> DatasetManifest:
    """Build a manifest from a <root>/<domain>/<class>/<file> directory tree.

    Directories and files are walked in sorted order so the manifest is
    deterministic. All samples get the "train" tag; the protocol decides
    what is held out. Classes present in only some domains are allowed and
    recorded in meta["incomplete_classes"].
    """
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"{root}: not a directory")
    domain_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not domain_dirs:
        raise ManifestError(f"{root}: no domain directories")
    class_names = sorted({p.name for d in domain_dirs for p in d.iterdir() if p.is_dir()})
    if not class_names:
        raise ManifestError(f"{root}: no class directories")
    class_ids = {name: i for i, name in enumerate(class_names)}
    samples: list[Sample] = []
    seen: dict[str, set[str]] = {name: set() for name in class_names}
    for j, domain_dir in enumerate(domain_dirs):
        for class_dir in sorted(p for p in domain_dir.iterdir() if p.is_dir()):
            for f in sorted(class_dir.iterdir()):
                if f.is_file() and f.suffix.lower() in MEDIA_EXTENSIONS:
                    ref = f.relative_to(root).as_posix()
                    samples.append(Sample(ref, class_ids[class_dir.name], j, "train"))
                    seen[class_dir.name].add(domain_dir.name)
    if not samples:
        raise ManifestError(f"{root}: no media files found")
    incomplete = sorted(n for n, doms in seen.items() if len(doms) < len(domain_dirs))
    meta: dict[str, Any] = {"root": str(root), "source": "scan", "name": root.name}
    if incomplete:
        meta["incomplete_classes"] = incomplete
    return DatasetManifest(
        classes=tuple(class_names),
        domains=tuple(d.name for d in domain_dirs),
        samples=samples,
        meta=meta,
    )


def _skew(rng: np.random.Generator, dim: int) -> np.ndarray:
    m = rng.normal(size=(dim, dim))
    return (m - m.T) / 2.0


def synth_dataset(
    classes: Sequence[str],
    domains: Sequence[str],
    per_cell: int = 10,
    seed: int = 0,
    feature_dim: int = 16,
    class_sep: float = 2.0,
    domain_shift: float = 0.5,
    noise: float = 0.1,
) -> DatasetManifest:
    """Gaussian class clusters pushed through per-domain rotations.

    Class centroids are orthonormal directions scaled by ``class_sep``; each
    domain applies a rotation exp(domain_shift * skew) plus a small bias, and
    samples add isotropic noise. Deterministic in ``seed``. Features are
    stored inline in ambient feature space, so this generator is independent
    of any backend.
    """
    from scipy.linalg import expm

    if per_cell < 1:
        raise ValueError("per_cell must be >= 1")
    if feature_dim < len(classes):
        raise ValueError("feature_dim must be >= number of classes for orthonormal centroids")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(feature_dim, feature_dim)))
    centroids = class_sep * basis[:, : len(classes)].T  # (Y, D)
    rotations = [expm(domain_shift * _skew(rng, feature_dim)) for _ in domains]
    biases = [domain_shift * rng.normal(scale=0.2, size=feature_dim) for _ in domains]
    samples: list[Sample] = []
    for j, _domain in enumerate(domains):
        for y, _cls in enumerate(classes):
            for i in range(per_cell):
                z = rotations[j] @ centroids[y] + biases[j] + noise * rng.normal(size=feature_dim)
                samples.append(Sample(f"synth:{j}/{y}/{i}", y, j, "train", z.astype(np.float64)))
    return DatasetManifest(
        classes=tuple(classes),
        domains=tuple(domains),
        samples=samples,
        meta={"source": "synth", "name": "synth", "seed": int(seed), "per_cell": int(per_cell)},
    )


def _unit(v: np.ndarray) -> np.ndarray:
    return v / max(float(np.linalg.norm(v)), 1e-12)


def synth_aligned_dataset(
    backend: DualEncoderBackend,
    classes: Sequence[str],
    domains: Sequence[str],
    per_cell: int = 10,
    seed: int = 0,
    class_scale: float = 0.5,
    pair_scale: float = 0.3,
    domain_scale: float = 0.2,
    noise: float = 0.05,
    template: Sequence[str] = DEFAULT_TEMPLATE,
) -> DatasetManifest:
    """Image features decomposed against the backend's own text anchors.

    Text features of hand-written prompts define the anchors: t(y) for a
    class prompt and t(y, j) for the same prompt with the domain name
    appended. A sample of class y in domain j is

        mean_y' t(y')                      shared prompt direction
        + class_scale  * unit(t(y)   - mean_y' t(y'))      class deviation
        + pair_scale   * unit(t(y,j) - mean_y' t(y',j))    class-domain interaction
        + domain_scale * unit(mean_y' (t(y',j) - t(y')))   pure domain offset
        + noise * gaussian

    mirroring how dual-encoder image features decompose relative to their
    text prompts: plain class prompts read the class deviation, domain-aware
    prompts additionally read the interaction term, and the pure offset
    shifts whole domains without carrying class signal. Deterministic in
    ``seed`` for a fixed backend.
    """
    if per_cell < 1:
        raise ValueError("per_cell must be >= 1")
    vocab = NameVocabulary(classes, domains)
    rng = np.random.default_rng(seed)
    n_y, n_j = len(classes), len(domains)
    with torch.no_grad():
        t_class = np.stack([
            backend.encode_text(assemble_zeroshot(backend, vocab, y, None, template=template).embeddings).numpy()
            for y in range(n_y)
        ])
        t_pair = np.stack([
            [
                backend.encode_text(assemble_zeroshot(backend, vocab, y, j, template=template).embeddings).numpy()
                for j in range(n_j)
            ]
            for y in range(n_y)
        ])
    mean_class = t_class.mean(axis=0)
    class_dev = np.stack([_unit(t_class[y] - mean_class) for y in range(n_y)])
    # interaction and offset components live off the class-prompt span, so
    # plain class prompts read only the class deviation plus noise
    q, _ = np.linalg.qr(t_class.T)

    def _off_span(v: np.ndarray) -> np.ndarray:
        return _unit(v - q @ (q.T @ v))

    pair_dev = np.stack([
        [_off_span(t_pair[y, j] - t_pair[:, j].mean(axis=0)) for j in range(n_j)]
        for y in range(n_y)
    ])
    domain_off = np.stack([_off_span((t_pair[:, j] - t_class).mean(axis=0)) for j in range(n_j)])
    dim = backend.descriptor.feature_dim
    samples: list[Sample] = []
    for j, _domain in enumerate(domains):
        for y, _cls in enumerate(classes):
            for i in range(per_cell):
                z = (
                    mean_class
                    + class_scale * class_dev[y]
                    + pair_scale * pair_dev[y, j]
                    + domain_scale * domain_off[j]
                    + noise * rng.normal(size=dim)
                )
                samples.append(Sample(f"synth:{j}/{y}/{i}", y, j, "train", z.astype(np.float64)))
    return DatasetManifest(
        classes=tuple(classes),
        domains=tuple(domains),
        samples=samples,
        meta={
            "source": "synth-aligned",
            "name": "synth-aligned",
            "seed": int(seed),
            "per_cell": int(per_cell),
        },
    )


PROTOCOLS = ("multi-source", "single-source")


@dataclass(frozen=True)
class ProtocolSplit:
    """One train/evaluate configuration of a domain-generalization protocol."""

    train_domains: tuple[int, ...]
    test_domain: int

    def name(self, domains: Sequence[str]) -> str:
        src = "+".join(domains[i] for i in self.train_domains)
        return f"{src}->{domains[self.test_domain]}"


def make_splits(manifest: DatasetManifest, protocol: str) -> list[ProtocolSplit]:
    """All splits of a protocol, in deterministic domain order.

    multi-source: leave one domain out, train on all others (K splits).
    single-source: every ordered (train, test) domain pair (K*(K-1) splits).
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; known: {PROTOCOLS}")
    k = manifest.n_domains
    if k < 2:
        raise ValueError(f"protocol {protocol!r} needs at least 2 domains, got {k}")
    splits: list[ProtocolSplit] = []
    if protocol == "multi-source":
        for test in range(k):
            train = tuple(j for j in range(k) if j != test)
            splits.append(ProtocolSplit(train, test))
    else:
        for train in range(k):
            for test in range(k):
                if train != test:
                    splits.append(ProtocolSplit((train,), test))
    return splits


def mask_domain_labels(manifest: DatasetManifest, ratio: float, seed: int = 0) -> DatasetManifest:
    """Keep domain labels on a ``ratio`` fraction of train-tagged samples.

    The rest get a null domain id and can then only contribute through the
    marginalized loss. Selection is deterministic in ``seed``. Test-tagged
    samples keep their labels; those labels define evaluation membership and
    are never read by the training loss.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must be in [0, 1]")
    out = manifest.copy()
    candidates = [i for i, s in enumerate(out.samples) if s.split == "train" and s.domain_id is not None]
    n_keep = int(round(ratio * len(candidates)))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(candidates))
    drop = {candidates[perm[i]] for i in range(n_keep, len(candidates))}
    for i in drop:
        out.samples[i].domain_id = None
    out.meta = dict(out.meta)
    out.meta["domain_label_ratio"] = float(ratio)
    return out


def subset_by_domains(manifest: DatasetManifest, domain_ids: Iterable[int]) -> DatasetManifest:
    """Samples restricted to the given domains; ids and name lists unchanged."""
    keep = set(domain_ids)
    for j in keep:
        if not 0 <= j < manifest.n_domains:
            raise ValueError(f"domain id {j} out of range")
    out = manifest.copy()
    out.samples = [s for s in out.samples if s.domain_id in keep]
    out.meta = dict(out.meta)
    out.meta["domain_subset"] = sorted(keep)
    return out
