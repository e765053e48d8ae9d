"""Evaluation cells, aggregation and report writers.

A cell is one (variant, split, seed) accuracy. A report groups the cells of
one protocol run; per-split means average over seeds and the overall average
is the arithmetic mean of the per-split means, which is also how published
per-dataset averages are formed from per-domain columns. Writers emit CSV
(fixed column order), JSON (full structure) and a markdown table with
2-decimal accuracies in percent.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

CSV_COLUMNS = (
    "variant",
    "dataset",
    "train_domains",
    "test_domain",
    "seed",
    "M_c",
    "M_k",
    "ratio",
    "accuracy",
)


@dataclass(frozen=True)
class EvalCell:
    variant: str
    dataset: str
    train_domains: tuple[str, ...]
    test_domain: str
    seed: int
    class_ctx_len: int
    domain_ctx_len: int
    accuracy: float
    ratio: float | None = None
    n_test: int = 0

    def csv_row(self) -> list[str]:
        return [
            self.variant,
            self.dataset,
            "+".join(self.train_domains),
            self.test_domain,
            str(self.seed),
            str(self.class_ctx_len),
            str(self.domain_ctx_len),
            "" if self.ratio is None else str(self.ratio),
            str(self.accuracy),
        ]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant,
            "dataset": self.dataset,
            "train_domains": list(self.train_domains),
            "test_domain": self.test_domain,
            "seed": self.seed,
            "M_c": self.class_ctx_len,
            "M_k": self.domain_ctx_len,
            "ratio": self.ratio,
            "accuracy": self.accuracy,
            "n_test": self.n_test,
        }


def cell_from_json_dict(doc: dict[str, Any]) -> EvalCell:
    return EvalCell(
        variant=doc["variant"],
        dataset=doc["dataset"],
        train_domains=tuple(doc.get("train_domains", [])),
        test_domain=doc["test_domain"],
        seed=int(doc.get("seed", 0)),
        class_ctx_len=int(doc.get("M_c", 0)),
        domain_ctx_len=int(doc.get("M_k", 0)),
        accuracy=float(doc["accuracy"]),
        ratio=doc.get("ratio"),
        n_test=int(doc.get("n_test", 0)),
    )


@dataclass
class EvalReport:
    """Cells of one protocol run plus aggregation helpers."""

    protocol: str
    dataset: str
    variant: str
    cells: list[EvalCell] = field(default_factory=list)

    def test_domains(self) -> list[str]:
        seen: list[str] = []
        for c in self.cells:
            if c.test_domain not in seen:
                seen.append(c.test_domain)
        return seen

    def split_means(self) -> dict[str, float]:
        """Mean accuracy per held-out domain, averaged over seeds."""
        means: dict[str, float] = {}
        for dom in self.test_domains():
            accs = [c.accuracy for c in self.cells if c.test_domain == dom]
            means[dom] = sum(accs) / len(accs)
        return means

    def average(self) -> float:
        """Arithmetic mean of the per-split means."""
        means = self.split_means()
        if not means:
            raise ValueError("report has no cells")
        return sum(means.values()) / len(means)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "protocol": self.protocol,
            "dataset": self.dataset,
            "variant": self.variant,
            "cells": [c.to_json_dict() for c in self.cells],
            "split_means": self.split_means(),
            "average": self.average() if self.cells else None,
        }

    def write_json(self, path: str | Path) -> Path:
        return write_json(self.to_json_dict(), path)

    def write_csv(self, path: str | Path) -> Path:
        return write_csv(self.cells, path)


def report_from_json_dict(doc: dict[str, Any]) -> EvalReport:
    return EvalReport(
        protocol=doc.get("protocol", "multi-source"),
        dataset=doc.get("dataset", "dataset"),
        variant=doc.get("variant", "codol"),
        cells=[cell_from_json_dict(c) for c in doc.get("cells", [])],
    )


def write_csv(cells: Iterable[EvalCell], path: str | Path) -> Path:
    """Fixed-column CSV; deterministic bytes for identical cells."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for cell in cells:
            writer.writerow(cell.csv_row())
    return path


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def write_json(doc: dict[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def percent(value: float) -> float:
    """Fractional accuracy to percent; values already in percent pass through."""
    return value * 100.0 if value <= 1.0 else value


def render_markdown_table(
    reports: Sequence[EvalReport],
    columns: Sequence[str] | None = None,
) -> str:
    """One row per report: per-domain means, then the overall average.

    Accuracies are rendered in percent with two decimals, matching the usual
    presentation of domain-generalization tables.
    """
    if not reports:
        raise ValueError("need at least one report")
    if columns is None:
        columns = reports[0].test_domains()
    lines = [
        "| Method | " + " | ".join(columns) + " | Avg. |",
        "|" + " --- |" * (len(columns) + 2),
    ]
    for rep in reports:
        means = rep.split_means()
        vals = [f"{percent(means[d]):.2f}" if d in means else "-" for d in columns]
        lines.append(
            f"| {rep.variant} | " + " | ".join(vals) + f" | {percent(rep.average()):.2f} |"
        )
    return "\n".join(lines) + "\n"
