"""Command-line interface.

Subcommands: synth, train, eval, zeroshot, sweep, ratio, align. Every
command reads options from flags, CODOL_* environment variables and an
optional config file (strongest first) and writes its reports under the
output directory. Timestamps go only to the run.log sidecar so the report
files stay byte-reproducible.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from .backend import create_backend
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, ResolvedConfig, resolve_config
from .data import (
    ManifestError,
    load_manifest,
    make_splits,
    save_manifest,
    scan_layout,
    synth_aligned_dataset,
    synth_dataset,
)
from .pipeline import (
    ALL_VARIANTS,
    TrainingDiverged,
    alignment_analysis,
    domain_ratio_experiment,
    evaluate,
    evaluate_zero_shot,
    restore_model,
    run_protocol,
    sweep_context_lengths,
)
from .report import (
    EvalCell,
    EvalReport,
    render_markdown_table,
    report_from_json_dict,
    write_csv,
    write_json,
)

log = logging.getLogger("codol")


def _comma_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from err


def _comma_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from err


def _comma_strs(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (flat-table key = value format)")
    p.add_argument("--manifest", help="dataset manifest JSON, or a directory to scan")
    p.add_argument("--output", help="output directory (default: out)")
    p.add_argument("--protocol", choices=("multi-source", "single-source"))
    p.add_argument("--seeds", type=_comma_ints, help="comma-separated seeds, e.g. 0,1,2")
    p.add_argument("--workers", type=int, help="parallel split workers")
    p.add_argument("--plots", action=argparse.BooleanOptionalAction, default=None,
                   help="render figure files next to the reports")
    p.add_argument("--backend", help="backend spec as JSON, e.g. '{\"name\": \"toy\", \"seed\": 0}'")


def _add_train_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=ALL_VARIANTS)
    p.add_argument("--class-ctx-len", type=int)
    p.add_argument("--domain-ctx-len", type=int)
    p.add_argument("--class-specific", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--accum-steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--lr-schedule", choices=("cosine", "constant"))
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--posterior-mode", choices=("joint-softmax", "per-domain-softmax"))
    p.add_argument("--supervise-domain", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--ctx-init", choices=("gaussian", "template"))
    p.add_argument("--meta-init", choices=("gaussian", "zero", "zero-out"))
    p.add_argument("--train-dmn", action=argparse.BooleanOptionalAction, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codol",
        description="Prompt tuning with domain-conditional contexts over frozen dual encoders.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-domain dataset manifest")
    _add_common(p)
    p.add_argument("--classes", type=_comma_strs, default=("bird", "car", "dog", "tree"))
    p.add_argument("--domains", type=_comma_strs, default=("cartoon", "photo", "sketch"))
    p.add_argument("--per-cell", type=int, default=10)
    p.add_argument("--gen-seed", type=int, default=0, help="generator seed (independent of train seed)")
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--aligned", action="store_true",
                   help="anchor features to the backend's own prompt text features")
    p.add_argument("--class-sep", type=float, default=2.0)
    p.add_argument("--domain-shift", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=None,
                   help="gaussian noise scale (default 0.1 plain, 0.05 aligned)")
    p.add_argument("--class-scale", type=float, default=0.5,
                   help="aligned only: weight of the class text direction")
    p.add_argument("--pair-scale", type=float, default=0.3,
                   help="aligned only: weight of the class-by-domain interaction")
    p.add_argument("--domain-scale", type=float, default=0.2,
                   help="aligned only: weight of the shared per-domain offset")
    p.add_argument("--out", help="manifest path (default: <output>/dataset.json)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train prompts on every protocol split and evaluate")
    _add_common(p)
    _add_train_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints, or aggregate precomputed cells")
    _add_common(p)
    p.add_argument("--checkpoint", action="append", default=None,
                   help="checkpoint file; repeat for several, or pass a directory")
    p.add_argument("--precomputed", help="JSON report with cells to aggregate (no model run)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("zeroshot", help="evaluate hand-written prompts, no training")
    _add_common(p)
    _add_train_opts(p)
    p.add_argument("--with-domain", action="store_true",
                   help="append domain names and marginalize over them")
    p.add_argument("--per-protocol", action="store_true",
                   help="restrict the marginal to each split's training domains "
                        "instead of scoring the whole manifest with every domain name")
    p.add_argument("--include-test-domain", action="store_true",
                   help="with --per-protocol: let the marginal also see the held-out name")
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("sweep", help="grid over context lengths, heatmap alongside CSV")
    _add_common(p)
    _add_train_opts(p)
    p.add_argument("--grid", type=_comma_ints, help="lengths for both axes, e.g. 4,8,16")
    p.add_argument("--grid-class", type=_comma_ints, help="class context lengths")
    p.add_argument("--grid-domain", type=_comma_ints, help="domain context lengths")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ratio", help="train at several domain-label ratios, curve alongside CSV")
    _add_common(p)
    _add_train_opts(p)
    p.add_argument("--ratios", type=_comma_floats, default=(0.0, 0.2, 1.0))
    p.set_defaults(func=cmd_ratio)

    p = sub.add_parser("align", help="image/prompt cosine alignment heatmaps for a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_align)

    return parser


_CLI_KEYS = (
    "manifest", "output", "protocol", "seeds", "workers", "plots", "backend",
    "variant", "class_ctx_len", "domain_ctx_len", "class_specific", "epochs",
    "batch_size", "accum_steps", "lr", "momentum", "lr_schedule", "seed",
    "tau", "posterior_mode", "supervise_domain", "ctx_init", "meta_init",
    "train_dmn",
)


def _resolve(args: argparse.Namespace) -> ResolvedConfig:
    ns = vars(args)
    cli = {k: ns[k] for k in _CLI_KEYS if k in ns}
    config_path = args.config or os.environ.get("CODOL_CONFIG")
    return resolve_config(cli, config_path, os.environ)


def _outdir(rc: ResolvedConfig) -> Path:
    out = Path(rc.run.output)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    _close_log_handlers()
    log.handlers = [handler]
    log.setLevel(logging.INFO)
    log.propagate = False
    return out


def _close_log_handlers() -> None:
    for handler in log.handlers:
        handler.close()
    log.handlers = []


def _load_dataset(rc: ResolvedConfig):
    if not rc.run.manifest:
        raise ConfigError("no dataset: pass --manifest, set CODOL_MANIFEST, or set [dataset] manifest")
    path = Path(rc.run.manifest)
    if path.is_dir():
        return scan_layout(path)
    return load_manifest(path)


def _write_report(report: EvalReport, out: Path) -> None:
    report.write_csv(out / "metrics.csv")
    report.write_json(out / "report.json")
    (out / "report.md").write_text(render_markdown_table([report]), encoding="utf-8")
    print(f"wrote {out / 'metrics.csv'}")
    print(f"wrote {out / 'report.json'}")
    print(f"wrote {out / 'report.md'}")


def cmd_synth(args: argparse.Namespace) -> int:
    rc = _resolve(args)
    out = _outdir(rc)
    if args.aligned:
        backend = create_backend(rc.train.backend)
        noise = 0.05 if args.noise is None else args.noise
        manifest = synth_aligned_dataset(
            backend, args.classes, args.domains, per_cell=args.per_cell,
            seed=args.gen_seed, class_scale=args.class_scale,
            pair_scale=args.pair_scale, domain_scale=args.domain_scale,
            noise=noise,
        )
    else:
        noise = 0.1 if args.noise is None else args.noise
        manifest = synth_dataset(
            args.classes, args.domains, per_cell=args.per_cell, seed=args.gen_seed,
            feature_dim=args.feature_dim, class_sep=args.class_sep,
            domain_shift=args.domain_shift, noise=noise,
        )
    path = Path(args.out) if args.out else out / "dataset.json"
    save_manifest(manifest, path)
    log.info("synth: wrote %s (%d samples)", path, len(manifest.samples))
    print(f"wrote {path} ({len(manifest.samples)} samples, "
          f"{manifest.n_classes} classes, {manifest.n_domains} domains)")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    rc = _resolve(args)
    out = _outdir(rc)
    manifest = _load_dataset(rc)
    log.info("train: variant=%s protocol=%s seeds=%s", rc.train.variant, rc.run.protocol, rc.run.seeds)
    report = run_protocol(
        manifest, rc.run.protocol, rc.train, rc.run.seeds,
        checkpoint_dir=out / "checkpoints", workers=rc.run.workers,
    )
    _write_report(report, out)
    log.info("train: average accuracy %.6f", report.average())
    print(f"average accuracy: {report.average():.4f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    rc = _resolve(args)
    out = _outdir(rc)
    if args.precomputed:
        doc_path = Path(args.precomputed)
        import json as _json

        report = report_from_json_dict(_json.loads(doc_path.read_text(encoding="utf-8")))
        if not report.cells:
            raise ValueError(f"{doc_path}: no cells to aggregate")
        _write_report(report, out)
        print(f"average accuracy: {report.average():.4f}")
        return 0
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint or --precomputed")
    paths: list[Path] = []
    for entry in args.checkpoint:
        p = Path(entry)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.ckpt")))
        else:
            paths.append(p)
    if not paths:
        raise ValueError("no checkpoint files found")
    manifest = _load_dataset(rc)
    cells: list[EvalCell] = []
    variant = "codol"
    for p in paths:
        ckpt = load_checkpoint(p)
        model = restore_model(ckpt)
        variant = model.variant
        test_domain = int(ckpt.split["test_domain"])
        acc, n = evaluate(model, manifest, test_domain)
        cells.append(EvalCell(
            variant=model.variant,
            dataset=manifest.name,
            train_domains=tuple(manifest.domains[j] for j in ckpt.split["train_domains"]),
            test_domain=manifest.domains[test_domain],
            seed=int(ckpt.config.get("seed", 0)),
            class_ctx_len=int(ckpt.config.get("class_ctx_len", 0)),
            domain_ctx_len=int(ckpt.config.get("domain_ctx_len", 0)),
            accuracy=acc,
            n_test=n,
        ))
        log.info("eval: %s -> accuracy %.6f (%d samples)", p.name, acc, n)
    report = EvalReport(protocol=rc.run.protocol, dataset=manifest.name, variant=variant, cells=cells)
    _write_report(report, out)
    print(f"average accuracy: {report.average():.4f}")
    return 0


def cmd_zeroshot(args: argparse.Namespace) -> int:
    rc = _resolve(args)
    out = _outdir(rc)
    manifest = _load_dataset(rc)
    variant = "zeroshot-domain" if args.with_domain else "zeroshot"
    cfg = replace(rc.train, variant=variant)
    if args.per_protocol:
        if args.include_test_domain:
            # oracle: the marginal may also see the held-out domain's name
            backend = create_backend(cfg.backend)
            splits = make_splits(manifest, rc.run.protocol)
            report = EvalReport(protocol=rc.run.protocol, dataset=manifest.name, variant=variant)
            for split in splits:
                marginal = list(split.train_domains) + [split.test_domain]
                acc, n = evaluate_zero_shot(
                    manifest, split.test_domain, marginal,
                    with_domain=args.with_domain, cfg=cfg, backend=backend,
                )
                for seed in rc.run.seeds:
                    report.cells.append(EvalCell(
                        variant=variant, dataset=manifest.name,
                        train_domains=tuple(manifest.domains[j] for j in split.train_domains),
                        test_domain=manifest.domains[split.test_domain], seed=seed,
                        class_ctx_len=0, domain_ctx_len=0, accuracy=acc, n_test=n,
                    ))
        else:
            report = run_protocol(manifest, rc.run.protocol, cfg, rc.run.seeds)
    else:
        # Default: score every sample against every class name, marginalizing
        # over the full domain-name list.  Nothing is trained and nothing is
        # held out, so one accuracy cell per domain covers the whole manifest.
        backend = create_backend(cfg.backend)
        all_domains = list(range(manifest.n_domains))
        names = tuple(manifest.domains)
        report = EvalReport(protocol="whole-manifest", dataset=manifest.name, variant=variant)
        for j in all_domains:
            acc, n = evaluate_zero_shot(
                manifest, j, all_domains,
                with_domain=args.with_domain, cfg=cfg, backend=backend,
            )
            report.cells.append(EvalCell(
                variant=variant, dataset=manifest.name, train_domains=names,
                test_domain=manifest.domains[j], seed=0,
                class_ctx_len=0, domain_ctx_len=0, accuracy=acc, n_test=n,
            ))
    _write_report(report, out)
    log.info("zeroshot: variant=%s average %.6f", variant, report.average())
    print(f"average accuracy: {report.average():.4f}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    rc = _resolve(args)
    out = _outdir(rc)
    manifest = _load_dataset(rc)
    grid_class = args.grid_class or args.grid
    grid_domain = args.grid_domain or args.grid
    if not grid_class or not grid_domain:
        raise ConfigError("sweep needs --grid, or both --grid-class and --grid-domain")
    pairs = list(itertools.product(grid_class, grid_domain))
    log.info("sweep: %d grid cells", len(pairs))
    rows = sweep_context_lengths(
        manifest, rc.run.protocol, pairs, rc.train, rc.run.seeds, workers=rc.run.workers
    )
    cells = [c for r in rows for c in r["report"].cells]
    write_csv(cells, out / "metrics.csv")
    write_json(
        {
            "protocol": rc.run.protocol,
            "dataset": manifest.name,
            "grid": [{"M_c": r["M_c"], "M_k": r["M_k"], "average": r["average"]} for r in rows],
        },
        out / "sweep.json",
    )
    print(f"wrote {out / 'metrics.csv'}")
    print(f"wrote {out / 'sweep.json'}")
    if rc.run.plots:
        from .plots import save_sweep_heatmap

        png = save_sweep_heatmap(rows, out / "sweep_heatmap.png")
        print(f"wrote {png}")
    best = max(rows, key=lambda r: r["average"])
    print(f"best: M_c={best['M_c']} M_k={best['M_k']} average={best['average']:.4f}")
    return 0


def cmd_ratio(args: argparse.Namespace) -> int:
    rc = _resolve(args)
    out = _outdir(rc)
    manifest = _load_dataset(rc)
    log.info("ratio: ratios=%s", list(args.ratios))
    result = domain_ratio_experiment(manifest, rc.run.protocol, args.ratios, rc.train, rc.run.seeds)
    write_csv(result["cells"], out / "metrics.csv")
    write_json(
        {
            "protocol": result["protocol"],
            "dataset": result["dataset"],
            "rows": [
                {"ratio": r["ratio"], "mean": r["mean"], "spread": r["spread"],
                 "per_seed": {str(k): v for k, v in r["per_seed"].items()}}
                for r in result["rows"]
            ],
        },
        out / "ratio.json",
    )
    print(f"wrote {out / 'metrics.csv'}")
    print(f"wrote {out / 'ratio.json'}")
    if rc.run.plots:
        from .plots import save_ratio_curve

        png = save_ratio_curve(result["rows"], out / "ratio_curve.png")
        print(f"wrote {png}")
    for row in result["rows"]:
        print(f"ratio {row['ratio']:g}: mean accuracy {row['mean']:.4f}")
    return 0


def cmd_align(args: argparse.Namespace) -> int:
    rc = _resolve(args)
    out = _outdir(rc)
    manifest = _load_dataset(rc)
    ckpt = load_checkpoint(args.checkpoint)
    model = restore_model(ckpt)
    from .data import ProtocolSplit

    split = ProtocolSplit(tuple(ckpt.split["train_domains"]), int(ckpt.split["test_domain"]))
    rep = alignment_analysis(model, manifest, split)
    write_json(rep.to_json_dict(), out / "alignment.json")
    print(f"wrote {out / 'alignment.json'}")
    if rc.run.plots:
        from .plots import save_alignment_heatmaps

        png = save_alignment_heatmaps(rep, out / "alignment.png")
        print(f"wrote {png}")
    print(f"matched-pair cosine: full {rep.matched_full:.4f}, ablated {rep.matched_ablated:.4f}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ManifestError, CheckpointError, TrainingDiverged, OSError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    finally:
        _close_log_handlers()


if __name__ == "__main__":
    sys.exit(main())
