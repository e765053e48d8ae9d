"""Prompt tuning with domain-conditional contexts over frozen dual encoders."""

from .backend import (
    BackendDescriptor,
    DualEncoderBackend,
    ToyDualEncoder,
    available_backends,
    create_backend,
    make_toy_backend,
    register_backend,
)
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ResolvedConfig, RunSettings, parse_config_text, resolve_config
from .data import (
    DatasetManifest,
    ManifestError,
    ProtocolSplit,
    Sample,
    load_manifest,
    make_splits,
    mask_domain_labels,
    save_manifest,
    scan_layout,
    subset_by_domains,
    synth_aligned_dataset,
    synth_dataset,
)
from .head import Posterior, nll_loss, posterior, predict, score_grid, zero_shot_posterior
from .metanet import MetaNet, MetaNets, bottleneck_dim, condition_tokens
from .pipeline import (
    AlignmentReport,
    PromptModel,
    TrainConfig,
    TrainingDiverged,
    alignment_analysis,
    build_model,
    domain_ratio_experiment,
    evaluate,
    evaluate_zero_shot,
    featurize,
    restore_model,
    run_protocol,
    sweep_context_lengths,
    train,
)
from .prompt import (
    NameVocabulary,
    PromptAssembly,
    PromptParams,
    assemble_codol,
    assemble_coop,
    assemble_zeroshot,
    init_contexts,
)
from .report import EvalCell, EvalReport, render_markdown_table, write_csv, write_json

__version__ = "0.1.0"
