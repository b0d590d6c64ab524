"""Patch-level density modelling for lung CT anomaly detection."""

from ._core import (
    STRATEGIES,
    FlowDivergenceError,
    GmmModel,
    NfModel,
    aggregate,
    auroc,
    choose_threshold,
    emphysema_fraction,
    extract_patches,
    generate_cohort,
    generate_phantom,
    gmm_fit,
    grid_starts,
    handcrafted_features,
    load_model,
    nf_fit,
    read_embeddings,
    run_cli,
    save_model,
    threshold_metrics,
    write_embeddings,
)

__all__ = [
    "STRATEGIES",
    "FlowDivergenceError",
    "GmmModel",
    "NfModel",
    "aggregate",
    "auroc",
    "choose_threshold",
    "emphysema_fraction",
    "extract_patches",
    "generate_cohort",
    "generate_phantom",
    "gmm_fit",
    "grid_starts",
    "handcrafted_features",
    "load_model",
    "nf_fit",
    "read_embeddings",
    "run_cli",
    "save_model",
    "threshold_metrics",
    "write_embeddings",
]
