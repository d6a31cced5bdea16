"""Python access to the bclab mixing, loss and analysis kernels."""

from ._bclab import (
    ManifestError,
    NumericError,
    ShapeError,
    bc_plus_coefficient,
    fisher_criterion,
    kl_ratio_loss,
    mean_fisher,
    mix,
    mix_labels,
    normalize_manifest,
    pca_project,
    run_cli,
    single_label_target,
    softmax,
    sound_db_coefficient,
)

__all__ = [
    "ManifestError",
    "NumericError",
    "ShapeError",
    "bc_plus_coefficient",
    "fisher_criterion",
    "kl_ratio_loss",
    "mean_fisher",
    "mix",
    "mix_labels",
    "normalize_manifest",
    "pca_project",
    "run_cli",
    "single_label_target",
    "softmax",
    "sound_db_coefficient",
]
