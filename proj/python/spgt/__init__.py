"""Spectral masked-autoencoder toolkit: tokenizer, losses, metrics, raster IO and model access."""

from ._core import (
    ConfigError,
    DataError,
    DimensionError,
    Error,
    EvaluationError,
    FormatError,
    IoError,
    MaskedAutoencoder,
    TokenizationError,
    average_precision,
    build_mask,
    generate_synthetic,
    gradient_check,
    mean_average_precision,
    parameter_counts,
    patchify,
    precision_recall_f1,
    read_raster,
    run_cli,
    segmentation_metrics,
    total_loss,
    unpatchify,
    write_raster,
)

__version__ = "0.1.0"
