"""Python bindings for the skipfuse core."""

from ._skipfuse import (
    ConfigError,
    DataError,
    EmptyVisibleSet,
    Error,
    InputError,
    InternalError,
    NumericalError,
    ShapeError,
    build_hierarchy,
    config_defaults,
    cosine_loss,
    grid_sample,
    miou,
    pca_rgb,
    project_point,
    select_views,
    train_and_evaluate,
)

__all__ = [
    "ConfigError",
    "DataError",
    "EmptyVisibleSet",
    "Error",
    "InputError",
    "InternalError",
    "NumericalError",
    "ShapeError",
    "build_hierarchy",
    "config_defaults",
    "cosine_loss",
    "grid_sample",
    "miou",
    "pca_rgb",
    "project_point",
    "select_views",
    "train_and_evaluate",
]
