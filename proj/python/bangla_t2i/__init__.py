"""Bangla text-to-image: tokenizer, attention, metrics and the training CLI."""

from ._core import (
    ConfigError,
    DatasetError,
    EmptyCaptionError,
    EncodingError,
    Error,
    IncompatibleError,
    IoError,
    MaskError,
    ShapeError,
    StatsError,
    fid,
    gaussian_stats,
    inception_score,
    load_tensor,
    nfc,
    run,
    save_tensor,
    split_counts,
    tokenize,
    top_attended,
    word_context,
)

__all__ = [name for name in dir() if not name.startswith("_")]
