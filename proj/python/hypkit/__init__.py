"""Hetero-modal multi-view segmentation toolkit."""

from ._core import (
    HypkitError,
    Model,
    desk_phantom,
    dice,
    hd95,
    icc_a1,
    parameter_count,
    structure_volumes,
    volume_similarity,
    wilcoxon,
)

__all__ = [
    "HypkitError",
    "Model",
    "desk_phantom",
    "dice",
    "hd95",
    "icc_a1",
    "parameter_count",
    "structure_volumes",
    "volume_similarity",
    "wilcoxon",
]
