"""Cord segmentation, counting and screening decision pipeline."""

from .postprocess import (
    Decision,
    LabeledRegions,
    Region,
    binarize,
    close,
    connected_components,
    decide,
    dilate,
    erode,
    filter_regions,
)
from .unet import DESK_CONFIG, FULL_SCALE_CONFIG, UNetConfig, build, forward, train

__all__ = [
    "Decision",
    "LabeledRegions",
    "Region",
    "binarize",
    "close",
    "connected_components",
    "decide",
    "dilate",
    "erode",
    "filter_regions",
    "UNetConfig",
    "DESK_CONFIG",
    "FULL_SCALE_CONFIG",
    "build",
    "forward",
    "train",
]
