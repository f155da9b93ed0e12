"""Evaluation harness for promptable instance segmentation on large
microscopy slices."""

__version__ = "0.1.0"

from .geometry import concavity, concavity_histogram, convex_hull, polygon_area
from .mask import (
    BoundingBox,
    InstanceMask,
    LabelMask,
    connected_components,
    extract_instances,
    load_label_mask,
    rle_decode,
    rle_encode,
    save_label_mask,
)
from .metrics import (
    DEFAULT_THRESHOLDS,
    dice_loss,
    dsc,
    hd95,
    iou,
    l2_iou_loss,
    match_at_threshold,
    quality,
)
from .prompts import (
    PromptSet,
    PromptSpec,
    format_combo,
    next_iterative_prompts,
    parse_combo,
    sample_prompt_set,
)

__all__ = [
    "BoundingBox",
    "DEFAULT_THRESHOLDS",
    "InstanceMask",
    "LabelMask",
    "PromptSet",
    "PromptSpec",
    "concavity",
    "concavity_histogram",
    "connected_components",
    "convex_hull",
    "dice_loss",
    "dsc",
    "extract_instances",
    "format_combo",
    "hd95",
    "iou",
    "l2_iou_loss",
    "load_label_mask",
    "match_at_threshold",
    "next_iterative_prompts",
    "parse_combo",
    "polygon_area",
    "quality",
    "rle_decode",
    "rle_encode",
    "sample_prompt_set",
    "save_label_mask",
]
