"""Scale-adaptive chip sampling for multi-scale detection training."""

__version__ = "0.1.0"

from .errors import ChipforgeError, InstanceTooLarge, MalformedInput, UnknownImage, VersionMismatch
from .geometry import Box, clip, encloses, flip_box, iou, scale_box
from .pyramid import (
    AreaRange,
    Canvas,
    Factor,
    FitLongSide,
    ScaleSpec,
    builtin_pyramid,
    default_pyramid,
    grid_chips,
    load_pyramid,
    resolve_canvas,
)
from .records import ChipRecord, CroppedGT, GroundTruth, ImageInfo, Label, Proposal, ProposalLabel

__all__ = [
    "AreaRange",
    "Box",
    "Canvas",
    "ChipRecord",
    "ChipforgeError",
    "CroppedGT",
    "Factor",
    "FitLongSide",
    "GroundTruth",
    "ImageInfo",
    "InstanceTooLarge",
    "Label",
    "MalformedInput",
    "Proposal",
    "ProposalLabel",
    "ScaleSpec",
    "UnknownImage",
    "VersionMismatch",
    "builtin_pyramid",
    "clip",
    "default_pyramid",
    "encloses",
    "flip_box",
    "grid_chips",
    "iou",
    "load_pyramid",
    "resolve_canvas",
    "scale_box",
]
