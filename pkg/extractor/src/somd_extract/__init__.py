"""Feature extractor companion: dumps CNN feature maps and masks as NPY
tensors plus JSON manifests in the exact formats the scoring package reads.
The two packages share no code, only files.
"""

from .backbones import BACKBONES, build_backbone, extract_layer_maps, resolve_layers
from .dataset import ImageRecord, walk_split
from .errors import (
    DataError,
    DatasetError,
    ExtractError,
    IoError,
    MissingWeights,
    UndecodableImage,
    ValidationError,
)
from .extract import ExtractionJob, ExtractionResult, extract, load_image, load_mask

__version__ = "0.1.0"

__all__ = [
    "BACKBONES",
    "DataError",
    "DatasetError",
    "ExtractError",
    "ExtractionJob",
    "ExtractionResult",
    "ImageRecord",
    "IoError",
    "MissingWeights",
    "UndecodableImage",
    "ValidationError",
    "build_backbone",
    "extract",
    "extract_layer_maps",
    "load_image",
    "load_mask",
    "resolve_layers",
    "walk_split",
]
