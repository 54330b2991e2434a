"""CNN feature extraction for exported view pairs, in the FEMB exchange format."""

from .backbones import BACKBONES, UnloadableBackbone, build_backbone, preprocess
from .extract import (
    ExtractJob,
    ExtractResult,
    NonFiniteFeatures,
    PairFailure,
    PairsFileError,
    extract,
)
from .femb import FEMB_MAGIC, FEMB_VERSION, FembError, read_femb, write_femb
from .pixels import EmptyCrop, crop_resized, load_rgb, pixel_window

__all__ = [name for name in dir() if not name.startswith("_")]
