"""Unsupervised image segmentation from differentiable superpixels, a
superpixel graph network and rasterized-convolution mutual information."""

from .config import ConfigError, TrainConfig, parse_config, preset
from .evaluate import evaluate, hungarian_match, pixel_accuracy
from .model import SegmentationPipeline
from .synth import generate_synthetic
from .train import train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "SegmentationPipeline",
    "TrainConfig",
    "evaluate",
    "generate_synthetic",
    "hungarian_match",
    "parse_config",
    "pixel_accuracy",
    "preset",
    "train",
]
