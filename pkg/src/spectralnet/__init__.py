"""Wavelet-fused 2D CNN for hyperspectral image classification."""

from .haar import WaveletPyramid, haar_forward, haar_inverse, haar_pyramid
from .hsidata import HSICube, PatchSet, ReducedCube, extract_patches, load_cube, stratified_split
from .metrics import ConfusionMatrix, MetricsReport, confusion_to_metrics
from .model import ModelConfig, SpectralNet, build_model, count_parameters
from .training import TrainConfig, TrainingHistory, evaluate, fit

__version__ = "0.1.0"
