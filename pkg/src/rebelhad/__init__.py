"""Hyperspectral anomaly detection with a spectral teacher and a decorrelated spatial student."""
from .detector import ae_baseline, detect, fuse_additive, fuse_multiplicative, rx, rx_enhanced
from .errors import FormatError, ModelFormatError, NumericalError, RebelHadError, SpecError
from .evaluation import auc, mauc, pca_diag, roc
from .hsidata import GroundTruthMask, HsiCube, SceneSpec, read_cube, read_mask, synth_scene, write_cube
from .networks import Frn, SpaFen, SpectralStageModel, SpeFen
from .trainer import TrainConfig, load_model, save_model, train_stage1, train_stage2

__version__ = "0.1.0"

__all__ = [
    "FormatError",
    "Frn",
    "GroundTruthMask",
    "HsiCube",
    "ModelFormatError",
    "NumericalError",
    "RebelHadError",
    "SceneSpec",
    "SpaFen",
    "SpeFen",
    "SpecError",
    "SpectralStageModel",
    "TrainConfig",
    "ae_baseline",
    "auc",
    "detect",
    "fuse_additive",
    "fuse_multiplicative",
    "load_model",
    "mauc",
    "pca_diag",
    "read_cube",
    "read_mask",
    "roc",
    "rx",
    "rx_enhanced",
    "save_model",
    "synth_scene",
    "train_stage1",
    "train_stage2",
    "write_cube",
]
