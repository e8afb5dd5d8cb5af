"""loopscreen: pen-drawn loop-trace screening for schizophrenia.

Preprocessing (crop, center, pad, Laplacian-of-Gaussian), augmentation,
from-scratch CNN training, and an HTTP inference service.
"""

from .augment import AugmentConfig, augment_dataset, hflip, shear
from .dataset import (
    DatasetSplit,
    LabeledItem,
    SynthConfig,
    load_dir,
    stratified_split,
    synth_generate,
)
from .harness import Metrics, TrainConfig, TrainHistory, compare, evaluate, train
from .imaging import (
    BorderPolicy,
    FilterMap,
    Image,
    Kernel,
    PreprocessConfig,
    load_image,
    preprocess,
    save_image,
)
from .models import ARCHS, Model, Prediction, build, load, predict, save
from .service import ScreeningService, ServiceConfig

__version__ = "0.1.0"

__all__ = [
    "ARCHS",
    "AugmentConfig",
    "BorderPolicy",
    "DatasetSplit",
    "FilterMap",
    "Image",
    "Kernel",
    "LabeledItem",
    "Metrics",
    "Model",
    "Prediction",
    "PreprocessConfig",
    "ScreeningService",
    "ServiceConfig",
    "SynthConfig",
    "TrainConfig",
    "TrainHistory",
    "augment_dataset",
    "build",
    "compare",
    "evaluate",
    "hflip",
    "load",
    "load_dir",
    "load_image",
    "predict",
    "preprocess",
    "save",
    "save_image",
    "shear",
    "stratified_split",
    "synth_generate",
    "train",
    "__version__",
]
