"""Voice activity detection with a denoising deep neural network.

Noisy frame features are mapped through a stack of logistic layers that were
pre-trained, one level at a time, to reconstruct the matching clean-speech
features; a logistic output unit is then added and the whole stack is
fine-tuned for speech/non-speech classification.
"""

from .estimator import DDNNClassifier
from .exceptions import ConfigError, DataError, DDNNError, NumericalError, ShapeError
from .features import (N_FEATURES, AudioSignal, FeatureConfig, FrameSpec, MinMaxNormalizer,
                       NormStats, extract_features, fit_norm_stats, normalize)
from .finetune import FinetuneConfig, assemble_classifier, finetune, predict_frame
from .network import DdnnModel, LayerParams, load_model, save_model
from .pretrain import PretrainConfig, PretrainState, run_pretraining

__version__ = "0.1.0"

__all__ = [
    "AudioSignal", "ConfigError", "DDNNClassifier", "DDNNError", "DataError", "DdnnModel",
    "FeatureConfig", "FinetuneConfig", "FrameSpec", "LayerParams", "MinMaxNormalizer",
    "N_FEATURES", "NormStats", "NumericalError", "PretrainConfig", "PretrainState", "ShapeError",
    "assemble_classifier", "extract_features", "finetune", "fit_norm_stats", "load_model",
    "normalize", "predict_frame", "run_pretraining", "save_model",
]
