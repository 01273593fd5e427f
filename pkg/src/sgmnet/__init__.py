"""Trimap-free human matting with a foreground-probability-guided detail branch."""
from .kernels import BACKEND
from .losses import LossWeights
from .metrics import all_metrics
from .model import ABLATIONS, ModelConfig, build_params, forward
from .nn import ParamStore, SgdConfig
from .tensor import Tape, Tensor4, backward
from .train import predict, train

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "BACKEND",
    "LossWeights",
    "ModelConfig",
    "ParamStore",
    "SgdConfig",
    "Tape",
    "Tensor4",
    "all_metrics",
    "backward",
    "build_params",
    "forward",
    "predict",
    "train",
]
