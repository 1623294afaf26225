"""From-scratch tensor layers and the small slice-classification network."""

from .gradcheck import gradient_check
from .layers import (
    BatchNorm1d,
    BatchNorm2d,
    Conv2d,
    Dropout,
    Flatten,
    Linear,
    MaxPool2x2,
    ReLU,
    Softmax,
)
from .network import (
    INPUT_SIZE,
    LayerStack,
    build_network,
    classes_for_head,
    load_network,
    predict_slice,
    save_network,
)
from .training import TrainConfig, TrainingDivergedError, augment, train

__all__ = [
    "BatchNorm1d",
    "BatchNorm2d",
    "Conv2d",
    "Dropout",
    "Flatten",
    "INPUT_SIZE",
    "LayerStack",
    "Linear",
    "MaxPool2x2",
    "ReLU",
    "Softmax",
    "TrainConfig",
    "TrainingDivergedError",
    "augment",
    "build_network",
    "classes_for_head",
    "gradient_check",
    "load_network",
    "predict_slice",
    "save_network",
    "train",
]
