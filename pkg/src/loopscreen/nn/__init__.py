"""Minimal CNN engine: layers with manual backprop, softmax cross-entropy, Adam."""

from .debug import dump_tensor, load_tensor
from .gradcheck import grad_check
from .layers import (
    Conv2d,
    Dense,
    DepthwiseConv2d,
    Dropout,
    Flatten,
    GlobalAvgPool,
    Layer,
    MaxPool2,
    MaxPoolSame3,
    ReLU,
    SigmoidGate,
    conv2d,
    head_uniform,
)
from .losses import LossValue, softmax, softmax_cross_entropy
from .optim import Adam

__all__ = [
    "Adam",
    "Conv2d",
    "Dense",
    "DepthwiseConv2d",
    "Dropout",
    "Flatten",
    "GlobalAvgPool",
    "Layer",
    "LossValue",
    "MaxPool2",
    "MaxPoolSame3",
    "ReLU",
    "SigmoidGate",
    "conv2d",
    "dump_tensor",
    "grad_check",
    "head_uniform",
    "load_tensor",
    "softmax",
    "softmax_cross_entropy",
]
