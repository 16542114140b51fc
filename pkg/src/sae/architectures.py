"""Named architecture builders.

Four small convolutional classifiers: a LeNet-5 style net for 28x28x1
inputs, an all-convolutional net and an AlexNet-style net for 32x32x3
inputs, and a compact substitute net for black-box runs.  Builders
return untrained models (zero parameters, uniform output).
"""

from __future__ import annotations

from .engine import (
    Conv2D,
    Dense,
    Flatten,
    GlobalAveragePool,
    MaxPool2D,
    Model,
    ReLU,
    Softmax,
    build_model,
)
from .errors import ConfigurationError


def _lenet5_like(class_count: int):
    return (28, 28, 1), [
        Conv2D(20, (5, 5)),
        ReLU(),
        MaxPool2D((2, 2), (2, 2)),
        Conv2D(50, (5, 5)),
        ReLU(),
        MaxPool2D((2, 2), (2, 2)),
        Flatten(),
        Dense(500),
        ReLU(),
        Dense(class_count),
        Softmax(),
    ]


def _allconv_cifar(class_count: int):
    # Same-padded convolutions: the valid-padding chain would shrink to
    # nothing before the last pooling stage.
    return (32, 32, 3), [
        Conv2D(64, (3, 3), padding="same"),
        ReLU(),
        Conv2D(128, (3, 3), padding="same"),
        ReLU(),
        MaxPool2D((2, 2), (2, 2)),
        Conv2D(128, (3, 3), padding="same"),
        ReLU(),
        Conv2D(256, (3, 3), padding="same"),
        ReLU(),
        MaxPool2D((2, 2), (2, 2)),
        Conv2D(256, (3, 3), padding="same"),
        ReLU(),
        Conv2D(512, (3, 3), padding="same"),
        ReLU(),
        MaxPool2D((2, 2), (2, 2)),
        Conv2D(class_count, (3, 3), padding="same"),
        GlobalAveragePool(),
        Softmax(),
    ]


def _alexnet_gtsrb(class_count: int):
    return (32, 32, 3), [
        Conv2D(64, (5, 5)),
        ReLU(),
        MaxPool2D((3, 3), (2, 2)),
        Conv2D(64, (5, 5)),
        ReLU(),
        MaxPool2D((3, 3), (2, 2)),
        Flatten(),
        Dense(384),
        ReLU(),
        Dense(192),
        ReLU(),
        Dense(class_count),
        Softmax(),
    ]


def _substitute_gtsrb(class_count: int):
    return (32, 32, 3), [
        Conv2D(16, (3, 3)),
        ReLU(),
        MaxPool2D((2, 2), (2, 2)),
        Conv2D(32, (3, 3)),
        ReLU(),
        MaxPool2D((2, 2), (2, 2)),
        Conv2D(64, (3, 3)),
        ReLU(),
        Flatten(),
        Dense(class_count),
        Softmax(),
    ]


ARCHITECTURES = {
    "lenet5-like": (_lenet5_like, 10),
    "allconv-cifar": (_allconv_cifar, 10),
    "alexnet-gtsrb": (_alexnet_gtsrb, 43),
    "substitute-gtsrb": (_substitute_gtsrb, 43),
}


def build_architecture(name: str, class_count: int | None = None) -> Model:
    """Build a named architecture; ``class_count`` overrides the default."""
    if name not in ARCHITECTURES:
        raise ConfigurationError(
            f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}"
        )
    builder, default_classes = ARCHITECTURES[name]
    k = class_count if class_count is not None else default_classes
    if k < 2:
        raise ConfigurationError("class_count must be at least 2")
    input_shape, layers = builder(k)
    return build_model(input_shape, layers)
