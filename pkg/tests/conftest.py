"""Shared test helpers: random model generation, kink-free inputs, FD oracles."""

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from sae import engine


def randomize_params(model, rng, scale=1.0):
    """Gaussian parameters scaled by fan-in; returns a new model."""
    params = []
    for zero in model.params:
        if zero is None:
            params.append(None)
            continue
        fan_in = int(np.prod(zero["w"].shape[1:]))
        params.append(
            {
                "w": rng.normal(0.0, scale / np.sqrt(fan_in), zero["w"].shape).astype(np.float32),
                "b": rng.normal(0.0, 0.1 * scale, zero["b"].shape).astype(np.float32),
            }
        )
    return model.with_params(params)


def random_model(rng, class_count=None):
    """A small random architecture: at most 5 layers, 64 inputs, 5 classes."""
    k = int(class_count if class_count is not None else rng.integers(2, 6))
    kind = int(rng.integers(0, 5))
    if kind == 0:
        n_in = int(rng.integers(4, 65))
        hidden = int(rng.integers(3, 17))
        shape = (n_in,)
        layers = [engine.Dense(hidden), engine.ReLU(), engine.Dense(k), engine.Softmax()]
    elif kind == 1:
        side = int(rng.integers(4, 8))
        shape = (side, side, 1)
        layers = [
            engine.Conv2D(int(rng.integers(2, 5)), (2, 2)),
            engine.ReLU(),
            engine.Flatten(),
            engine.Dense(k),
            engine.Softmax(),
        ]
    elif kind == 2:
        side = int(rng.integers(5, 8))
        shape = (side, side, 1)
        layers = [
            engine.Conv2D(int(rng.integers(2, 5)), (2, 2)),
            engine.ReLU(),
            engine.MaxPool2D((2, 2), (2, 2)),
            engine.Flatten(),
            engine.Dense(k),
            engine.Softmax(),
        ]
    elif kind == 3:
        side = int(rng.integers(4, 7))
        shape = (side, side, 2) if side * side * 2 <= 64 else (side, side, 1)
        layers = [
            engine.Conv2D(int(rng.integers(2, 5)), (3, 3), padding="same"),
            engine.ReLU(),
            engine.Flatten(),
            engine.Dense(k),
            engine.Softmax(),
        ]
    else:
        side = int(rng.integers(4, 8))
        shape = (side, side, 1)
        layers = [
            engine.Conv2D(k, (2, 2)),
            engine.ReLU(),
            engine.GlobalAveragePool(),
            engine.Softmax(),
        ]
    model = engine.build_model(shape, layers)
    return randomize_params(model, rng)


def kink_margin(model, x):
    """Smallest distance to a ReLU sign change or a maxpool argmax change."""
    act = engine._as_batch(model, x)
    margin = np.inf
    for layer, p in zip(model.layers[:-1], model.params[:-1]):
        if isinstance(layer, engine.ReLU):
            margin = min(margin, float(np.abs(act).min()))
        if isinstance(layer, engine.MaxPool2D):
            kh, kw = layer.kernel
            sh, sw = layer.stride
            wins = sliding_window_view(act, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
            flat = wins.reshape(wins.shape[:4] + (kh * kw,))
            if flat.shape[-1] > 1:
                top2 = np.sort(flat, axis=-1)[..., -2:]
                margin = min(margin, float((top2[..., 1] - top2[..., 0]).min()))
        act, _ = engine._layer_forward(layer, p, act)
    return margin


def kink_free_input(model, rng, margin=0.02, tries=200):
    """Sample an input whose forward pass stays away from ReLU/maxpool kinks."""
    for _ in range(tries):
        x = rng.uniform(0.05, 0.95, model.input_shape)
        if kink_margin(model, x) > margin:
            return x
    return None


def fd_jacobian(model, x, h=1e-3):
    """Central-difference logits Jacobian, the oracle for the reverse-mode path."""
    flat = np.asarray(x, dtype=np.float64).ravel()
    k = model.class_count
    jac = np.empty((k, flat.size))
    for i in range(flat.size):
        hi = flat.copy()
        lo = flat.copy()
        hi[i] += h
        lo[i] -= h
        jac[:, i] = (engine.forward(model, hi)[0] - engine.forward(model, lo)[0]) / (2.0 * h)
    return jac


def fd_log_prob_gradient(model, x, t, h=1e-3):
    flat = np.asarray(x, dtype=np.float64).ravel()
    g = np.empty(flat.size)
    for i in range(flat.size):
        hi = flat.copy()
        lo = flat.copy()
        hi[i] += h
        lo[i] -= h
        g[i] = (
            np.log(engine.forward(model, hi)[1][t]) - np.log(engine.forward(model, lo)[1][t])
        ) / (2.0 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_model(rng):
    """A fixed small dense model on 6 features, 3 classes."""
    model = engine.build_model(
        (6,), [engine.Dense(5), engine.ReLU(), engine.Dense(3), engine.Softmax()]
    )
    return randomize_params(model, rng)
