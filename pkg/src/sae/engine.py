"""Minimal feed-forward network engine with exact reverse-mode Jacobians.

Tensors are plain numpy arrays, channels-last (H, W, C), flattened
row-major when a layer or an attack needs a feature vector.  Stored
parameters default to float32; every forward/backward computation runs
in float64 so finite-difference checks hold to tight tolerances.

The Jacobian of the logits with respect to the input is computed as K
vector-Jacobian products, one per class.  The K cotangent rows share a
single cached forward pass and ride a leading batch axis through the
backward sweep, which is arithmetically identical to K independent
sweeps because every layer's backward map is linear in the cotangent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError

DEFAULT_DTYPE = np.float32


def _pair(value) -> tuple[int, int]:
    if isinstance(value, int):
        return (value, value)
    pair = tuple(int(v) for v in value)
    if len(pair) != 2:
        raise ConfigurationError(f"expected an int or a pair, got {value!r}")
    return pair


@dataclass(frozen=True)
class Conv2D:
    """2-D convolution, stride 1 and valid padding unless stated otherwise."""

    filters: int
    kernel: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    padding: str = "valid"  # "valid" or "same"

    kind = "conv2d"

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        if self.filters < 1:
            raise ConfigurationError("conv2d needs at least one filter")
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ConfigurationError("conv2d kernel and stride must be positive")
        if self.padding not in ("valid", "same"):
            raise ConfigurationError(f"unknown padding {self.padding!r}")


@dataclass(frozen=True)
class MaxPool2D:
    """Max pooling; gradient ties route to the first maximal element in row-major order."""

    kernel: tuple[int, int]
    stride: tuple[int, int]

    kind = "maxpool2d"

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ConfigurationError("maxpool2d kernel and stride must be positive")


@dataclass(frozen=True)
class Dense:
    """Fully connected layer; weight layout is (units_out, units_in)."""

    units: int

    kind = "dense"

    def __post_init__(self):
        if self.units < 1:
            raise ConfigurationError("dense needs at least one unit")


@dataclass(frozen=True)
class ReLU:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""

    kind = "relu"


@dataclass(frozen=True)
class Flatten:
    """Row-major flatten of an (H, W, C) activation into a feature vector."""

    kind = "flatten"


@dataclass(frozen=True)
class GlobalAveragePool:
    """Mean over the full spatial extent, (H, W, C) -> (C,)."""

    kind = "global_average_pool"


@dataclass(frozen=True)
class Softmax:
    """Terminal softmax; the logits are the activations feeding this layer."""

    kind = "softmax"


LAYER_KINDS = {
    cls.kind: cls
    for cls in (Conv2D, MaxPool2D, Dense, ReLU, Flatten, GlobalAveragePool, Softmax)
}


def _conv_out(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)  # ceil division
    if size < kernel:
        raise ConfigurationError(
            f"spatial size {size} is smaller than the {kernel}-wide valid kernel"
        )
    return (size - kernel) // stride + 1


def _same_pad(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _infer_shape(layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(layer, Conv2D):
        if len(shape) != 3:
            raise ConfigurationError(f"conv2d expects an (H, W, C) input, got {shape}")
        h, w, _ = shape
        kh, kw = layer.kernel
        sh, sw = layer.stride
        return (
            _conv_out(h, kh, sh, layer.padding),
            _conv_out(w, kw, sw, layer.padding),
            layer.filters,
        )
    if isinstance(layer, MaxPool2D):
        if len(shape) != 3:
            raise ConfigurationError(f"maxpool2d expects an (H, W, C) input, got {shape}")
        h, w, c = shape
        kh, kw = layer.kernel
        sh, sw = layer.stride
        if h < kh or w < kw:
            raise ConfigurationError(f"pool window {layer.kernel} exceeds input {shape}")
        return ((h - kh) // sh + 1, (w - kw) // sw + 1, c)
    if isinstance(layer, Dense):
        if len(shape) != 1:
            raise ConfigurationError(f"dense expects a flat input, got {shape}")
        return (layer.units,)
    if isinstance(layer, ReLU):
        return shape
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, GlobalAveragePool):
        if len(shape) != 3:
            raise ConfigurationError(f"global pool expects an (H, W, C) input, got {shape}")
        return (shape[2],)
    if isinstance(layer, Softmax):
        if len(shape) != 1:
            raise ConfigurationError(f"softmax expects a flat input, got {shape}")
        return shape
    raise ConfigurationError(f"unknown layer {layer!r}")


def _zero_params(layer, in_shape: tuple[int, ...]):
    if isinstance(layer, Conv2D):
        kh, kw = layer.kernel
        cin = in_shape[2]
        return {
            "w": np.zeros((layer.filters, cin, kh, kw), dtype=DEFAULT_DTYPE),
            "b": np.zeros(layer.filters, dtype=DEFAULT_DTYPE),
        }
    if isinstance(layer, Dense):
        return {
            "w": np.zeros((layer.units, in_shape[0]), dtype=DEFAULT_DTYPE),
            "b": np.zeros(layer.units, dtype=DEFAULT_DTYPE),
        }
    return None


class Model:
    """An immutable layer chain with parameters.

    Construct through :func:`build_model`; ``with_params`` returns a new
    instance sharing the validated structure.  Forward and Jacobian
    calls allocate their own scratch, so a single instance is safe to
    share across threads.
    """

    def __init__(self, input_shape, layers, params, layer_shapes):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = tuple(layers)
        self.params = tuple(params)
        self.layer_shapes = tuple(layer_shapes)
        self.feature_count = int(np.prod(self.input_shape))
        self.class_count = int(layer_shapes[-1][0])
        for p in self.params:
            if p is not None:
                for arr in p.values():
                    arr.setflags(write=False)

    def with_params(self, params) -> "Model":
        if len(params) != len(self.layers):
            raise ConfigurationError("parameter list does not match the layer chain")
        return Model(self.input_shape, self.layers, params, self.layer_shapes)

    def parameter_count(self) -> int:
        return sum(
            arr.size for p in self.params if p is not None for arr in p.values()
        )

    def parameterized_indices(self) -> list[int]:
        return [i for i, p in enumerate(self.params) if p is not None]


def build_model(input_shape, layers, params=None) -> Model:
    """Validate a layer chain against an input shape and return a Model.

    The chain must end in a single Softmax over at least two classes and
    contain at least one parameterized layer.  ``params`` defaults to
    zeros (uniform output probabilities), which keeps a freshly built
    architecture usable before training.
    """
    input_shape = tuple(int(s) for s in input_shape)
    if len(input_shape) not in (1, 3) or any(s < 1 for s in input_shape):
        raise ConfigurationError(f"unsupported input shape {input_shape}")
    layers = tuple(layers)
    if not layers or not isinstance(layers[-1], Softmax):
        raise ConfigurationError("the final layer must be softmax")
    if any(isinstance(l, Softmax) for l in layers[:-1]):
        raise ConfigurationError("softmax may only appear as the final layer")

    shapes = []
    shape = input_shape
    for layer in layers:
        shape = _infer_shape(layer, shape)
        shapes.append(shape)
    if shapes[-1][0] < 2:
        raise ConfigurationError("a classifier needs at least two classes")

    if params is None:
        params = []
        shape = input_shape
        for layer in layers:
            params.append(_zero_params(layer, shape))
            shape = _infer_shape(layer, shape)
    else:
        params = list(params)
        if len(params) != len(layers):
            raise ConfigurationError("parameter list does not match the layer chain")

    if all(p is None for p in params):
        raise ConfigurationError("the layer chain has no learnable parameters")
    return Model(input_shape, layers, params, shapes)


# ---------------------------------------------------------------------------
# forward / backward primitives
#
# Each forward returns (y, cache); each backward maps a cotangent with an
# arbitrary leading batch axis M back through the layer.  Caches are built
# for a forward batch of size N and broadcast when M != N (the Jacobian
# path runs the forward with N=1 and the backward with M=K rows).
# ---------------------------------------------------------------------------


def _conv_forward(layer: Conv2D, p, x):
    kh, kw = layer.kernel
    sh, sw = layer.stride
    pad = None
    if layer.padding == "same":
        pt, pb = _same_pad(x.shape[1], kh, sh)
        pl, pr = _same_pad(x.shape[2], kw, sw)
        pad = (pt, pb, pl, pr)
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    n, h, w, _ = x.shape
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    # windows: (N, OH, OW, C, kh, kw); flatten per-window in (C, kh, kw) order
    cols = windows.reshape(n, oh, ow, -1)
    wmat = np.asarray(p["w"], dtype=np.float64).transpose(1, 2, 3, 0).reshape(-1, layer.filters)
    y = cols @ wmat + np.asarray(p["b"], dtype=np.float64)
    cache = (cols, wmat, x.shape, pad)
    return y, cache


def _conv_backward(layer: Conv2D, p, cache, g, with_params):
    cols, wmat, x_shape, pad = cache
    kh, kw = layer.kernel
    sh, sw = layer.stride
    m = g.shape[0]
    _, h, w, c = x_shape
    oh, ow = g.shape[1], g.shape[2]
    gcols = g @ wmat.T
    gcols = gcols.reshape(m, oh, ow, c, kh, kw)
    gx = np.zeros((m, h, w, c))
    for i in range(kh):
        for j in range(kw):
            gx[:, i : i + sh * oh : sh, j : j + sw * ow : sw, :] += gcols[:, :, :, :, i, j]
    if pad is not None:
        pt, pb, pl, pr = pad
        gx = gx[:, pt : h - pb, pl : w - pr, :]
    grads = None
    if with_params:
        gw = cols.reshape(-1, cols.shape[-1]).T @ g.reshape(-1, layer.filters)
        gw = gw.reshape(c, kh, kw, layer.filters).transpose(3, 0, 1, 2)
        grads = {"w": gw, "b": g.sum(axis=(0, 1, 2))}
    return gx, grads


def _maxpool_forward(layer: MaxPool2D, p, x):
    kh, kw = layer.kernel
    sh, sw = layer.stride
    n, h, w, c = x.shape
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    oh, ow = windows.shape[1], windows.shape[2]
    flat_windows = windows.reshape(n, oh, ow, c, kh * kw)
    arg = flat_windows.argmax(axis=-1)  # first maximum, row-major within the window
    y = np.take_along_axis(flat_windows, arg[..., None], axis=-1)[..., 0]
    rows = arg // kw + np.arange(oh)[None, :, None, None] * sh
    cols = arg % kw + np.arange(ow)[None, None, :, None] * sw
    src = (rows * w + cols) * c + np.arange(c)[None, None, None, :]
    cache = (src.reshape(n, -1), (h, w, c))
    return y, cache


def _maxpool_backward(layer: MaxPool2D, p, cache, g, with_params):
    src, (h, w, c) = cache
    m = g.shape[0]
    if src.shape[0] == 1 and m != 1:
        src = np.broadcast_to(src, (m, src.shape[1]))
    gx = np.zeros((m, h * w * c))
    np.add.at(gx, (np.arange(m)[:, None], src), g.reshape(m, -1))
    return gx.reshape(m, h, w, c), None


def _dense_forward(layer: Dense, p, x):
    w = np.asarray(p["w"], dtype=np.float64)
    y = x @ w.T + np.asarray(p["b"], dtype=np.float64)
    return y, (x, w)


def _dense_backward(layer: Dense, p, cache, g, with_params):
    x, w = cache
    gx = g @ w
    grads = None
    if with_params:
        grads = {"w": g.T @ x, "b": g.sum(axis=0)}
    return gx, grads


def _layer_forward(layer, p, x):
    if isinstance(layer, Conv2D):
        return _conv_forward(layer, p, x)
    if isinstance(layer, MaxPool2D):
        return _maxpool_forward(layer, p, x)
    if isinstance(layer, Dense):
        return _dense_forward(layer, p, x)
    if isinstance(layer, ReLU):
        mask = x > 0
        return np.where(mask, x, 0.0), mask
    if isinstance(layer, Flatten):
        return x.reshape(x.shape[0], -1), x.shape
    if isinstance(layer, GlobalAveragePool):
        return x.mean(axis=(1, 2)), x.shape
    raise ConfigurationError(f"no forward rule for {layer!r}")


def _layer_backward(layer, p, cache, g, with_params=False):
    if isinstance(layer, Conv2D):
        return _conv_backward(layer, p, cache, g, with_params)
    if isinstance(layer, MaxPool2D):
        return _maxpool_backward(layer, p, cache, g, with_params)
    if isinstance(layer, Dense):
        return _dense_backward(layer, p, cache, g, with_params)
    if isinstance(layer, ReLU):
        return np.where(cache, g, 0.0), None
    if isinstance(layer, Flatten):
        return g.reshape((g.shape[0],) + cache[1:]), None
    if isinstance(layer, GlobalAveragePool):
        _, h, w, _ = cache
        return np.broadcast_to(g[:, None, None, :] / (h * w), (g.shape[0], h, w, g.shape[1])).copy(), None
    raise ConfigurationError(f"no backward rule for {layer!r}")


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(model: Model, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == model.input_shape:
        return x.reshape((1,) + model.input_shape)
    if x.shape == (model.feature_count,):
        return x.reshape((1,) + model.input_shape)
    raise ConfigurationError(
        f"input shape {x.shape} does not match model input {model.input_shape}"
    )


def _forward_trace(model: Model, xb):
    """Run the chain on a batch; returns (logits, probs, caches)."""
    caches = []
    act = xb
    for layer, p in zip(model.layers[:-1], model.params[:-1]):
        act, cache = _layer_forward(layer, p, act)
        caches.append(cache)
    probs = _softmax(act)
    return act, probs, caches


def _backward_input(model: Model, caches, g):
    """Propagate cotangent rows g (M, K) at the logits back to the input."""
    for layer, p, cache in zip(
        reversed(model.layers[:-1]), reversed(model.params[:-1]), reversed(caches)
    ):
        g, _ = _layer_backward(layer, p, cache, g)
    return g.reshape(g.shape[0], -1)


def forward_batch(model: Model, xb):
    """Forward a batch of inputs; returns (logits, probs), each (N, K)."""
    xb = np.asarray(xb, dtype=np.float64)
    if xb.shape[1:] != model.input_shape:
        raise ConfigurationError(
            f"batch shape {xb.shape} does not match model input {model.input_shape}"
        )
    logits, probs, _ = _forward_trace(model, xb)
    return logits, probs


def forward(model: Model, x):
    """Forward a single sample; returns (logits, probs), each (K,)."""
    logits, probs, _ = _forward_trace(model, _as_batch(model, x))
    return logits[0], probs[0]


def predict(model: Model, x) -> int:
    logits, _, _ = _forward_trace(model, _as_batch(model, x))
    return int(np.argmax(logits[0]))


def predict_batch(model: Model, xb):
    logits, _ = forward_batch(model, xb)
    return logits.argmax(axis=1)


def forward_with_pullback(model: Model, x):
    """Forward a single sample and return (logits, probs, pullback).

    ``pullback(g)`` maps cotangent rows g of shape (M, K) at the logits
    to (M, n) input gradients, reusing the cached forward pass; rows are
    independent vector-Jacobian products.
    """
    xb = _as_batch(model, x)
    logits, probs, caches = _forward_trace(model, xb)

    def pullback(g):
        g = np.asarray(g, dtype=np.float64)
        if g.ndim != 2 or g.shape[1] != model.class_count:
            raise ConfigurationError(
                f"cotangent shape {g.shape} does not match (M, {model.class_count})"
            )
        return _backward_input(model, caches, g)

    return logits[0], probs[0], pullback


def forward_and_jacobian(model: Model, x):
    """Single forward plus the full (K, n) logits Jacobian at x."""
    logits, probs, pullback = forward_with_pullback(model, x)
    return logits, probs, pullback(np.eye(model.class_count))


def jacobian_logits(model: Model, x):
    """Exact Jacobian of the logits with respect to the flattened input, shape (K, n)."""
    return forward_and_jacobian(model, x)[2]


def jacobian_probs(model: Model, x):
    """Jacobian of the softmax probabilities: dF_k/dx = F_k (J_k - sum_j F_j J_j)."""
    _, probs, jac = forward_and_jacobian(model, x)
    return probs[:, None] * (jac - probs @ jac)


def log_prob_gradient(model: Model, x, t: int):
    """Gradient of log F_t(x), shape (n,).

    Uses the log-softmax identity: (1 - F_t) dZ_t/dx minus the
    probability-weighted sum of the other logit gradients.
    """
    _, probs, jac = forward_and_jacobian(model, x)
    if not 0 <= t < model.class_count:
        raise ConfigurationError(f"class {t} out of range for {model.class_count} classes")
    weighted = probs @ jac - probs[t] * jac[t]
    return (1.0 - probs[t]) * jac[t] - weighted


def class_logit_gradient(model: Model, x, t: int):
    """Gradient of a single logit Z_t(x), shape (n,); one VJP sweep."""
    if not 0 <= t < model.class_count:
        raise ConfigurationError(f"class {t} out of range for {model.class_count} classes")
    xb = _as_batch(model, x)
    _, _, caches = _forward_trace(model, xb)
    e = np.zeros((1, model.class_count))
    e[0, t] = 1.0
    return _backward_input(model, caches, e)[0]
