"""Model and dataset serialization.

Models persist as a JSON manifest plus a little-endian raw weight blob.
The manifest pins format_version, the input shape, the parameter dtype,
the layer chain, and the blob's relative path; parameters are laid out
per layer in chain order, weights then biases, conv weights as
(out_channels, in_channels, kh, kw) and dense weights as (out, in).

Datasets load from IDX files (big-endian, magic 0x00000803 for image
tensors and 0x00000801 for label vectors, pixels scaled by 1/255) or
from raw-tensor files: a JSON sidecar {shape, dtype, layout, data}
next to a little-endian blob.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import engine
from .errors import (
    BlobLengthError,
    ConfigurationError,
    DataFormatError,
    FormatVersionError,
    ModelFormatError,
    UnknownLayerError,
    UnsupportedDtypeError,
)

FORMAT_VERSION = 1
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}
_RAW_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8"), "int32": np.dtype("<i4")}


@dataclass
class Dataset:
    """Images in [0, 1] with integer labels below class_count."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels)
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataFormatError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.labels.ndim != 1:
            raise DataFormatError("labels must be a flat vector")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DataFormatError("image values must lie in [0, 1]")
        if self.labels.size:
            lo, hi = int(self.labels.min()), int(self.labels.max())
            if lo < 0 or hi >= self.class_count:
                raise DataFormatError(
                    f"labels span [{lo}, {hi}] outside class count {self.class_count}"
                )

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def subset(self, indices) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices], self.class_count)


# ---------------------------------------------------------------------------
# model manifest + weight blob
# ---------------------------------------------------------------------------


def _layer_to_manifest(layer) -> dict:
    if isinstance(layer, engine.Conv2D):
        return {
            "kind": layer.kind,
            "filters": layer.filters,
            "kernel": list(layer.kernel),
            "stride": list(layer.stride),
            "padding": layer.padding,
        }
    if isinstance(layer, engine.MaxPool2D):
        return {"kind": layer.kind, "kernel": list(layer.kernel), "stride": list(layer.stride)}
    if isinstance(layer, engine.Dense):
        return {"kind": layer.kind, "units": layer.units}
    return {"kind": layer.kind}


def _layer_from_manifest(entry: dict):
    kind = entry.get("kind")
    if kind == "conv2d":
        return engine.Conv2D(
            filters=int(entry["filters"]),
            kernel=tuple(entry["kernel"]),
            stride=tuple(entry.get("stride", (1, 1))),
            padding=entry.get("padding", "valid"),
        )
    if kind == "maxpool2d":
        return engine.MaxPool2D(kernel=tuple(entry["kernel"]), stride=tuple(entry["stride"]))
    if kind == "dense":
        return engine.Dense(units=int(entry["units"]))
    if kind == "relu":
        return engine.ReLU()
    if kind == "flatten":
        return engine.Flatten()
    if kind == "global_average_pool":
        return engine.GlobalAveragePool()
    if kind == "softmax":
        return engine.Softmax()
    raise UnknownLayerError(f"unknown layer kind {kind!r}")


def save_model(model: engine.Model, path) -> None:
    """Write ``path`` (JSON manifest) and a sibling ``.bin`` weight blob."""
    path = Path(path)
    blob_name = path.stem + ".bin"
    dtypes = {
        str(arr.dtype) for p in model.params if p is not None for arr in p.values()
    }
    if len(dtypes) > 1:
        raise ModelFormatError(f"mixed parameter dtypes {sorted(dtypes)}")
    dtype_name = dtypes.pop() if dtypes else "float32"
    if dtype_name not in _DTYPES:
        raise UnsupportedDtypeError(f"cannot serialize dtype {dtype_name!r}")
    manifest = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(model.input_shape),
        "dtype": dtype_name,
        "layers": [_layer_to_manifest(l) for l in model.layers],
        "weight_blob": blob_name,
    }
    chunks = []
    for p in model.params:
        if p is None:
            continue
        chunks.append(np.ascontiguousarray(p["w"], dtype=_DTYPES[dtype_name]).tobytes())
        chunks.append(np.ascontiguousarray(p["b"], dtype=_DTYPES[dtype_name]).tobytes())
    (path.parent / blob_name).write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def load_model(path) -> engine.Model:
    """Load a manifest + blob pair saved by :func:`save_model`."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"cannot read manifest {path}: {e}") from e
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"manifest format_version {version!r} is not supported (expected {FORMAT_VERSION})"
        )
    dtype_name = manifest.get("dtype", "float32")
    if dtype_name not in _DTYPES:
        raise UnsupportedDtypeError(f"unsupported parameter dtype {dtype_name!r}")
    dtype = _DTYPES[dtype_name]
    layers = [_layer_from_manifest(e) for e in manifest.get("layers", [])]
    input_shape = tuple(manifest.get("input_shape", ()))
    skeleton = engine.build_model(input_shape, layers)

    blob_path = path.parent / manifest["weight_blob"]
    try:
        blob = blob_path.read_bytes()
    except OSError as e:
        raise ModelFormatError(f"cannot read weight blob {blob_path}: {e}") from e
    expected = skeleton.parameter_count() * dtype.itemsize
    if len(blob) != expected:
        raise BlobLengthError(
            f"weight blob holds {len(blob)} bytes, layer chain needs {expected}"
        )
    params = []
    offset = 0
    for zero in skeleton.params:
        if zero is None:
            params.append(None)
            continue
        entry = {}
        for key in ("w", "b"):
            size = zero[key].size * dtype.itemsize
            arr = np.frombuffer(blob, dtype=dtype, count=zero[key].size, offset=offset)
            entry[key] = arr.reshape(zero[key].shape).copy()
            offset += size
        params.append(entry)
    return skeleton.with_params(params)


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------


def load_idx(path) -> np.ndarray:
    """Parse an IDX file into a uint8 array: (N, H, W) images or (N,) labels."""
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise DataFormatError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">l", data[:4])
    if magic == IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise DataFormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise DataFormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}l", data[4:header])
    count = int(np.prod(dims))
    if len(data) != header + count:
        raise DataFormatError(
            f"{path}: IDX payload holds {len(data) - header} bytes, dims {dims} need {count}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims).copy()


def save_idx_images(path, images) -> None:
    """Write a uint8 (N, H, W) array as an IDX image file."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise DataFormatError(f"IDX images must be (N, H, W), got {images.shape}")
    header = struct.pack(">4l", IDX_IMAGES_MAGIC, *images.shape)
    Path(path).write_bytes(header + images.tobytes())


def save_idx_labels(path, labels) -> None:
    """Write a uint8 (N,) array as an IDX label file."""
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if labels.ndim != 1:
        raise DataFormatError(f"IDX labels must be (N,), got {labels.shape}")
    header = struct.pack(">2l", IDX_LABELS_MAGIC, labels.shape[0])
    Path(path).write_bytes(header + labels.tobytes())


# ---------------------------------------------------------------------------
# raw tensors
# ---------------------------------------------------------------------------


def save_raw_tensor(path, array, layout: str | None = None) -> None:
    """Write a tensor as a JSON sidecar plus a little-endian blob.

    ``path`` names the sidecar; the blob lands next to it with a .bin
    suffix.  Layout defaults to NHWC for 4-d arrays and N for vectors.
    """
    path = Path(path)
    array = np.asarray(array)
    if layout is None:
        layout = {4: "NHWC", 1: "N"}.get(array.ndim)
        if layout is None:
            raise DataFormatError(f"no default layout for a {array.ndim}-d tensor")
    dtype_name = str(array.dtype)
    if dtype_name not in _RAW_DTYPES:
        raise UnsupportedDtypeError(f"cannot serialize dtype {dtype_name!r}")
    blob_name = path.stem + ".bin"
    sidecar = {
        "shape": list(array.shape),
        "dtype": dtype_name,
        "layout": layout,
        "data": blob_name,
    }
    (path.parent / blob_name).write_bytes(
        np.ascontiguousarray(array, dtype=_RAW_DTYPES[dtype_name]).tobytes()
    )
    path.write_text(json.dumps(sidecar, indent=2) + "\n")


def load_raw_tensor(path) -> np.ndarray:
    """Load a tensor written by :func:`save_raw_tensor`."""
    path = Path(path)
    try:
        sidecar = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataFormatError(f"cannot read raw-tensor sidecar {path}: {e}") from e
    dtype_name = sidecar.get("dtype")
    if dtype_name not in _RAW_DTYPES:
        raise UnsupportedDtypeError(f"unsupported raw-tensor dtype {dtype_name!r}")
    dtype = _RAW_DTYPES[dtype_name]
    shape = tuple(int(s) for s in sidecar.get("shape", ()))
    layout = sidecar.get("layout")
    if layout not in ("NHWC", "N"):
        raise DataFormatError(f"unsupported raw-tensor layout {layout!r}")
    if (layout == "NHWC") != (len(shape) == 4):
        raise DataFormatError(f"layout {layout!r} does not match shape {shape}")
    blob_path = path.parent / sidecar["data"]
    blob = blob_path.read_bytes()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(blob) != expected:
        raise DataFormatError(
            f"{blob_path}: blob holds {len(blob)} bytes, shape {shape} needs {expected}"
        )
    return np.frombuffer(blob, dtype=dtype).reshape(shape).copy()


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def load_dataset(images_path, labels_path, fmt: str = "idx", class_count: int | None = None) -> Dataset:
    """Load an image/label pair as a Dataset.

    IDX images become float32 (N, H, W, 1) scaled by 1/255; raw-tensor
    images must already be NHWC floats in [0, 1].  ``class_count``
    defaults to max(label) + 1.
    """
    if fmt == "idx":
        raw = load_idx(images_path)
        if raw.ndim != 3:
            raise DataFormatError(f"{images_path}: expected an IDX image tensor")
        labels = load_idx(labels_path)
        if labels.ndim != 1:
            raise DataFormatError(f"{labels_path}: expected an IDX label vector")
        images = (raw.astype(np.float32) / 255.0)[..., None]
    elif fmt == "raw":
        images = load_raw_tensor(images_path)
        if images.ndim != 4:
            raise DataFormatError(f"{images_path}: expected an NHWC tensor")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise DataFormatError(f"{images_path}: image values must lie in [0, 1]")
        images = images.astype(np.float32)
        labels = load_raw_tensor(labels_path)
        if labels.ndim != 1:
            raise DataFormatError(f"{labels_path}: expected a label vector")
    else:
        raise ConfigurationError(f"unknown dataset format {fmt!r}")
    labels = labels.astype(np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 0
    return Dataset(images=images, labels=labels, class_count=class_count)
