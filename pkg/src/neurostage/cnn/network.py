"""The slice-classification network and its weight-file format.

Architecture (input 248x248x1): two 5x5 convolutions (2 then 4 channels,
stride 1, pad 1, ReLU then batch norm each), 2x2 max pool, flatten to
59536, a 32-unit ReLU linear layer with dropout 0.3 and batch norm, a
final linear head (ReLU, batch norm) and softmax.  The detection variant
is the same stack with a 2-wide head.

Weight files are binary: magic ``NSPCNN 1``, one text record per layer
followed by little-endian float32 parameter blobs (batch-norm records
include the running statistics); round trips are bit-exact.
"""

from __future__ import annotations

import numpy as np

from ..imaging import GrayImage
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

WEIGHTS_MAGIC = b"NSPCNN 1"
INPUT_SIZE = 248
HIDDEN_UNITS = 32
DROPOUT_RATE = 0.3


class WeightsFormatError(ValueError):
    """Raised for unreadable or version-mismatched weight files."""


class LayerStack:
    """Ordered layers ending in softmax, with stepwise forward/backward."""

    def __init__(self, layers):
        self.layers = layers

    def forward(self, x, mode="eval", rng=None, trace=None):
        """Full forward pass to class probabilities.

        ``trace``, if given, collects (layer_tag, output_shape) tuples for
        every layer, letting callers verify each intermediate.
        """
        for layer in self.layers:
            x = layer.forward(x, mode=mode, rng=rng)
            if trace is not None:
                trace.append((layer.tag, tuple(x.shape)))
        return x

    def forward_logits(self, x, mode="eval", rng=None):
        """Forward pass stopping just before the softmax layer."""
        for layer in self.layers[:-1]:
            x = layer.forward(x, mode=mode, rng=rng)
        return x

    def backward_from_logits(self, dz):
        """Backpropagate a gradient injected at the softmax input."""
        for layer in reversed(self.layers[:-1]):
            dz = layer.backward(dz)
        return dz

    def parameters(self):
        for layer in self.layers:
            for name in layer.params:
                yield layer, name

    @property
    def n_classes(self):
        for layer in reversed(self.layers):
            if isinstance(layer, Linear):
                return layer.out_features
        raise ValueError("stack has no linear head")


def build_network(n_classes=3, dtype=np.float32, seed=0) -> LayerStack:
    """Build and initialize the stack; ``n_classes`` 3 for staging, 2 for
    detection."""
    layers = [
        Conv2d(1, 2, kernel=5, stride=1, pad=1, dtype=dtype),
        ReLU(dtype=dtype),
        BatchNorm2d(2, dtype=dtype),
        Conv2d(2, 4, kernel=5, stride=1, pad=1, dtype=dtype),
        ReLU(dtype=dtype),
        BatchNorm2d(4, dtype=dtype),
        MaxPool2x2(dtype=dtype),
        Flatten(dtype=dtype),
        Linear(59536, HIDDEN_UNITS, dtype=dtype),
        ReLU(dtype=dtype),
        Dropout(DROPOUT_RATE, dtype=dtype),
        BatchNorm1d(HIDDEN_UNITS, dtype=dtype),
        Linear(HIDDEN_UNITS, n_classes, dtype=dtype),
        ReLU(dtype=dtype),
        BatchNorm1d(n_classes, dtype=dtype),
        Softmax(dtype=dtype),
    ]
    rng = np.random.default_rng(seed)
    for layer in layers:
        layer.init(rng)
    return LayerStack(layers)


def classes_for_head(n_classes):
    """Label tokens implied by the head width."""
    if n_classes == 3:
        return ("non", "verymild", "mild")
    if n_classes == 2:
        return ("non", "dem")
    raise ValueError(f"unsupported head width {n_classes}")


def image_to_input(image: GrayImage):
    """Scale one slice to the network input tensor (1,1,H,W) in [0,1]."""
    return (image.pixels.astype(np.float32) / np.float32(255.0))[None, None]


def batch_to_input(images):
    return np.concatenate([image_to_input(img) for img in images], axis=0)


def predict_slice(net: LayerStack, image: GrayImage):
    """Eval-mode prediction for one slice.

    Returns (class_index, confidence) where confidence is the largest
    softmax probability; argmax ties resolve to the lowest class index.
    Callers resize slices to the network input size beforehand.
    """
    if image.height != INPUT_SIZE or image.width != INPUT_SIZE:
        raise ValueError(
            f"expected a {INPUT_SIZE}x{INPUT_SIZE} slice, got {image.width}x{image.height}"
        )
    probs = net.forward(image_to_input(image), mode="eval")[0]
    idx = int(np.argmax(probs))
    return idx, float(probs[idx])


def _f32_bytes(arr):
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_network(net: LayerStack, path) -> None:
    """Serialize layer structure, parameters and running statistics."""
    chunks = [WEIGHTS_MAGIC + b"\n", f"layers {len(net.layers)}\n".encode("ascii")]
    for layer in net.layers:
        if isinstance(layer, Conv2d):
            chunks.append(
                f"conv {layer.in_ch} {layer.out_ch} {layer.kernel} "
                f"{layer.stride} {layer.pad}\n".encode("ascii")
            )
            chunks.append(_f32_bytes(layer.params["w"]))
            chunks.append(_f32_bytes(layer.params["b"]))
        elif isinstance(layer, (BatchNorm2d, BatchNorm1d)):
            chunks.append(
                f"{layer.tag} {layer.num} {layer.eps!r} {layer.momentum!r}\n".encode("ascii")
            )
            chunks.append(_f32_bytes(layer.params["gamma"]))
            chunks.append(_f32_bytes(layer.params["beta"]))
            chunks.append(_f32_bytes(layer.running_mean))
            chunks.append(_f32_bytes(layer.running_var))
        elif isinstance(layer, Linear):
            chunks.append(f"linear {layer.in_features} {layer.out_features}\n".encode("ascii"))
            chunks.append(_f32_bytes(layer.params["w"]))
            chunks.append(_f32_bytes(layer.params["b"]))
        elif isinstance(layer, Dropout):
            chunks.append(f"dropout {layer.rate!r}\n".encode("ascii"))
        elif isinstance(layer, (ReLU, MaxPool2x2, Flatten, Softmax)):
            chunks.append(f"{layer.tag}\n".encode("ascii"))
        else:
            raise ValueError(f"cannot serialize layer {layer!r}")
    with open(path, "wb") as fh:
        fh.writelines(chunks)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def line(self):
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            raise WeightsFormatError(f"{self.path}: truncated file")
        out = self.data[self.pos : end].decode("ascii")
        self.pos = end + 1
        return out

    def floats(self, count):
        nbytes = 4 * count
        if self.pos + nbytes > len(self.data):
            raise WeightsFormatError(f"{self.path}: truncated parameter blob")
        arr = np.frombuffer(self.data[self.pos : self.pos + nbytes], dtype="<f4").copy()
        self.pos += nbytes
        return arr


def load_network(path) -> LayerStack:
    """Load a weight file written by :func:`save_network`."""
    with open(path, "rb") as fh:
        data = fh.read()
    rd = _Reader(data, path)
    if rd.line() != WEIGHTS_MAGIC.decode("ascii"):
        raise WeightsFormatError(f"{path}: bad magic; expected {WEIGHTS_MAGIC.decode('ascii')!r}")
    header = rd.line().split()
    if len(header) != 2 or header[0] != "layers":
        raise WeightsFormatError(f"{path}: malformed layer count")
    layers = []
    for _ in range(int(header[1])):
        fields = rd.line().split()
        kind = fields[0]
        if kind == "conv":
            in_ch, out_ch, k, stride, pad = (int(f) for f in fields[1:6])
            layer = Conv2d(in_ch, out_ch, kernel=k, stride=stride, pad=pad)
            layer.params["w"] = rd.floats(out_ch * in_ch * k * k).reshape(out_ch, in_ch, k, k)
            layer.params["b"] = rd.floats(out_ch)
        elif kind in ("batchnorm2d", "batchnorm1d"):
            num = int(fields[1])
            eps, momentum = float(fields[2]), float(fields[3])
            cls = BatchNorm2d if kind == "batchnorm2d" else BatchNorm1d
            layer = cls(num, eps=eps, momentum=momentum)
            layer.params["gamma"] = rd.floats(num)
            layer.params["beta"] = rd.floats(num)
            layer.running_mean = rd.floats(num)
            layer.running_var = rd.floats(num)
        elif kind == "linear":
            in_f, out_f = int(fields[1]), int(fields[2])
            layer = Linear(in_f, out_f)
            layer.params["w"] = rd.floats(out_f * in_f).reshape(out_f, in_f)
            layer.params["b"] = rd.floats(out_f)
        elif kind == "dropout":
            layer = Dropout(float(fields[1]))
        elif kind == "relu":
            layer = ReLU()
        elif kind == "maxpool2":
            layer = MaxPool2x2()
        elif kind == "flatten":
            layer = Flatten()
        elif kind == "softmax":
            layer = Softmax()
        else:
            raise WeightsFormatError(f"{path}: unknown layer kind {kind!r}")
        layers.append(layer)
    return LayerStack(layers)
