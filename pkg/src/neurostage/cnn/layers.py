"""Network layers with explicit forward/backward passes.

Weights and activations are float32 by default; construct layers with
``dtype=np.float64`` for gradient checking.  Heavy data movement
(im2col/col2im, pooling) goes through the kernel backends; all matmuls
stay in numpy so both backends give bit-identical results.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels


class Layer:
    """Base: parameter dict, gradient dict, forward/backward."""

    tag = "layer"

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def init(self, rng):
        """Draw initial parameters; layers without parameters are no-ops."""

    def forward(self, x, mode="eval", rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


def _fan_in_uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    """2D cross-correlation, zero padding; out_dim = in + 2*pad - kernel + 1."""

    tag = "conv"

    def __init__(self, in_ch, out_ch, kernel=5, stride=1, pad=1, dtype=np.float32):
        super().__init__(dtype)
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        self.params["w"] = np.zeros((out_ch, in_ch, kernel, kernel), dtype=dtype)
        self.params["b"] = np.zeros(out_ch, dtype=dtype)

    def init(self, rng):
        fan_in = self.in_ch * self.kernel * self.kernel
        self.params["w"] = _fan_in_uniform(
            rng, (self.out_ch, self.in_ch, self.kernel, self.kernel), fan_in, self.dtype
        )
        self.params["b"] = _fan_in_uniform(rng, (self.out_ch,), fan_in, self.dtype)

    def _out_dim(self, d):
        out = (d + 2 * self.pad - self.kernel) // self.stride + 1
        if out < 1:
            raise ValueError(f"convolution output dimension {out} is not positive")
        return out

    def forward(self, x, mode="eval", rng=None):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        n, c, h, w = x.shape
        if c != self.in_ch:
            raise ValueError(f"expected {self.in_ch} input channels, got {c}")
        oh, ow = self._out_dim(h), self._out_dim(w)
        cols = _kernels.im2col(x, self.kernel, self.kernel, self.stride, self.pad)
        w2d = self.params["w"].reshape(self.out_ch, -1)
        out = np.matmul(w2d, cols) + self.params["b"][:, None]
        self._cache = (x.shape, cols)
        return out.reshape(n, self.out_ch, oh, ow)

    def backward(self, dout):
        (n, c, h, w), cols = self._cache
        dout2d = np.ascontiguousarray(dout, dtype=self.dtype).reshape(n, self.out_ch, -1)
        w2d = self.params["w"].reshape(self.out_ch, -1)
        self.grads["w"] = np.matmul(dout2d, cols.transpose(0, 2, 1)).sum(axis=0).reshape(
            self.params["w"].shape
        )
        self.grads["b"] = dout2d.sum(axis=(0, 2))
        dcols = np.matmul(w2d.T, dout2d)
        return _kernels.col2im(
            np.ascontiguousarray(dcols), n, c, h, w, self.kernel, self.kernel, self.stride, self.pad
        )


class ReLU(Layer):
    tag = "relu"

    def forward(self, x, mode="eval", rng=None):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0).astype(self.dtype, copy=False)

    def backward(self, dout):
        return np.where(self._cache, dout, 0).astype(self.dtype, copy=False)


class _BatchNorm(Layer):
    """Shared batch-norm core; subclasses fix the reduction axes.

    Train mode normalizes by batch statistics (biased variance) and
    updates the running estimates (unbiased variance, torch-style
    ``running = (1-momentum)*running + momentum*batch``); eval mode uses
    the running estimates only.
    """

    def __init__(self, num, axes, bshape, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__(dtype)
        self.num = num
        self.axes = axes
        self.bshape = bshape
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(num, dtype=dtype)
        self.params["beta"] = np.zeros(num, dtype=dtype)
        self.running_mean = np.zeros(num, dtype=dtype)
        self.running_var = np.ones(num, dtype=dtype)

    def forward(self, x, mode="eval", rng=None):
        x = np.asarray(x, dtype=self.dtype)
        gamma = self.params["gamma"].reshape(self.bshape)
        beta = self.params["beta"].reshape(self.bshape)
        if mode == "train":
            m = x.size // self.num
            if m < 2:
                raise ValueError("batch norm needs at least 2 values per channel in train mode")
            mean = x.mean(axis=self.axes, keepdims=True)
            var = x.var(axis=self.axes, keepdims=True)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv_std
            unbiased = var.reshape(-1) * (m / (m - 1))
            self.running_mean = (
                (1 - self.momentum) * self.running_mean + self.momentum * mean.reshape(-1)
            ).astype(self.dtype)
            self.running_var = (
                (1 - self.momentum) * self.running_var + self.momentum * unbiased
            ).astype(self.dtype)
            self._cache = ("train", xhat, inv_std, m)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var.reshape(self.bshape) + self.eps)
            xhat = (x - self.running_mean.reshape(self.bshape)) * inv_std
            self._cache = ("eval", xhat, inv_std, None)
        return (gamma * xhat + beta).astype(self.dtype, copy=False)

    def backward(self, dout):
        mode, xhat, inv_std, m = self._cache
        gamma = self.params["gamma"].reshape(self.bshape)
        self.grads["gamma"] = (dout * xhat).sum(axis=self.axes)
        self.grads["beta"] = dout.sum(axis=self.axes)
        dxhat = dout * gamma
        if mode == "eval":
            return (dxhat * inv_std).astype(self.dtype, copy=False)
        s1 = dxhat.sum(axis=self.axes, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=self.axes, keepdims=True)
        dx = (inv_std / m) * (m * dxhat - s1 - xhat * s2)
        return dx.astype(self.dtype, copy=False)


class BatchNorm2d(_BatchNorm):
    tag = "batchnorm2d"

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__(channels, (0, 2, 3), (1, channels, 1, 1), eps, momentum, dtype)


class BatchNorm1d(_BatchNorm):
    tag = "batchnorm1d"

    def __init__(self, features, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__(features, (0,), (1, features), eps, momentum, dtype)


class MaxPool2x2(Layer):
    """2x2 window, stride 2; gradient routes to the window argmax."""

    tag = "maxpool2"

    def forward(self, x, mode="eval", rng=None):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ValueError(f"max pool requires even spatial dims, got {x.shape[2:]}")
        out, arg = _kernels.maxpool2_forward(x)
        self._cache = arg
        return out

    def backward(self, dout):
        return _kernels.maxpool2_backward(np.ascontiguousarray(dout, dtype=self.dtype), self._cache)


class Flatten(Layer):
    tag = "flatten"

    def forward(self, x, mode="eval", rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._cache)


class Linear(Layer):
    tag = "linear"

    def __init__(self, in_features, out_features, dtype=np.float32):
        super().__init__(dtype)
        self.in_features = in_features
        self.out_features = out_features
        self.params["w"] = np.zeros((out_features, in_features), dtype=dtype)
        self.params["b"] = np.zeros(out_features, dtype=dtype)

    def init(self, rng):
        self.params["w"] = _fan_in_uniform(
            rng, (self.out_features, self.in_features), self.in_features, self.dtype
        )
        self.params["b"] = _fan_in_uniform(rng, (self.out_features,), self.in_features, self.dtype)

    def forward(self, x, mode="eval", rng=None):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1] != self.in_features:
            raise ValueError(f"expected {self.in_features} features, got {x.shape[1]}")
        self._cache = x
        return x @ self.params["w"].T + self.params["b"]

    def backward(self, dout):
        x = self._cache
        self.grads["w"] = dout.T @ x
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["w"]


class Dropout(Layer):
    """Inverted dropout: train mode zeroes with probability ``rate`` and
    rescales survivors by 1/(1-rate); eval mode is the identity."""

    tag = "dropout"

    def __init__(self, rate=0.3, dtype=np.float32):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        super().__init__(dtype)
        self.rate = rate

    def forward(self, x, mode="eval", rng=None):
        if mode != "train" or self.rate == 0.0:
            self._cache = None
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        keep = (rng.random(x.shape) >= self.rate).astype(self.dtype)
        scale = self.dtype.type(1.0 / (1.0 - self.rate))
        self._cache = keep * scale
        return x * self._cache

    def backward(self, dout):
        if self._cache is None:
            return dout
        return dout * self._cache


def softmax_rows(z):
    """Numerically stable row softmax."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class Softmax(Layer):
    tag = "softmax"

    def forward(self, x, mode="eval", rng=None):
        p = softmax_rows(np.asarray(x, dtype=self.dtype))
        self._cache = p
        return p

    def backward(self, dout):
        p = self._cache
        return (p * (dout - (dout * p).sum(axis=1, keepdims=True))).astype(self.dtype, copy=False)
