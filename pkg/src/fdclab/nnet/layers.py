"""Layer primitives with hand-written backward passes.

Activations flow in NHWC layout; weights keep the (out, in, kh, kw) /
(out, in) convention so archives interoperate with common VGG16 dumps.
"""
from __future__ import annotations

import math

import numpy as np


class Layer:
    kind = "layer"
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def output_shape(self, shape):
        return shape


class Conv2D(Layer):
    """3x3 cross-correlation, stride 1, zero padding 1."""
    kind = "conv"

    def __init__(self, in_ch, out_ch, dtype=np.float32):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.params = {"weight": np.zeros((out_ch, in_ch, 3, 3), dtype),
                       "bias": np.zeros(out_ch, dtype)}
        self._cache = None

    def init(self, rng):
        fan_in = self.in_ch * 9
        bound = math.sqrt(6.0 / fan_in)
        w = self.params["weight"]
        w[...] = rng.uniform(-bound, bound, w.shape)
        self.params["bias"][...] = 0

    def _wmat(self):
        # column layout is (kh, kw, c) to match the shifted-slice im2col
        w = self.params["weight"]
        return w.transpose(0, 2, 3, 1).reshape(self.out_ch, 9 * self.in_ch)

    @staticmethod
    def im2col(x):
        n, h, w, c = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        return np.concatenate([xp[:, i:i + h, j:j + w, :] for i in range(3) for j in range(3)],
                              axis=-1).reshape(n * h * w, 9 * c)

    def forward(self, x, train=False):
        n, h, w, c = x.shape
        if c != self.in_ch:
            raise ValueError(f"conv expects {self.in_ch} channels, got {c}")
        col = self.im2col(x)
        out = col @ self._wmat().T
        out += self.params["bias"]
        if train:
            self._cache = (col, x.shape)
        return out.reshape(n, h, w, self.out_ch)

    def backward(self, dout):
        col, (n, h, w, c) = self._cache
        dy = dout.reshape(n * h * w, self.out_ch)
        dw = (dy.T @ col).reshape(self.out_ch, 3, 3, c).transpose(0, 3, 1, 2)
        self.grads = {"weight": np.ascontiguousarray(dw), "bias": dy.sum(axis=0)}
        dcol = (dy @ self._wmat()).reshape(n, h, w, 9, c)
        dxp = np.zeros((n, h + 2, w + 2, c), dout.dtype)
        k = 0
        for i in range(3):
            for j in range(3):
                dxp[:, i:i + h, j:j + w, :] += dcol[:, :, :, k, :]
                k += 1
        self._cache = None
        return dxp[:, 1:-1, 1:-1, :]

    def output_shape(self, shape):
        return (self.out_ch, shape[1], shape[2])


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        out = np.maximum(x, 0)
        if train:
            self._mask = x > 0
        return out

    def backward(self, dout):
        return dout * self._mask


class MaxPool2D(Layer):
    """2x2 window, stride 2; odd trailing rows/columns are dropped."""
    kind = "maxpool"

    def forward(self, x, train=False):
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        q = (x[:, 0:2 * h2:2, 0:2 * w2:2], x[:, 0:2 * h2:2, 1:2 * w2:2],
             x[:, 1:2 * h2:2, 0:2 * w2:2], x[:, 1:2 * h2:2, 1:2 * w2:2])
        out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
        if train:
            # the first maximum in row-major window order receives the gradient
            arg = np.full(out.shape, 3, np.uint8)
            for k in (2, 1, 0):
                arg[q[k] == out] = k
            self._arg = arg
            self._shape = x.shape
        return out

    def backward(self, dout):
        n, h, w, c = self._shape
        h2, w2 = h // 2, w // 2
        dx = np.zeros(self._shape, dout.dtype)
        zero = dout.dtype.type(0)
        for k, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            dx[:, i:2 * h2:2, j:2 * w2:2] = np.where(self._arg == k, dout, zero)
        self._arg = None
        return dx

    def output_shape(self, shape):
        return (shape[0], shape[1] // 2, shape[2] // 2)


class Flatten(Layer):
    """NHWC -> (N, C*H*W) in channel-major order."""
    kind = "flatten"

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.transpose(0, 3, 1, 2).reshape(len(x), -1)

    def backward(self, dout):
        n, h, w, c = self._shape
        return dout.reshape(n, c, h, w).transpose(0, 2, 3, 1)

    def output_shape(self, shape):
        return (shape[0] * shape[1] * shape[2],)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, dtype=np.float32):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.params = {"weight": np.zeros((out_features, in_features), dtype),
                       "bias": np.zeros(out_features, dtype)}

    def init(self, rng):
        bound = math.sqrt(6.0 / self.in_features)
        w = self.params["weight"]
        w[...] = rng.uniform(-bound, bound, w.shape)
        self.params["bias"][...] = 0

    def forward(self, x, train=False):
        if x.shape[1] != self.in_features:
            raise ValueError(f"dense expects {self.in_features} features, got {x.shape[1]}")
        if train:
            self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, dout):
        self.grads = {"weight": dout.T @ self._x, "bias": dout.sum(axis=0)}
        self._x = None
        return dout @ self.params["weight"]

    def output_shape(self, shape):
        return (self.out_features,)
