"""Network specs, presets and the sequential model."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU

N_CLASSES = 10


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer list, e.g. ``("conv", 1, 64)``, ``("relu",)``, ``("maxpool",)``.

    A ReLU directly after a conv layer produces that layer's feature maps
    (the tensors used by pruning scores and class activation maps).
    ``input_mean`` is subtracted from every input pixel before the first layer.
    """
    name: str
    layers: tuple
    input_shape: tuple = (1, 224, 224)
    input_mean: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(tuple(l) for l in self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        self.validate()

    def validate(self):
        shape = self.input_shape
        for i, l in enumerate(self.layers):
            kind = l[0]
            if kind == "conv":
                if len(shape) != 3 or shape[0] != l[1]:
                    raise ValueError(f"layer {i}: conv expects {l[1]} channels, input is {shape}")
                shape = (l[2], shape[1], shape[2])
            elif kind == "maxpool":
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif kind == "dense":
                if len(shape) != 1 or shape[0] != l[1]:
                    raise ValueError(f"layer {i}: dense expects {l[1]} features, input is {shape}")
                shape = (l[2],)
            elif kind != "relu":
                raise ValueError(f"layer {i}: unknown kind {kind!r}")
        if shape != (N_CLASSES,):
            raise ValueError(f"network output {shape}, expected ({N_CLASSES},)")

    @property
    def conv_layers(self):
        return [l for l in self.layers if l[0] == "conv"]

    def to_dict(self):
        return {"name": self.name, "input_shape": list(self.input_shape),
                "layers": [list(l) for l in self.layers], "input_mean": self.input_mean}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], tuple(tuple(l) for l in d["layers"]), tuple(d["input_shape"]),
                   float(d.get("input_mean", 0.0)))


def build_spec(name, stages, dense, input_shape=(1, 224, 224), pre_pools=0, post_pools=0,
               input_mean=0.0):
    """Conv stages (widths per stage, each stage closed by a 2x2 max pool) + dense head."""
    layers = [("maxpool",)] * pre_pools
    c, h, w = input_shape
    h, w = h >> pre_pools, w >> pre_pools
    for stage in stages:
        for width in stage:
            layers += [("conv", c, width), ("relu",)]
            c = width
        layers.append(("maxpool",))
        h, w = h // 2, w // 2
    layers += [("maxpool",)] * post_pools
    h, w = h >> post_pools, w >> post_pools
    layers.append(("flatten",))
    f = c * h * w
    for i, width in enumerate(dense):
        layers.append(("dense", f, width))
        if i < len(dense) - 1:
            layers.append(("relu",))
        f = width
    return NetworkSpec(name, tuple(layers), input_shape, input_mean)


VGG16_FDC = build_spec("VGG16_FDC", [(64, 64), (128, 128), (256, 256, 256),
                                     (512, 512, 512), (512, 512, 512)], (4096, 4096, N_CLASSES))
# desk-scale variant: input pooled 4x, three narrow stages, centered pixels
COMPACT_FDC = build_spec("COMPACT_FDC", [(8,), (16,), (32,)], (64, N_CLASSES),
                         pre_pools=2, post_pools=0, input_mean=0.5)
PRESETS = {"VGG16_FDC": VGG16_FDC, "COMPACT_FDC": COMPACT_FDC}


def param_count(spec: NetworkSpec) -> int:
    total = 0
    for l in spec.layers:
        if l[0] == "conv":
            total += 9 * l[1] * l[2] + l[2]
        elif l[0] == "dense":
            total += l[1] * l[2] + l[2]
    return total


def _make_layer(l, dtype):
    kind = l[0]
    if kind == "conv":
        return Conv2D(l[1], l[2], dtype)
    if kind == "dense":
        return Dense(l[1], l[2], dtype)
    return {"relu": ReLU, "maxpool": MaxPool2D, "flatten": Flatten}[kind]()


class Network:
    """Sequential model plus momentum buffers.

    ``gates`` maps a conv ordinal (1-based) to a 0/1 vector multiplying that
    layer's feature maps; unset gates are all-ones.
    """

    def __init__(self, spec: NetworkSpec, seed=0, dtype=np.float32, init=True):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.layers = [_make_layer(l, self.dtype) for l in spec.layers]
        self.momentum = {}
        self.gates = {}
        self.feature_maps = {}
        self.feature_grads = {}
        self._index_names()
        if init:
            rng = np.random.default_rng(seed)
            for layer in self.layers:
                if hasattr(layer, "init"):
                    layer.init(rng)
        self.reset_momentum()

    def _index_names(self):
        self.names = {}
        self.fmap_at = {}  # layer index of the relu carrying conv k's maps -> k
        nc = nd = 0
        for i, layer in enumerate(self.layers):
            if layer.kind == "conv":
                nc += 1
                self.names[i] = f"conv{nc}"
                if i + 1 < len(self.layers) and self.layers[i + 1].kind == "relu":
                    self.fmap_at[i + 1] = nc
            elif layer.kind == "dense":
                nd += 1
                self.names[i] = f"fc{nd}"
        self.conv_index = {k: i - 1 for i, k in self.fmap_at.items()}

    @property
    def n_conv(self):
        return len(self.conv_index)

    def conv_layer(self, k):
        return self.layers[self.conv_index[k]]

    def reset_momentum(self):
        self.momentum = {name: np.zeros_like(arr) for name, arr in self.named_params()}

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for key, arr in layer.params.items():
                yield f"{self.names[i]}.{key}", arr

    def param_dict(self):
        return dict(self.named_params())

    def named_grads(self):
        for i, layer in enumerate(self.layers):
            for key, arr in layer.grads.items():
                yield f"{self.names[i]}.{key}", arr

    def n_params(self):
        return sum(a.size for _, a in self.named_params())

    def astype(self, dtype):
        """Copy of the model (weights and momentum) in another float dtype."""
        other = Network(self.spec, dtype=dtype, init=False)
        for (name, src), (_, dst) in zip(self.named_params(), other.named_params()):
            dst[...] = src
        other.momentum = {k: v.astype(dtype) for k, v in self.momentum.items()}
        other.gates = {k: v.copy() for k, v in self.gates.items()}
        return other

    def copy(self):
        return self.astype(self.dtype)

    # -- forward / backward -------------------------------------------------

    def to_internal(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[:, None]
        if tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ValueError(f"input shape {x.shape[1:]} != {self.spec.input_shape}")
        if self.spec.input_mean:
            x = x - self.dtype.type(self.spec.input_mean)
        return np.ascontiguousarray(x.transpose(0, 2, 3, 1))

    def run(self, x, start=0, train=False, record=False):
        """Forward through layers[start:] from an internal-layout tensor."""
        for i in range(start, len(self.layers)):
            x = self.layers[i].forward(x, train)
            k = self.fmap_at.get(i)
            if k is not None:
                g = self.gates.get(k)
                if g is not None:
                    x = x * g.astype(x.dtype)
                if record:
                    self.feature_maps[k] = x
        return x

    def forward(self, x, train=False, record=False):
        if record:
            self.feature_maps = {}
        return self.run(self.to_internal(x), 0, train, record)

    def backward(self, dlogits, record=False):
        """Backprop from d(objective)/d(logits); fills every layer's grads."""
        if record:
            self.feature_grads = {}
        d = dlogits.astype(self.dtype, copy=False)
        for i in range(len(self.layers) - 1, -1, -1):
            k = self.fmap_at.get(i)
            if k is not None:
                if record:
                    self.feature_grads[k] = d
                g = self.gates.get(k)
                if g is not None:
                    d = d * g.astype(d.dtype)
            d = self.layers[i].backward(d)
        return d

    def predict(self, x, batch_size=100):
        out = []
        for s in range(0, len(x), batch_size):
            out.append(self.forward(x[s:s + batch_size]).argmax(axis=1))
        return np.concatenate(out) if out else np.zeros(0, int)

    def current_spec(self):
        layers = []
        for layer in self.layers:
            if layer.kind == "conv":
                layers.append(("conv", layer.in_ch, layer.out_ch))
            elif layer.kind == "dense":
                layers.append(("dense", layer.in_features, layer.out_features))
            else:
                layers.append((layer.kind,))
        return NetworkSpec(self.spec.name, tuple(layers), self.spec.input_shape,
                           self.spec.input_mean)


def softmax(logits):
    z = np.asarray(logits, np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy (float64) and its gradient w.r.t. logits."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"labels must lie in [0, {logits.shape[1] - 1}]")
    z = np.asarray(logits, np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    n = len(labels)
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    p = np.exp(z - lse[:, None])
    p[np.arange(n), labels] -= 1.0
    return loss, p / n


def forward(model: Network, images):
    return model.forward(images)


def loss_and_gradients(model: Network, images, labels, record=False):
    logits = model.forward(images, train=True, record=record)
    loss, dlogits = cross_entropy(logits, labels)
    model.backward(dlogits, record=record)
    return loss, dict(model.named_grads())
