"""Gradient-weighted class activation maps and fault-span attention checks."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .augment import IMAGE_SIZE as _SIDE, source_index
from .nnet.network import Network
from .sdi import write_pgm

DEFAULT_LAYERS = (1, 2, 6, 10, 13)
TOP_FRACTION = 0.10
IMAGE_SIZE = (_SIDE, _SIDE)


@dataclass
class CamHeatmap:
    layer: int
    target: int
    raw: np.ndarray  # (h, w) after ReLU, feature-map resolution
    upsampled: np.ndarray  # (224, 224)
    weights: np.ndarray  # per-channel alpha_k
    logit: float


def cam_from(activations, gradients):
    """alpha_k = spatial mean of dy/dA^k; returns (alpha, sum_k alpha_k A^k) before ReLU."""
    A = np.asarray(activations, np.float64)
    dA = np.asarray(gradients, np.float64)
    if A.shape != dA.shape or A.ndim != 3:
        raise ValueError("activations and gradients must both be (h, w, channels)")
    alpha = dA.mean(axis=(0, 1))
    return alpha, A @ alpha


def upsample_nearest(m, size=IMAGE_SIZE):
    h, w = m.shape
    rows = (np.arange(size[0]) * h) // size[0]
    cols = (np.arange(size[1]) * w) // size[1]
    return m[np.ix_(rows, cols)]


def grad_cam(model: Network, image, target, layer) -> CamHeatmap:
    """Grad-CAM of the pre-softmax score of class ``target`` at conv layer ``layer``."""
    if layer not in model.conv_index:
        raise ValueError(f"model has conv layers 1..{model.n_conv}, got {layer}")
    if not 0 <= target < 10:
        raise ValueError("target class must lie in [0, 9]")
    x = np.asarray(image)
    x = x.reshape((1,) + x.shape[-3:]) if x.ndim >= 3 else x[None, None]
    logits = model.forward(x, train=True, record=True)
    onehot = np.zeros_like(logits)
    onehot[0, target] = 1.0
    model.backward(onehot, record=True)
    alpha, lin = cam_from(model.feature_maps[layer][0], model.feature_grads[layer][0])
    raw = np.maximum(lin, 0.0)
    return CamHeatmap(layer, int(target), raw, upsample_nearest(raw), alpha, float(logits[0, target]))


def overlay(image, cam: CamHeatmap):
    img = np.asarray(image, np.float64).reshape(IMAGE_SIZE)
    peak = cam.upsampled.max()
    if peak <= 0:
        return img
    return 0.5 * img + 0.5 * (cam.upsampled / peak)


def export_overlay(cam: CamHeatmap, image, prefix, extra=None):
    """Writes <prefix>_map.pgm, <prefix>_overlay.pgm, <prefix>_raw.csv and <prefix>.json."""
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    peak = cam.upsampled.max()
    write_pgm(prefix + "_map.pgm", cam.upsampled / peak if peak > 0 else cam.upsampled)
    write_pgm(prefix + "_overlay.pgm", overlay(image, cam))
    np.savetxt(prefix + "_raw.csv", cam.raw, delimiter=",", fmt="%.8g")
    meta = {"layer": cam.layer, "target": cam.target, "logit": cam.logit,
            "raw_shape": list(cam.raw.shape), "weights": cam.weights.tolist(),
            "max": float(peak), **(extra or {})}
    with open(prefix + ".json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
    return meta


def _span_pixels(fault_columns, method):
    rows, cols = source_index(method)
    fc = np.asarray(fault_columns, bool)
    in_col = (cols >= 0) & fc[np.clip(cols, 0, None)]
    return (rows >= 0)[:, None] & in_col[None, :]


def span_area_share(fault_columns, method):
    """Fraction of image pixels whose source column lies in the fault span."""
    return float(_span_pixels(fault_columns, method).mean())


def attention_overlap(cam: CamHeatmap | np.ndarray, fault_columns, method, top=TOP_FRACTION):
    """Share of the hottest ``top`` fraction of positive pixels inside the fault span.

    Pixels tied at the cut-off value count fractionally (the expectation under
    random tie breaking), so a uniform map scores exactly the span's area share.
    """
    heat = cam.upsampled if isinstance(cam, CamHeatmap) else np.asarray(cam, np.float64)
    if not np.asarray(fault_columns, bool).any():
        raise ValueError("no fault span (fault-free sample): overlap is undefined")
    inside = _span_pixels(fault_columns, method).ravel()
    v = heat.ravel()
    positive = v > 0
    if not positive.any():
        raise ValueError("heatmap has no positive pixels; top-decile set is empty")
    k = int(np.ceil(top * v.size))
    if positive.sum() <= k:
        return float(inside[positive].mean())
    cut = np.partition(v, v.size - k)[v.size - k]
    above = v > cut
    tied = v == cut
    n_above = above.sum()
    hit = inside[above].sum() + (k - n_above) * inside[tied].mean()
    return float(hit / k)
