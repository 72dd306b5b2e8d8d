"""Shared oracles for the test-suite (imported by several test modules)."""
import functools

import numpy as np

from scipy.stats import spearmanr

from fdclab.augment import augment_matrix
from fdclab.harness import ExperimentConfig, generate_sdis
from fdclab.nnet import Network, TrainConfig, train
from fdclab.nnet.network import build_spec, cross_entropy
from fdclab.nnet.optim import ArrayDataset

# criterion number -> printed PASS/FAIL line (filled by test_acceptance)
ACCEPTANCE = {}


def _pattern_run(model, x, start):
    """Forward from layer ``start``; also return every ReLU mask / pool argmax."""
    pat = []
    for i in range(start, len(model.layers)):
        layer = model.layers[i]
        x = layer.forward(x, train=True)
        if layer.kind == "relu":
            pat.append(layer._mask.copy())
        elif layer.kind == "maxpool":
            pat.append(layer._arg.copy())
            layer._arg = None
    return x, pat


def gradient_check(model, images, labels, h=1e-4, floor=1e-8, params=None):
    """Central finite differences for every parameter entry against backprop.

    Perturbations that flip a ReLU mask or a max-pool winner (a tie within
    reach of +-h) are excluded.  Only the layers from the perturbed one on are
    re-run.  Returns (max relative error, number checked, number excluded).
    """
    logits = model.forward(images, train=True)
    _, d = cross_entropy(logits, labels)
    model.backward(d)
    grads = {n: g.copy() for n, g in model.named_grads()}
    inputs = []
    x = model.to_internal(images)
    for layer in model.layers:
        inputs.append(x)
        x = layer.forward(x)
    worst, checked, skipped = 0.0, 0, 0
    for i, layer in enumerate(model.layers):
        if not layer.params:
            continue
        _, base = _pattern_run(model, inputs[i], i)
        for key, w in layer.params.items():
            name = f"{model.names[i]}.{key}"
            if params is not None and name not in params:
                continue
            flat = w.reshape(-1)
            g = grads[name].reshape(-1)
            for j in range(flat.size):
                keep = flat[j]
                flat[j] = keep + h
                zp, pp = _pattern_run(model, inputs[i], i)
                flat[j] = keep - h
                zm, pm = _pattern_run(model, inputs[i], i)
                flat[j] = keep
                if any((a != b).any() for a, b in zip(pp + pm, base + base)):
                    skipped += 1
                    continue
                num = (cross_entropy(zp, labels)[0] - cross_entropy(zm, labels)[0]) / (2 * h)
                err = abs(num - g[j]) / max(abs(num), abs(g[j]), floor)
                worst = max(worst, err)
                checked += 1
    return worst, checked, skipped


def spearman(a, b):
    return float(spearmanr(a, b).statistic)


@functools.lru_cache(maxsize=1)
def tiny_prune_data():
    """200 raw (un-augmented) SDIs, balanced over the 10 classes."""
    sd = generate_sdis(ExperimentConfig(dataset_size=200), 0)
    return sd.values[:, None].astype(np.float32), sd.labels


def tiny_prune_fixture(seed=1):
    """Two conv layers x 8 filters trained on the 200-SDI fixture."""
    X, y = tiny_prune_data()
    spec = build_spec("tiny_prune", [(8,), (8,)], (10,), input_shape=(1, 15, 31))
    m = Network(spec, seed=seed)
    train(m, ArrayDataset(X, y), TrainConfig(lr=1e-2, epochs=30, batch=20, seed=seed))
    return m, X, y


def ablation_deltas(model, X, y, scores):
    """|C(D, map zeroed) - C(D)| for every scored feature map, via the gates."""
    base = cross_entropy(model.forward(X), y)[0]
    out = []
    for s in scores:
        g = np.ones(model.conv_layer(s.layer).out_ch, np.float32)
        g[s.filter] = 0
        model.gates[s.layer] = g
        out.append(abs(cross_entropy(model.forward(X), y)[0] - base))
        del model.gates[s.layer]
    return np.array(out)


def fd_cams(model, x, layer, h=1e-3):
    """Independent Grad-CAM for all classes: alpha from central differences in every A^k_ij."""
    r = model.conv_index[layer] + 1  # relu carrying the maps
    a = model.to_internal(x)
    for i in range(r + 1):
        a = model.layers[i].forward(a)
    A = a[0].copy()
    H, W, K = A.shape
    grads = np.zeros((10, H, W, K))
    for idx in np.ndindex(H, W, K):
        p, q = a.copy(), a.copy()
        p[(0,) + idx] += h
        q[(0,) + idx] -= h
        grads[(slice(None),) + idx] = (model.run(p, r + 1)[0] - model.run(q, r + 1)[0]) / (2 * h)
    alpha = grads.mean(axis=(1, 2))
    return [np.maximum(A @ alpha[c], 0) for c in range(10)]


def cam_fd_fixture():
    """Tiny f64 net with strictly positive feature maps (no ReLU ties) and an SDI input."""
    spec = build_spec("fd", [(3,), (2,)], (10,), input_shape=(1, 224, 224), pre_pools=4)
    m = Network(spec, seed=5, dtype=np.float64)
    for k in (1, 2):
        m.conv_layer(k).params["bias"][...] = 3.0
    # an augmented SDI keeps pixel contrast through the input pools (no near-tied windows)
    x = augment_matrix(np.random.default_rng(9).random((15, 31)), "All_Repeat")[None, None]
    return m, x


def closed_form(spec, widths):
    """Parameter count of ``spec`` with conv widths replaced, from the layer formula."""
    total, c = 0, spec.input_shape[0]
    h, w = spec.input_shape[1:]
    k, fin = 0, None
    for l in spec.layers:
        if l[0] == "conv":
            o = widths[k]
            total += 9 * c * o + o
            c, k = o, k + 1
        elif l[0] == "maxpool":
            h, w = h // 2, w // 2
        elif l[0] == "dense":
            fin = c * h * w if fin is None else fin
            total += fin * l[2] + l[2]
            fin = l[2]
    return total
