"""Structured conv-filter pruning: scoring, removal with rewiring, compression metrics."""
from __future__ import annotations

import json
import logging
import os
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .nnet.archive import archive_bytes
from .nnet.network import Network, cross_entropy, param_count
from .nnet.optim import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

BASELINES = ("random", "l1_unstructured", "l2_structured")

# reference outcome for the full-size network (parameters, MB, ms, accuracy %)
REFERENCE_TABLE = {
    "before": {"params": 134300362, "size_mb": 512.0, "latency_ms": 315.0, "accuracy": 97.37},
    "after": {"params": 1387333, "size_mb": 5.60, "latency_ms": 26.0, "accuracy": 98.90},
}


@dataclass(frozen=True)
class FilterScore:
    layer: int  # conv ordinal, 1-based
    filter: int
    score: float  # layer-normalized, used for global ranking
    raw: float


def _normalize(raw_by_layer):
    out = []
    for k, raw in raw_by_layer.items():
        norm = np.linalg.norm(raw)
        scaled = raw / norm if norm > 0 else raw
        out += [FilterScore(k, i, float(s), float(r)) for i, (s, r) in enumerate(zip(scaled, raw))]
    return out


def taylor_scores(model: Network, batches, loss_scale=1.0):
    """First-order Taylor estimate of the loss change from removing each feature map.

    Per example and map: |mean over positions of (dC_n/dz) * z| with C_n the
    example's own loss; averaged over all examples, then L2-normalized per layer.
    """
    sums = {k: np.zeros(model.conv_layer(k).out_ch) for k in range(1, model.n_conv + 1)}
    count = 0
    for images, labels in batches:
        n = len(labels)
        logits = model.forward(images, train=True, record=True)
        _, dlogits = cross_entropy(logits, labels)
        # per-example losses: undo the batch mean
        model.backward(dlogits * (n * loss_scale), record=True)
        for k in sums:
            z = model.feature_maps[k].astype(np.float64)
            dz = model.feature_grads[k].astype(np.float64)
            sums[k] += np.abs((z * dz).mean(axis=(1, 2))).sum(axis=0)
        count += n
    if count == 0:
        raise ValueError("taylor_scores needs at least one non-empty batch")
    return _normalize({k: v / count for k, v in sums.items()})


def baseline_scores(model: Network, method, seed=0):
    """Random, mean |w| (L1, aggregated per filter) or per-filter L2 norm."""
    if method not in BASELINES:
        raise ValueError(f"unknown baseline {method!r}; choose from {BASELINES}")
    rng = np.random.default_rng(seed)
    raw = {}
    for k in range(1, model.n_conv + 1):
        w = model.conv_layer(k).params["weight"].astype(np.float64)
        flat = w.reshape(len(w), -1)
        if method == "random":
            raw[k] = rng.uniform(size=len(w))
        elif method == "l1_unstructured":
            raw[k] = np.abs(flat).mean(axis=1)
        else:
            raw[k] = np.sqrt((flat ** 2).sum(axis=1))
    return _normalize(raw)


def select_filters(model: Network, scores, fraction):
    """Globally lowest-scoring floor(fraction * total) filters, >= 1 kept per layer."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    sizes = {k: model.conv_layer(k).out_ch for k in range(1, model.n_conv + 1)}
    total = sum(sizes.values())
    n_remove = int(np.floor(fraction * total))
    if n_remove > total - len(sizes):
        raise ValueError(f"removing {n_remove} of {total} filters would empty a conv layer")
    remaining = dict(sizes)
    chosen = {k: [] for k in sizes}
    for s in sorted(scores, key=lambda s: (s.score, s.layer, s.filter)):
        if sum(len(v) for v in chosen.values()) == n_remove:
            break
        if remaining[s.layer] > 1:
            chosen[s.layer].append(s.filter)
            remaining[s.layer] -= 1
    return {k: sorted(v) for k, v in chosen.items() if v}


def remove_filters(model: Network, removal):
    """Delete conv filters in place and shrink the consumer layer's inputs."""
    for k in sorted(removal, reverse=True):
        drop = np.asarray(removal[k], dtype=int)
        if drop.size == 0:
            continue
        i = model.conv_index[k]
        conv = model.layers[i]
        keep = np.setdiff1d(np.arange(conv.out_ch), drop)
        if keep.size == 0:
            raise ValueError(f"conv{k} would be emptied")
        wname, bname = f"conv{k}.weight", f"conv{k}.bias"
        conv.params["weight"] = conv.params["weight"][keep].copy()
        conv.params["bias"] = conv.params["bias"][keep].copy()
        model.momentum[wname] = model.momentum[wname][keep].copy()
        model.momentum[bname] = model.momentum[bname][keep].copy()
        old = conv.out_ch
        conv.out_ch = keep.size
        if k in model.gates:
            model.gates[k] = model.gates[k][keep]
        j = next(j for j in range(i + 1, len(model.layers)) if model.layers[j].kind in ("conv", "dense"))
        nxt = model.layers[j]
        name = f"{model.names[j]}.weight"
        if nxt.kind == "conv":
            nxt.params["weight"] = nxt.params["weight"][:, keep].copy()
            model.momentum[name] = model.momentum[name][:, keep].copy()
            nxt.in_ch = keep.size
        else:
            hw = nxt.in_features // old
            cols = (keep[:, None] * hw + np.arange(hw)).ravel()
            nxt.params["weight"] = nxt.params["weight"][:, cols].copy()
            model.momentum[name] = model.momentum[name][:, cols].copy()
            nxt.in_features = cols.size
    model.spec = model.current_spec()
    return model


def prune_filters(model: Network, scores, fraction):
    """Copy of ``model`` with the selected filters structurally removed."""
    pruned = model.copy()
    remove_filters(pruned, select_filters(model, scores, fraction))
    return pruned


def _cpu_model():
    try:
        with open("/proc/cpuinfo") as f:
            for line in f:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()


def environment():
    return {"cpu": _cpu_model(), "threads": os.cpu_count(), "python": platform.python_version(),
            "numpy": np.__version__}


def measure_model(model: Network, sample_images, eval_dataset=None, reps=30):
    """Parameter count, archive size, median single-image latency and accuracy."""
    if reps < 30:
        raise ValueError("latency needs at least 30 repetitions")
    x = np.asarray(sample_images)[:1]
    model.forward(x)  # warm-up
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        model.forward(x)
        times.append(time.perf_counter() - t0)
    out = {"params": param_count(model.current_spec()),
           "bytes": len(archive_bytes(model)),
           "latency_ms": float(np.median(times) * 1e3)}
    out["size_mb"] = out["bytes"] / 2 ** 20
    if eval_dataset is not None:
        out["accuracy"], _ = evaluate(model, eval_dataset)
    return out


def relative_change(before, after):
    return (after - before) / before


@dataclass
class PruneReport:
    before: dict
    after: dict
    removed_per_layer: dict = field(default_factory=dict)
    widths_before: dict = field(default_factory=dict)
    widths_after: dict = field(default_factory=dict)
    iterations: list = field(default_factory=list)
    method: str = "taylor"
    environment: dict = field(default_factory=environment)

    def relative(self):
        keys = ("params", "size_mb", "latency_ms", "accuracy")
        return {k: relative_change(self.before[k], self.after[k])
                for k in keys if k in self.before and k in self.after and self.before[k]}

    def to_dict(self):
        d = asdict(self)
        d["relative_change"] = self.relative()
        d["table"] = {
            "columns": ["Parameters", "Size (MB)", "Time (ms)", "Accuracy (%)"],
            "Before": [self.before.get(k) for k in ("params", "size_mb", "latency_ms", "accuracy")],
            "After": [self.after.get(k) for k in ("params", "size_mb", "latency_ms", "accuracy")],
            "Relative Change (%)": [100 * self.relative().get(k, float("nan"))
                                    for k in ("params", "size_mb", "latency_ms", "accuracy")],
        }
        ref = {k: relative_change(REFERENCE_TABLE["before"][k], REFERENCE_TABLE["after"][k])
               for k in REFERENCE_TABLE["before"]}
        d["reference"] = {**REFERENCE_TABLE, "relative_change": ref}
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _widths(model):
    return {k: model.conv_layer(k).out_ch for k in range(1, model.n_conv + 1)}


def prune_finetune_loop(model: Network, dataset, config: TrainConfig, iterations=10,
                        per_iter_fraction=0.067, method="taylor", score_batches=None,
                        eval_dataset=None, sample_images=None, seed=0, reps=30):
    """Repeat (score -> prune -> fine-tune ``config.epochs``) and report before/after.

    ``score_batches`` is a callable returning an iterable of (images, labels)
    used for Taylor scoring; by default the first 500 training examples.
    """
    if sample_images is None:
        sample_images = dataset.batch(np.arange(1))
    if score_batches is None:
        def score_batches():
            n = min(len(dataset), 500)
            for s in range(0, n, 100):
                idx = np.arange(s, min(n, s + 100))
                yield dataset.batch(idx), dataset.labels[idx]
    model = model.copy()
    before = measure_model(model, sample_images, eval_dataset, reps)
    widths0 = _widths(model)
    removed = {k: 0 for k in widths0}
    history = []
    for it in range(iterations):
        if method == "taylor":
            scores = taylor_scores(model, score_batches())
        else:
            scores = baseline_scores(model, method, seed + it)
        sel = select_filters(model, scores, per_iter_fraction)
        remove_filters(model, sel)
        for k, v in sel.items():
            removed[k] += len(v)
        model.reset_momentum()
        hist = train(model, dataset, TrainConfig(config.lr, config.momentum, config.batch,
                                                 config.epochs, config.seed + it + 1))
        rec = {"iteration": it + 1, "removed": {k: len(v) for k, v in sel.items()},
               "params": param_count(model.current_spec()), "finetune": hist}
        if eval_dataset is not None:
            rec["accuracy"], _ = evaluate(model, eval_dataset)
        history.append(rec)
        log.info("prune iteration %d: params=%d", it + 1, rec["params"])
    after = measure_model(model, sample_images, eval_dataset, reps) if iterations else dict(before)
    report = PruneReport(before, after, removed, widths0, _widths(model), history, method)
    return model, report
