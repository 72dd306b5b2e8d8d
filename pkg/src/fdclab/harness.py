"""Experiment orchestration: dataset generation, k-fold CV, augmentation comparison,
pruning and CAM campaigns, benchmarking."""
from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .augment import METHODS, Method, augment_batch
from .dynamics import PRESETS as FLIGHT_PRESETS
from .dynamics import NoiseSpec, add_measurement_noise, simulate_trajectory
from .faults import apply_faults, sample_schedule
from .nnet.archive import load_weights, save_weights
from .nnet.network import N_CLASSES, PRESETS, Network, param_count
from .nnet.optim import TrainConfig, evaluate, train
from .prune import environment, measure_model, prune_finetune_loop
from .sdi import SDIDataset, sdi_series
from .xai import DEFAULT_LAYERS, attention_overlap, export_overlay, grad_cam, span_area_share

log = logging.getLogger(__name__)

# Fold accuracies (%) of the full-scale reference study, one row per method.
TABLE4 = {
    "All_Tile": ((98.16, 98.51, 98.58, 98.57, 98.38), 98.44, 0.1756),
    "All_Repeat": ((96.70, 97.04, 97.35, 97.39, 97.26), 97.15, 0.2847),
    "All_Flip": ((97.61, 97.59, 98.02, 97.54, 97.76), 97.70, 0.1948),
    "LR_Flip_Tile": ((96.37, 96.94, 96.59, 96.85, 97.13), 96.78, 0.2988),
    "LR_Flip_Repeat": ((96.67, 97.72, 97.57, 97.72, 97.17), 97.37, 0.4514),
    "UD_Flip_Tile": ((97.44, 97.63, 97.78, 97.94, 97.89), 97.74, 0.2038),
    "UD_Flip_Repeat": ((97.50, 97.13, 97.20, 97.57, 97.85), 97.45, 0.2917),
}

# Full-scale reference configuration (documentation only, never a default).
REFERENCE_SCALE = {"dataset_size": 111965, "network": "VGG16_FDC", "epochs": 50,
                   "epoch_minutes_gpu": 6.5, "fold_size": 22393}


class LeakageError(AssertionError):
    pass


@dataclass
class ExperimentConfig:
    dataset_size: int = 5000
    method: str = Method.ALL_TILE.value
    network: str = "COMPACT_FDC"
    train: TrainConfig = field(default_factory=TrainConfig)
    k: int = 5
    data_seed: int = 0
    fold_seed: int = 0
    init_seed: int = 0
    out_dir: str = "runs"
    # generation
    balance: bool = True
    case_weights: Optional[list] = None
    segment_s: float = 600.0
    realizations: int = 3
    noise: bool = True
    # evaluation
    last_epochs: int = 5
    deterministic: bool = False
    # pruning campaign
    prune_iterations: int = 10
    prune_fraction: float = 0.067
    prune_method: str = "taylor"
    finetune_epochs: int = 1
    # CAM report
    cam_layers: Optional[list] = None
    cam_samples: int = 50
    bench_reps: int = 30

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.method = Method(self.method).value
        if self.network not in PRESETS:
            raise ValueError(f"unknown network {self.network!r}; choose from {sorted(PRESETS)}")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.dataset_size < self.k:
            raise ValueError("dataset_size must be >= k")
        if self.case_weights is not None:
            w = np.asarray(self.case_weights, float)
            if w.shape != (N_CLASSES,) or (w < 0).any() or w.sum() <= 0:
                raise ValueError("case_weights must be 10 non-negative values with positive sum")
        if self.last_epochs < 1:
            raise ValueError("last_epochs must be >= 1")

    @property
    def weights(self):
        w = np.full(N_CLASSES, 1.0) if self.case_weights is None else np.asarray(self.case_weights, float)
        return w / w.sum()

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def with_seed(self, seed):
        return self.replace(data_seed=seed, fold_seed=seed, init_seed=seed,
                            train=dataclasses.replace(self.train, seed=seed))


@contextlib.contextmanager
def deterministic_mode(enabled=True):
    """Single-threaded BLAS while active (sequential folds are the default anyway)."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


def _dump(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True, default=_jsonable)
        f.write("\n")


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    raise TypeError(f"not serializable: {type(o)}")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- data ------------------------------------------------------------------

def generate_sdis(config: ExperimentConfig, seed=None):
    """Simulate -> noise -> faults -> SDIs at 1 s strides until ``dataset_size``.

    With ``balance`` the class counts follow the case weights (equal counts for
    uniform weights); otherwise windows are kept in generation order.
    """
    seed = config.data_seed if seed is None else seed
    ss = np.random.SeedSequence(seed)
    w = config.weights
    n = config.dataset_size
    fault_w = w.copy()
    fault_w[0] = 0.0
    if config.balance and fault_w.sum() > 0:
        sched_w = fault_w / fault_w.sum()
    else:
        sched_w = w
    if config.balance:
        quota = np.floor(w * n).astype(int)
        rest = n - quota.sum()
        order = np.argsort(-(w * n - quota), kind="stable")
        quota[order[:rest]] += 1
    names = sorted(FLIGHT_PRESETS)
    counts = np.zeros(N_CLASSES, int)
    kept = []
    max_segments = 20 + 2 * n
    noise = NoiseSpec() if config.noise else NoiseSpec.zero()
    segment = 0
    while len(kept) < n:
        if segment >= max_segments:
            raise RuntimeError(f"infeasible config: only {len(kept)} of {n} SDIs after "
                               f"{segment} segments (histogram {counts.tolist()})")
        profile = FLIGHT_PRESETS[names[segment % len(names)]]
        segment += 1
        clean = simulate_trajectory(profile, duration=config.segment_s, seed=ss.spawn(1)[0])
        for _ in range(config.realizations):
            s_noise, s_sched, s_inj = ss.spawn(3)
            traj = add_measurement_noise(clean, noise, seed=s_noise)
            traj = apply_faults(traj, sample_schedule(config.segment_s, s_sched, sched_w), s_inj)
            for s in sdi_series(traj):
                if config.balance and counts[s.label] >= quota[s.label]:
                    continue
                kept.append(s)
                counts[s.label] += 1
                if len(kept) == n:
                    break
            if len(kept) == n:
                break
    meta = {"seed": seed, "segments": segment, "config": {
        k: v for k, v in config.to_dict().items()
        if k in ("dataset_size", "balance", "case_weights", "segment_s", "realizations", "noise")}}
    return SDIDataset.from_sdis(kept, meta)


def gen_dataset(config: ExperimentConfig, seed=None, directory=None):
    """Generate and write the dataset; returns (dataset, directory)."""
    ds = generate_sdis(config, seed)
    directory = directory or os.path.join(config.out_dir, "dataset")
    ds.save(directory)
    log.info("dataset %s: histogram %s", directory, ds.histogram())
    return ds, directory


def load_dataset(config: ExperimentConfig, directory=None):
    return SDIDataset.load(directory or os.path.join(config.out_dir, "dataset"))


class AugmentedDataset:
    """SDIDataset view producing augmented (n, 1, 224, 224) batches on demand."""

    def __init__(self, sdis: SDIDataset, method=Method.ALL_TILE):
        self.sdis = sdis
        self.method = Method(method)
        self.labels = sdis.labels.astype(np.int64)

    def __len__(self):
        return len(self.labels)

    def batch(self, idx):
        return augment_batch(self.sdis.values[idx], self.method)


# -- cross validation --------------------------------------------------------

def kfold_split(n, k=5, seed=0):
    if n < k:
        raise ValueError(f"cannot split {n} items into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def aggregate(values):
    """Mean and sample (n-1) standard deviation."""
    v = np.asarray(values, np.float64)
    if v.size < 2:
        raise ValueError("need at least two values for a sample STD")
    return float(v.mean()), float(v.std(ddof=1))


def folds_digest(folds):
    h = hashlib.sha256()
    for f in folds:
        h.update(np.asarray(f, "<i8").tobytes())
        h.update(b"|")
    return h.hexdigest()


@dataclass
class FoldReport:
    method: str
    network: str
    fold_accuracies: list
    mean: float
    std: float
    confusions: list = field(default_factory=list)
    histories: list = field(default_factory=list)
    fold_sizes: list = field(default_factory=list)
    folds_sha256: str = ""

    @classmethod
    def from_folds(cls, method, network, accs, **kw):
        m, s = aggregate(accs)
        return cls(method, network, [float(a) for a in accs], m, s, **kw)

    def check(self, tol=1e-9):
        m, s = aggregate(self.fold_accuracies)
        if abs(m - self.mean) > tol or abs(s - self.std) > tol:
            raise ValueError(f"stored mean/std ({self.mean}, {self.std}) disagree with "
                             f"folds ({m}, {s})")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, default=_jsonable)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text)).check()

    def csv_rows(self):
        return [[i + 1, a] for i, a in enumerate(self.fold_accuracies)] + [["mean", self.mean],
                                                                         ["std", self.std]]

    def save(self, directory, stem="fold_report"):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, stem + ".json"), "w") as f:
            f.write(self.to_json() + "\n")
        _write_csv(os.path.join(directory, stem + ".csv"), ["fold", "accuracy"], self.csv_rows())


def _fold_seed(base, fold):
    return int(np.random.SeedSequence([base, fold]).generate_state(1)[0])


def train_fold(config: ExperimentConfig, dataset: SDIDataset, train_idx, test_idx, fold=0):
    if np.intersect1d(train_idx, test_idx).size:
        raise LeakageError(f"fold {fold}: training and test indices overlap")
    model = Network(PRESETS[config.network], seed=_fold_seed(config.init_seed, fold))
    tcfg = dataclasses.replace(config.train, seed=_fold_seed(config.train.seed, fold))
    tr = AugmentedDataset(dataset.subset(train_idx), config.method)
    te = AugmentedDataset(dataset.subset(test_idx), config.method)
    history = train(model, tr, tcfg, test=te)
    _, conf = evaluate(model, te)
    return model, history, conf


def run_experiment(config: ExperimentConfig, dataset: SDIDataset | None = None, save=True):
    """k-fold CV; fold accuracy = mean test accuracy over the last ``last_epochs`` epochs."""
    dataset = load_dataset(config) if dataset is None else dataset
    folds = kfold_split(len(dataset), config.k, config.fold_seed)
    out = os.path.join(config.out_dir, config.method)
    if save:
        os.makedirs(out, exist_ok=True)
    accs, confs, hists = [], [], []
    with deterministic_mode(config.deterministic):
        for i, test_idx in enumerate(folds):
            train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
            model, history, conf = train_fold(config, dataset, train_idx, test_idx, i)
            tail = [h["test_acc"] for h in history[-config.last_epochs:]]
            accs.append(float(np.mean(tail)) if tail else float("nan"))
            confs.append(conf.tolist())
            hists.append(history)
            log.info("%s fold %d: %.2f%%", config.method, i + 1, accs[-1])
            if save:
                save_weights(model, os.path.join(out, f"fold{i + 1}.fdcw"))
    report = FoldReport.from_folds(config.method, config.network, accs, confusions=confs,
                                   histories=hists, fold_sizes=[len(f) for f in folds],
                                   folds_sha256=folds_digest(folds))
    if save:
        report.save(out)
    return report


def table4_rows(reports):
    return [[r.method, *r.fold_accuracies, r.mean, r.std] for r in reports]


def compare_augmentations(config: ExperimentConfig, dataset: SDIDataset | None = None,
                          methods=METHODS, save=True):
    """One CV run per method on identical folds and seeds; one row per method, folds then mean and STD."""
    dataset = load_dataset(config) if dataset is None else dataset
    reports = [run_experiment(config.replace(method=Method(m).value), dataset, save)
               for m in methods]
    digests = {r.folds_sha256 for r in reports}
    if len(digests) != 1:
        raise RuntimeError("methods were evaluated on different folds")
    table = {"columns": ["method"] + [f"fold{i + 1}" for i in range(config.k)] + ["mean", "std"],
             "rows": table4_rows(reports), "folds_sha256": digests.pop(),
             "reference": {k: list(v[0]) + [v[1], v[2]] for k, v in TABLE4.items()}}
    if save:
        os.makedirs(config.out_dir, exist_ok=True)
        _dump(table, os.path.join(config.out_dir, "compare_aug.json"))
        _write_csv(os.path.join(config.out_dir, "compare_aug.csv"), table["columns"], table["rows"])
    return table


# -- campaigns ---------------------------------------------------------------

def _holdout(config, dataset):
    """Fold 1 split: (train indices, test indices)."""
    folds = kfold_split(len(dataset), config.k, config.fold_seed)
    test_idx = folds[0]
    train_idx = np.sort(np.concatenate(folds[1:]))
    return train_idx, test_idx


def fit_model(config: ExperimentConfig, dataset: SDIDataset | None = None, save=True):
    """Train one model on the fold-1 training split and evaluate on its test split."""
    dataset = load_dataset(config) if dataset is None else dataset
    train_idx, test_idx = _holdout(config, dataset)
    with deterministic_mode(config.deterministic):
        model, history, conf = train_fold(config, dataset, train_idx, test_idx, 0)
    result = {"history": history, "confusion": conf.tolist(),
              "accuracy": history[-1]["test_acc"] if history else None,
              "params": param_count(model.current_spec())}
    if save:
        os.makedirs(config.out_dir, exist_ok=True)
        path = os.path.join(config.out_dir, "model.fdcw")
        save_weights(model, path)
        result["weights"] = path
        _dump(result, os.path.join(config.out_dir, "train_report.json"))
        _write_csv(os.path.join(config.out_dir, "train_history.csv"),
                   ["epoch", "loss", "train_acc", "test_acc"],
                   [[h["epoch"], h["loss"], h["train_acc"], h.get("test_acc")] for h in history])
    return model, result


def evaluate_model(config: ExperimentConfig, model: Network, dataset=None, indices=None, save=True):
    dataset = load_dataset(config) if dataset is None else dataset
    if indices is None:
        _, indices = _holdout(config, dataset)
    acc, conf = evaluate(model, AugmentedDataset(dataset.subset(indices), config.method))
    result = {"accuracy": acc, "confusion": conf.tolist(), "count": int(len(indices))}
    if save:
        os.makedirs(config.out_dir, exist_ok=True)
        _dump(result, os.path.join(config.out_dir, "eval_report.json"))
        _write_csv(os.path.join(config.out_dir, "eval_confusion.csv"),
                   ["true"] + [f"pred{c}" for c in range(N_CLASSES)],
                   [[c, *row] for c, row in enumerate(conf.tolist())])
    return result


def _split_timing(report_dict):
    """Move wall-clock fields out of a report so reruns compare byte-for-byte."""
    timing = {}
    for key in ("before", "after"):
        timing[key] = report_dict[key].pop("latency_ms", None)
    timing["environment"] = report_dict.pop("environment", None)
    rel = report_dict.get("relative_change", {})
    timing["relative_latency"] = rel.pop("latency_ms", None)
    table = report_dict.get("table", {})
    if "columns" in table:
        j = table["columns"].index("Time (ms)")
        for row in ("Before", "After", "Relative Change (%)"):
            table[row][j] = None
    return report_dict, timing


def prune_campaign(config: ExperimentConfig, model: Network, dataset=None, save=True):
    dataset = load_dataset(config) if dataset is None else dataset
    train_idx, test_idx = _holdout(config, dataset)
    tr = AugmentedDataset(dataset.subset(train_idx), config.method)
    te = AugmentedDataset(dataset.subset(test_idx), config.method)
    tcfg = dataclasses.replace(config.train, epochs=config.finetune_epochs)
    with deterministic_mode(config.deterministic):
        pruned, report = prune_finetune_loop(model, tr, tcfg, config.prune_iterations,
                                             config.prune_fraction, config.prune_method,
                                             eval_dataset=te, seed=config.init_seed,
                                             reps=config.bench_reps)
    d = report.to_dict()
    if save:
        os.makedirs(config.out_dir, exist_ok=True)
        save_weights(pruned, os.path.join(config.out_dir, "pruned.fdcw"))
        stored, timing = _split_timing(json.loads(json.dumps(d, default=_jsonable)))
        if not config.deterministic:
            stored = d
        else:
            _dump(timing, os.path.join(config.out_dir, "prune_timing.json"))
        _dump(stored, os.path.join(config.out_dir, "prune_report.json"))
        t = d["table"]
        _write_csv(os.path.join(config.out_dir, "prune_report.csv"), ["row"] + t["columns"],
                   [[r] + (stored["table"][r]) for r in ("Before", "After", "Relative Change (%)")])
    return pruned, d


def cam_report(config: ExperimentConfig, model: Network, dataset=None, save=True, export=3):
    """Grad-CAM over faulted test samples; mean top-decile overlap vs the uniform baseline."""
    dataset = load_dataset(config) if dataset is None else dataset
    _, test_idx = _holdout(config, dataset)
    faulted = [i for i in test_idx if dataset.labels[i] != 0 and dataset.fault_columns[i].any()]
    # windows only partly covered by the fault first: there the span is informative
    faulted.sort(key=lambda i: bool(dataset.fault_columns[i].all()))
    chosen = faulted[:config.cam_samples]
    if not chosen:
        raise ValueError("no faulted samples with a known fault span")
    last = model.n_conv
    layers = config.cam_layers or [l for l in DEFAULT_LAYERS if l <= model.n_conv] or [last]
    if last not in layers:
        layers = list(layers) + [last]
    out = os.path.join(config.out_dir, "cam")
    rows = []
    for n, i in enumerate(chosen):
        img = augment_batch(dataset.values[i:i + 1], config.method)
        label = int(dataset.labels[i])
        base = span_area_share(dataset.fault_columns[i], config.method)
        for layer in layers:
            cam = grad_cam(model, img, label, layer)
            try:
                ov = attention_overlap(cam, dataset.fault_columns[i], config.method)
            except ValueError:
                ov = None
            rows.append({"index": int(i), "label": label, "layer": layer, "overlap": ov,
                         "baseline": base})
            if save and n < export:
                export_overlay(cam, img[0, 0], os.path.join(out, f"s{i}_c{label}_l{layer}"),
                               {"overlap": ov, "baseline": base, "index": int(i)})
    final = [r for r in rows if r["layer"] == last]
    scored = [r for r in final if r["overlap"] is not None]
    summary = {"samples": len(chosen), "layers": layers, "last_layer": last,
               "scored": len(scored),
               "mean_overlap": float(np.mean([r["overlap"] for r in scored])) if scored else None,
               "mean_baseline": float(np.mean([r["baseline"] for r in scored])) if scored else None}
    result = {"summary": summary, "rows": rows}
    if save:
        os.makedirs(out, exist_ok=True)
        _dump(result, os.path.join(config.out_dir, "cam_report.json"))
        _write_csv(os.path.join(config.out_dir, "cam_report.csv"),
                   ["index", "label", "layer", "overlap", "baseline"],
                   [[r["index"], r["label"], r["layer"], r["overlap"], r["baseline"]] for r in rows])
    return result


def bench(config: ExperimentConfig, networks=None, save=True, weights=None):
    """Parameter count, archive bytes and median single-image latency per network."""
    networks = networks or [config.network]
    rows = []
    x = np.zeros((1, 1, 224, 224), np.float32)
    for name in networks:
        model = load_weights(weights) if weights else Network(PRESETS[name], seed=config.init_seed)
        m = measure_model(model, x, reps=config.bench_reps)
        rows.append({"network": model.spec.name, **m})
    result = {"rows": rows, "environment": environment()}
    if save:
        os.makedirs(config.out_dir, exist_ok=True)
        _dump(result, os.path.join(config.out_dir, "bench.json"))
        _write_csv(os.path.join(config.out_dir, "bench.csv"),
                   ["network", "params", "bytes", "size_mb", "latency_ms"],
                   [[r["network"], r["params"], r["bytes"], r["size_mb"], r["latency_ms"]]
                    for r in rows])
    return result

