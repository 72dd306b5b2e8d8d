"""Sensor data images: crop a 30 s window, resample at 1 Hz, stack and normalize."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .dynamics import CHANNELS, SensorTrajectory

WINDOW_S = 30.0
STEP_S = 1.0
N_ROWS = len(CHANNELS)
N_COLS = int(WINDOW_S / STEP_S) + 1  # both endpoints included
SDI_SHAPE = (N_ROWS, N_COLS)
ROW_ORDER = CHANNELS


@dataclass
class SDIMatrix:
    values: np.ndarray  # (15, 31) in [0, 1]
    label: int
    t_end: float
    fault_columns: np.ndarray | None = None  # bool (31,), columns inside the labelled fault
    row_order: tuple = ROW_ORDER


def window_indices(traj: SensorTrajectory, t):
    """Nearest-sample indices for the 31 one-second columns ending at ``t``."""
    if t < WINDOW_S - 1e-9:
        raise ValueError(f"t={t} earlier than the {WINDOW_S:.0f}s window")
    idx = np.rint((t - WINDOW_S + np.arange(N_COLS) * STEP_S) * traj.sample_rate).astype(np.int64)
    if idx[0] < 0 or idx[-1] >= traj.n:
        raise ValueError(f"window [{t - WINDOW_S:.2f}, {t:.2f}]s outside available span "
                         f"[0, {traj.duration:.2f}]s")
    return idx


def crop_and_downsample(traj: SensorTrajectory, t) -> np.ndarray:
    return traj.measured[window_indices(traj, t)].T.copy()


def normalize_rows(raw) -> np.ndarray:
    """Linear per-row scaling to [0, 1]; constant rows become 0.5."""
    raw = np.asarray(raw, dtype=np.float64)
    if np.isnan(raw).any():
        raise ValueError("NaN in SDI input")
    lo = raw.min(axis=1, keepdims=True)
    hi = raw.max(axis=1, keepdims=True)
    rng = hi - lo
    flat = (rng == 0)[:, 0]
    out = np.empty_like(raw)
    out[~flat] = (raw[~flat] - lo[~flat]) / rng[~flat]
    out[flat] = 0.5
    return out


def stack_sdi(traj: SensorTrajectory, t) -> SDIMatrix:
    idx = window_indices(traj, t)
    values = normalize_rows(traj.measured[idx].T)
    label = int(traj.labels[idx[-1]])
    # only the span of the fault the window is labelled with
    span = (traj.labels[idx] == label) & (label != 0)
    return SDIMatrix(values, label, float(t), fault_columns=span)


def sdi_series(traj: SensorTrajectory, stride=STEP_S, start=WINDOW_S):
    """All SDIs at ``stride`` seconds, the first ending at ``start``."""
    t = start
    while t <= traj.duration + 1e-9:
        yield stack_sdi(traj, t)
        t += stride


# ---------------------------------------------------------------------------
# dataset container

class SDIDataset:
    """In-memory SDI collection with an on-disk manifest + blob layout.

    Files: ``manifest.json``, ``sdi.bin`` (count x 15 x 31 float32 LE values
    followed by count uint8 labels) and ``fault_columns.bin`` (count uint32
    bitmasks, bit k set when column k was sampled inside a fault).
    """

    def __init__(self, values, labels, fault_columns=None, meta=None):
        self.values = np.asarray(values, dtype=np.float32).reshape(-1, *SDI_SHAPE)
        self.labels = np.asarray(labels, dtype=np.uint8)
        if fault_columns is None:
            fault_columns = np.zeros((len(self.labels), N_COLS), bool)
        self.fault_columns = np.asarray(fault_columns, bool)
        self.meta = dict(meta or {})
        if not len(self.values) == len(self.labels) == len(self.fault_columns):
            raise ValueError("values/labels/fault_columns length mismatch")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return SDIDataset(self.values[idx], self.labels[idx], self.fault_columns[idx], self.meta)

    @classmethod
    def from_sdis(cls, sdis, meta=None):
        sdis = list(sdis)
        return cls(np.stack([s.values for s in sdis]) if sdis else np.zeros((0, *SDI_SHAPE)),
                   [s.label for s in sdis],
                   np.stack([s.fault_columns for s in sdis]) if sdis else None, meta)

    def histogram(self):
        return np.bincount(self.labels, minlength=10).tolist()

    def manifest(self):
        m = {"format": "fdc-sdi", "version": 1, "count": len(self), "shape": list(SDI_SHAPE),
             "dtype": "float32-le", "row_order": list(ROW_ORDER),
             "label_histogram": self.histogram()}
        m.update(self.meta)
        return m

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "sdi.bin"), "wb") as f:
            f.write(self.values.astype("<f4").tobytes())
            f.write(self.labels.tobytes())
        bits = (self.fault_columns.astype(np.uint32) << np.arange(N_COLS, dtype=np.uint32)).sum(1)
        with open(os.path.join(directory, "fault_columns.bin"), "wb") as f:
            f.write(bits.astype("<u4").tobytes())
        with open(os.path.join(directory, "manifest.json"), "w") as f:
            json.dump(self.manifest(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "manifest.json")) as f:
            man = json.load(f)
        n = man["count"]
        raw = np.fromfile(os.path.join(directory, "sdi.bin"), dtype=np.uint8)
        nval = n * N_ROWS * N_COLS * 4
        if raw.size != nval + n:
            raise ValueError(f"sdi.bin has {raw.size} bytes, expected {nval + n}")
        values = raw[:nval].view("<f4").reshape(n, *SDI_SHAPE)
        labels = raw[nval:].copy()
        cols = None
        path = os.path.join(directory, "fault_columns.bin")
        if os.path.exists(path):
            bits = np.fromfile(path, dtype="<u4")
            cols = ((bits[:, None] >> np.arange(N_COLS, dtype=np.uint32)) & 1).astype(bool)
        meta = {k: v for k, v in man.items()
                if k not in ("format", "version", "count", "shape", "dtype", "row_order",
                             "label_histogram")}
        return cls(values, labels, cols, meta)


def write_pgm(path, values):
    """8-bit binary PGM of a [0, 1] matrix, pixel = floor(255 v)."""
    v = np.asarray(values, dtype=np.float64)
    px = np.floor(255 * np.clip(v, 0, 1)).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (v.shape[1], v.shape[0]))
        f.write(px.tobytes())
