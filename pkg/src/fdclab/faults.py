"""Randomized sensor-fault schedules and additive injection."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .dynamics import CH, SensorTrajectory

WINDOW_S = 60.0
MIN_DURATION_S = 5.0


class FaultCase(IntEnum):
    NONE = 0
    V_DRIFT = 1
    ALPHA_DRIFT = 2
    ALPHA_NOISE = 3
    BETA_DRIFT = 4
    BETA_NOISE = 5
    RATES_DRIFT = 6
    LOAD_DRIFT = 7
    RATES_NOISE = 8
    LOAD_NOISE = 9


@dataclass(frozen=True)
class _CaseDef:
    channels: tuple
    kind: str  # "drift" | "noise" | "loss"
    lo: float
    hi: float
    to_internal: float  # table unit -> internal unit
    signed: bool


_DEG = math.pi / 180
_RATES = (CH["wx"], CH["wy"], CH["wz"])
_LOADS = (CH["Gx"], CH["Gy"], CH["Gz"])

FAULT_TABLE = {
    FaultCase.V_DRIFT: _CaseDef((CH["V"],), "loss", 0.50, 1.00, 1.0, False),
    FaultCase.ALPHA_DRIFT: _CaseDef((CH["alpha"],), "drift", 5.0, 10.0, _DEG, True),
    FaultCase.ALPHA_NOISE: _CaseDef((CH["alpha"],), "noise", 5.0, 10.0, _DEG, False),
    FaultCase.BETA_DRIFT: _CaseDef((CH["beta"],), "drift", 5.0, 10.0, _DEG, True),
    FaultCase.BETA_NOISE: _CaseDef((CH["beta"],), "noise", 5.0, 10.0, _DEG, False),
    FaultCase.RATES_DRIFT: _CaseDef(_RATES, "drift", 5.0, 10.0, _DEG, True),
    FaultCase.LOAD_DRIFT: _CaseDef(_LOADS, "drift", 0.1, 0.3, 1.0, True),
    FaultCase.RATES_NOISE: _CaseDef(_RATES, "noise", 5.0, 10.0, _DEG, False),
    FaultCase.LOAD_NOISE: _CaseDef(_LOADS, "noise", 0.1, 0.3, 1.0, False),
}


def affected_channels(case):
    return FAULT_TABLE[FaultCase(case)].channels


@dataclass(frozen=True)
class FaultEvent:
    case: FaultCase
    onset: float  # s
    duration: float  # s
    magnitude: float  # table units: deg, deg/s, g, or airspeed fraction lost
    sign: int = 1

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("fault duration must be positive")
        d = FAULT_TABLE[FaultCase(self.case)]
        if not d.lo <= self.magnitude <= d.hi:
            raise ValueError(f"magnitude {self.magnitude} outside [{d.lo}, {d.hi}] for case {int(self.case)}")

    @property
    def end(self):
        return self.onset + self.duration

    def to_dict(self):
        return {"case": int(self.case), "onset_s": self.onset, "duration_s": self.duration,
                "magnitude": self.magnitude, "sign": self.sign}


@dataclass
class FaultSchedule:
    events: list = field(default_factory=list)
    window_s: float = WINDOW_S

    def to_json(self):
        return json.dumps({"window_s": self.window_s,
                           "events": [e.to_dict() for e in self.events]})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        events = [FaultEvent(FaultCase(e["case"]), e["onset_s"], e["duration_s"],
                             e["magnitude"], e.get("sign", 1)) for e in d["events"]]
        return cls(events, d.get("window_s", WINDOW_S))


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_magnitude(case, seed=None):
    """Draw (magnitude, sign) uniformly within the table range for ``case``."""
    case = FaultCase(case)
    if case == FaultCase.NONE:
        raise ValueError("case 0 has no magnitude")
    rng = _rng(seed)
    d = FAULT_TABLE[case]
    mag = float(rng.uniform(d.lo, d.hi))
    if d.signed:
        sign = 1 if rng.random() < 0.5 else -1
    else:
        sign = -1 if d.kind == "loss" else 1
    return mag, sign


def sample_schedule(duration, seed=None, case_weights=None) -> FaultSchedule:
    """At most one event per 60 s window; case drawn from ``case_weights``."""
    if duration < WINDOW_S:
        raise ValueError(f"duration {duration}s shorter than one {WINDOW_S:.0f}s window")
    w = np.full(10, 0.1) if case_weights is None else np.asarray(case_weights, float)
    if w.shape != (10,) or (w < 0).any() or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("case_weights must be 10 non-negative values summing to 1")
    rng = _rng(seed)
    events = []
    for k in range(int(duration // WINDOW_S)):
        case = FaultCase(int(rng.choice(10, p=w)))
        if case == FaultCase.NONE:
            continue
        start = k * WINDOW_S
        onset = start + rng.uniform(0.0, WINDOW_S - MIN_DURATION_S)
        dur = rng.uniform(MIN_DURATION_S, start + WINDOW_S - onset)
        mag, sign = sample_magnitude(case, rng)
        events.append(FaultEvent(case, float(onset), float(dur), mag, sign))
    return FaultSchedule(events)


def event_mask(times, event):
    return (times >= event.onset) & (times <= event.end)


def apply_faults(traj: SensorTrajectory, schedule: FaultSchedule, seed=None) -> SensorTrajectory:
    """Inject the scheduled faults into the measured channels and relabel."""
    rng = _rng(seed)
    out = traj.measured.copy()
    labels = np.zeros(traj.n, np.uint8)
    times = traj.times
    span = traj.duration + 1e-9
    for i, ev in enumerate(schedule.events):
        if ev.onset < 0 or ev.end > span:
            raise ValueError(f"event {i} (case {int(ev.case)}, {ev.onset:.2f}-{ev.end:.2f}s) "
                             f"exceeds trajectory span 0-{traj.duration:.2f}s")
        d = FAULT_TABLE[FaultCase(ev.case)]
        m = event_mask(times, ev)
        cols = list(d.channels)
        if d.kind == "loss":
            out[m, cols[0]] *= 1.0 - ev.magnitude
        elif d.kind == "drift":
            out[np.ix_(m, cols)] += ev.sign * ev.magnitude * d.to_internal
        else:
            sd = ev.magnitude * d.to_internal
            out[np.ix_(m, cols)] += rng.standard_normal((int(m.sum()), len(cols))) * sd
        labels[m] = int(ev.case)
    return replace(traj, measured=out, labels=labels)
