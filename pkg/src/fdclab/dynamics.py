"""Point-mass air-data kinematics, maneuver profiles, gusts and sensor noise.

Internal units: V [m/s], angles [rad], body rates [rad/s], load factors [g],
position [m].  Every trajectory array is laid out with columns in
``CHANNELS`` order, which is also the SDI row order.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter

G0 = 9.80665  # m/s^2
SINGULAR_EPS = 1e-6

CHANNELS = ("V", "alpha", "beta", "Gx", "Gy", "Gz", "wx", "wy", "wz",
            "psi", "theta", "phi", "x", "y", "z")
N_CHANNELS = len(CHANNELS)
CH = {name: i for i, name in enumerate(CHANNELS)}

# integrated states (body rates and load factors are profile inputs)
_INTEGRATED = ("V", "alpha", "beta", "psi", "theta", "phi", "x", "y", "z")


class SingularityError(ValueError):
    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} at t={t:.4f}s")
        self.t = t


class AircraftState(NamedTuple):
    V: float
    alpha: float
    beta: float
    psi: float
    theta: float
    phi: float
    wx: float
    wy: float
    wz: float
    x: float
    y: float
    z: float


class LoadFactors(NamedTuple):
    Gx: float
    Gy: float
    Gz: float


class WindRates(NamedTuple):
    wx: float = 0.0
    wy: float = 0.0
    wz: float = 0.0


class StateDerivative(NamedTuple):
    V: float
    alpha: float
    beta: float
    psi: float
    theta: float
    phi: float
    x: float
    y: float
    z: float


def body_velocity(V, alpha, beta):
    """Body-axis velocity components (u, v, w) from airspeed and flow angles."""
    cb = math.cos(beta)
    return V * math.cos(alpha) * cb, V * math.sin(beta), V * math.sin(alpha) * cb


def state_derivative(s: AircraftState, G: LoadFactors, wind: WindRates = WindRates()) -> StateDerivative:
    """Time derivative of the integrated states.

    ``G`` is in g-units; the additive rate terms in the alpha/beta equations
    come from ``wind`` while the attitude kinematics use the body rates held
    in ``s``.
    """
    V, al, be = s.V, s.alpha, s.beta
    ca, sa = math.cos(al), math.sin(al)
    cb, sb = math.cos(be), math.sin(be)
    ct, st = math.cos(s.theta), math.sin(s.theta)
    cf, sf = math.cos(s.phi), math.sin(s.phi)
    cp, sp = math.cos(s.psi), math.sin(s.psi)
    if V < SINGULAR_EPS:
        raise SingularityError(f"airspeed {V!r} below {SINGULAR_EPS}")
    if abs(cb) < SINGULAR_EPS:
        raise SingularityError(f"cos(beta) singular, beta={be!r}")
    if abs(ct) < SINGULAR_EPS:
        raise SingularityError(f"cos(theta) singular, theta={s.theta!r}")

    fx = (G.Gx - st) * G0
    fy = (G.Gy + sf * ct) * G0
    fz = (G.Gz + cf * ct) * G0

    dV = fx * ca * cb + fy * sb + fz * sa * cb
    dal = (-fx * sa + fz * ca) / (V * cb) + wind.wy - (wind.wx * ca + wind.wz * sa) * sb / cb
    dbe = (-fx * ca * sb + fy * cb - fz * sa * sb) / V + wind.wx * sa - wind.wz * ca

    dpsi = (s.wy * sf + s.wz * cf) / ct
    dth = s.wy * cf - s.wz * sf
    dphi = s.wx + (s.wy * sf + s.wz * cf) * st / ct

    u, v, w = V * ca * cb, V * sb, V * sa * cb
    dx = u * ct * cp + v * (st * sf * cp - cf * sp) + w * (st * cf * cp + sf * sp)
    dy = u * ct * sp + v * (st * sf * sp + cf * cp) + w * (st * cf * sp - sf * cp)
    dz = -u * st + v * sf * ct + w * cf * ct
    return StateDerivative(dV, dal, dbe, dpsi, dth, dphi, dx, dy, dz)


# ---------------------------------------------------------------------------
# maneuver profiles


@dataclass(frozen=True)
class Sinusoids:
    """Sum of sines: amplitudes and frequencies [Hz]; phases drawn per run."""
    amps: tuple = ()
    freqs: tuple = ()

    def __call__(self, t, phases):
        return sum(a * math.sin(2 * math.pi * f * t + p)
                   for a, f, p in zip(self.amps, self.freqs, phases))


@dataclass(frozen=True)
class ManeuverProfile:
    """Reference histories plus a first-order trim hold.

    Body rates track attitude references, load factors are solved so that
    V, alpha and beta relax toward their references with the given time
    constants.  Commanded body rates also feed the wind-rate input of the
    alpha/beta equations (``couple_rates``) so the kinematics stay physical.
    """
    name: str
    V0: float
    alpha0: float = 0.0
    theta0: float | None = None  # defaults to alpha0 (level)
    altitude: float = 1000.0
    dt: float = 0.02
    V_ref: Sinusoids = Sinusoids()
    alpha_ref: Sinusoids = Sinusoids()
    theta_ref: Sinusoids = Sinusoids()
    phi_ref: Sinusoids = Sinusoids()
    yaw_rate: Sinusoids = Sinusoids()
    tau_V: float = 10.0
    tau_alpha: float = 2.0
    tau_beta: float = 2.0
    tau_att: float = 3.0
    gust_intensity: float = 0.0  # m/s
    gust_timescale: float = 2.0  # s
    couple_rates: bool = True

    @property
    def n_phases(self):
        return sum(len(c.amps) for c in (self.V_ref, self.alpha_ref, self.theta_ref,
                                         self.phi_ref, self.yaw_rate))

    def initial_state(self):
        th = self.alpha0 if self.theta0 is None else self.theta0
        return AircraftState(self.V0, self.alpha0, 0.0, 0.0, th, 0.0,
                             0.0, 0.0, 0.0, 0.0, 0.0, -self.altitude)

    def commands(self, t, s, phases):
        """Return (body rates, load factors, wind-rate command) at time t."""
        it = iter(np.split(np.asarray(phases, float), np.cumsum(
            [len(c.amps) for c in (self.V_ref, self.alpha_ref, self.theta_ref, self.phi_ref)])))
        pV, pa, pt, pf, pr = it
        th0 = self.alpha0 if self.theta0 is None else self.theta0
        V_ref = self.V0 + self.V_ref(t, pV)
        a_ref = self.alpha0 + self.alpha_ref(t, pa)
        t_ref = th0 + self.theta_ref(t, pt)
        f_ref = self.phi_ref(t, pf)

        # attitude hold -> desired Euler rates -> body rates
        dth = (t_ref - s.theta) / self.tau_att
        dphi = (f_ref - s.phi) / self.tau_att
        dpsi = self.yaw_rate(t, pr)
        cf, sf = math.cos(s.phi), math.sin(s.phi)
        ct, st = math.cos(s.theta), math.sin(s.theta)
        wy = dth * cf + dpsi * ct * sf
        wz = -dth * sf + dpsi * ct * cf
        wx = dphi - dpsi * st
        rates = (wx, wy, wz)

        ca, sa = math.cos(s.alpha), math.sin(s.alpha)
        cb, sb = math.cos(s.beta), math.sin(s.beta)
        wind_a = wy - (wx * ca + wz * sa) * sb / cb if self.couple_rates else 0.0
        wind_b = wx * sa - wz * ca if self.couple_rates else 0.0
        a1 = (V_ref - s.V) / self.tau_V
        a2 = ((a_ref - s.alpha) / self.tau_alpha - wind_a) * s.V * cb
        a3 = (-s.beta / self.tau_beta - wind_b) * s.V
        # wind-axis unit vectors expressed in body axes (orthonormal)
        fx = a1 * ca * cb - a2 * sa - a3 * ca * sb
        fy = a1 * sb + a3 * cb
        fz = a1 * sa * cb + a2 * ca - a3 * sa * sb
        G = LoadFactors(fx / G0 + st, fy / G0 - sf * ct, fz / G0 - cf * ct)
        wind = WindRates(*rates) if self.couple_rates else WindRates()
        return rates, G, wind


def _deg(x):
    return math.radians(x)


def level_flight(V0=100.0, altitude=1000.0, dt=0.02):
    """Trimmed straight and level flight with zero angles: a fixed point."""
    return ManeuverProfile("level", V0=V0, alpha0=0.0, altitude=altitude, dt=dt)


# presets emulating the aircraft / flight-condition rows of the data table
PRESETS = {
    "Y_lto_manual": ManeuverProfile(
        "Y_lto_manual", V0=75.0, alpha0=_deg(4.0), theta0=_deg(6.0), altitude=300.0, dt=0.05,
        V_ref=Sinusoids((8.0, 3.0), (1 / 240, 1 / 47)),
        alpha_ref=Sinusoids((_deg(2.0), _deg(0.8)), (1 / 90, 1 / 13)),
        theta_ref=Sinusoids((_deg(5.0), _deg(1.5)), (1 / 120, 1 / 17)),
        phi_ref=Sinusoids((_deg(15.0), _deg(4.0)), (1 / 75, 1 / 11)),
        yaw_rate=Sinusoids((_deg(1.0),), (1 / 150,)),
        gust_intensity=1.5, gust_timescale=1.5),
    "B1_cruise_ap": ManeuverProfile(
        "B1_cruise_ap", V0=230.0, alpha0=_deg(2.5), altitude=10000.0, dt=0.05,
        V_ref=Sinusoids((2.0, 0.5), (1 / 300, 1 / 37)),
        alpha_ref=Sinusoids((_deg(0.4), _deg(0.15)), (1 / 200, 1 / 23)),
        theta_ref=Sinusoids((_deg(1.0), _deg(0.3)), (1 / 180, 1 / 29)),
        phi_ref=Sinusoids((_deg(5.0), _deg(1.0)), (1 / 160, 1 / 19)),
        yaw_rate=Sinusoids((_deg(0.3),), (1 / 400,)),
        gust_intensity=0.5, gust_timescale=3.0),
    "B1_free_manual": ManeuverProfile(
        "B1_free_manual", V0=150.0, alpha0=_deg(4.0), altitude=1500.0, dt=0.05,
        V_ref=Sinusoids((10.0, 4.0), (1 / 180, 1 / 31)),
        alpha_ref=Sinusoids((_deg(2.0), _deg(1.0)), (1 / 60, 1 / 9)),
        theta_ref=Sinusoids((_deg(6.0), _deg(2.0)), (1 / 80, 1 / 14)),
        phi_ref=Sinusoids((_deg(25.0), _deg(6.0)), (1 / 70, 1 / 10)),
        yaw_rate=Sinusoids((_deg(2.0),), (1 / 120,)),
        gust_intensity=2.0, gust_timescale=1.0),
    "B2_lto_manual": ManeuverProfile(
        "B2_lto_manual", V0=85.0, alpha0=_deg(5.0), theta0=_deg(3.0), altitude=400.0, dt=1 / 30,
        V_ref=Sinusoids((10.0, 2.0), (1 / 200, 1 / 41)),
        alpha_ref=Sinusoids((_deg(2.5), _deg(0.7)), (1 / 100, 1 / 12)),
        theta_ref=Sinusoids((_deg(6.0), _deg(1.0)), (1 / 110, 1 / 15)),
        phi_ref=Sinusoids((_deg(12.0), _deg(3.0)), (1 / 85, 1 / 12)),
        yaw_rate=Sinusoids((_deg(1.5),), (1 / 130,)),
        gust_intensity=1.5, gust_timescale=1.2),
    "D_cruise_ap": ManeuverProfile(
        "D_cruise_ap", V0=70.0, alpha0=_deg(3.0), altitude=3000.0, dt=0.05,
        V_ref=Sinusoids((2.0, 0.5), (1 / 250, 1 / 33)),
        alpha_ref=Sinusoids((_deg(0.6), _deg(0.2)), (1 / 150, 1 / 21)),
        theta_ref=Sinusoids((_deg(1.5), _deg(0.4)), (1 / 140, 1 / 27)),
        phi_ref=Sinusoids((_deg(6.0), _deg(1.5)), (1 / 130, 1 / 17)),
        yaw_rate=Sinusoids((_deg(0.5),), (1 / 300,)),
        gust_intensity=0.8, gust_timescale=2.5),
}


# ---------------------------------------------------------------------------
# disturbances

GUST_LENGTH_SCALE = 100.0  # m, maps gust velocity intensity to an angular rate


def dryden_disturbance(seed, dt, n, intensity, timescale, length_scale=GUST_LENGTH_SCALE):
    """First-order Gauss-Markov surrogate of Dryden turbulence, shape (n, 3) rad/s.

    Each axis is an exponentially correlated process with stationary std
    ``intensity / length_scale`` and correlation time ``timescale``; the
    first sample is drawn from the stationary distribution.
    """
    if intensity < 0 or timescale <= 0:
        raise ValueError("intensity must be >= 0 and timescale > 0")
    out = np.zeros((n, 3))
    if intensity == 0 or n == 0:
        return out
    sigma = intensity / length_scale
    rho = math.exp(-dt / timescale)
    drive = sigma * math.sqrt(1.0 - rho * rho)
    xi = np.random.default_rng(seed).standard_normal((n, 3))
    # the recursion is a first-order IIR filter
    zi = (sigma * xi[0] * rho)[None, :]
    out[0] = sigma * xi[0]
    if n > 1:
        out[1:] = lfilter([drive], [1.0, -rho], xi[1:], axis=0, zi=zi)[0]
    return out


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class SensorTrajectory:
    sample_rate: float
    clean: np.ndarray  # (n, 15)
    measured: np.ndarray  # (n, 15)
    labels: np.ndarray  # (n,) uint8
    channels: tuple = CHANNELS

    @property
    def n(self):
        return len(self.clean)

    @property
    def times(self):
        return np.arange(self.n) / self.sample_rate

    @property
    def duration(self):
        return (self.n - 1) / self.sample_rate

    def copy(self):
        return replace(self, clean=self.clean.copy(), measured=self.measured.copy(),
                       labels=self.labels.copy())

    def to_bytes(self):
        buf = io.BytesIO()
        buf.write(b"FDCT")
        buf.write(struct.pack("<IdQI", 1, float(self.sample_rate), self.n, len(self.channels)))
        for name in self.channels:
            raw = name.encode()
            buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(np.ascontiguousarray(self.clean, "<f8").tobytes())
        buf.write(np.ascontiguousarray(self.measured, "<f8").tobytes())
        buf.write(np.ascontiguousarray(self.labels, "u1").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes):
        if data[:4] != b"FDCT":
            raise ValueError("not a trajectory container (bad magic)")
        version, rate, n, nch = struct.unpack_from("<IdQI", data, 4)
        if version != 1:
            raise ValueError(f"unsupported trajectory version {version}")
        off = 4 + struct.calcsize("<IdQI")
        names = []
        for _ in range(nch):
            (ln,) = struct.unpack_from("<H", data, off)
            names.append(data[off + 2:off + 2 + ln].decode())
            off += 2 + ln
        need = off + 2 * n * nch * 8 + n
        if len(data) != need:
            raise ValueError(f"trajectory container truncated: {len(data)} of {need} bytes")
        block = n * nch * 8
        clean = np.frombuffer(data, "<f8", n * nch, off).reshape(n, nch).copy()
        measured = np.frombuffer(data, "<f8", n * nch, off + block).reshape(n, nch).copy()
        labels = np.frombuffer(data, "u1", n, off + 2 * block).copy()
        return cls(rate, clean, measured, labels, tuple(names))

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def _pack(s: AircraftState):
    return np.array([getattr(s, k) for k in _INTEGRATED])


def _unpack(y, rates):
    V, al, be, psi, th, phi, x, yy, z = y
    return AircraftState(V, al, be, psi, th, phi, rates[0], rates[1], rates[2], x, yy, z)


def simulate_trajectory(profile: ManeuverProfile, dt=None, duration=300.0, seed=0) -> SensorTrajectory:
    """Integrate ``profile`` with classical RK4; returns clean channels only.

    Gusts from :func:`dryden_disturbance` are held constant over each step.
    """
    dt = profile.dt if dt is None else dt
    if dt > 0.05 + 1e-12:
        raise ValueError(f"dt={dt} exceeds 0.05 s")
    n = int(round(duration / dt)) + 1
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    phase_seed, gust_seed = ss.spawn(2)
    phases = np.random.default_rng(phase_seed).uniform(0, 2 * np.pi, profile.n_phases)
    gusts = dryden_disturbance(gust_seed, dt, n, profile.gust_intensity, profile.gust_timescale)

    def f(t, y, gust):
        s = _unpack(y, (0.0, 0.0, 0.0))
        rates, G, wind = profile.commands(t, s, phases)
        s = s._replace(wx=rates[0], wy=rates[1], wz=rates[2])
        wind = WindRates(wind.wx + gust[0], wind.wy + gust[1], wind.wz + gust[2])
        try:
            return np.array(state_derivative(s, G, wind))
        except SingularityError as e:
            raise SingularityError(str(e), t) from None

    out = np.empty((n, N_CHANNELS))
    y = _pack(profile.initial_state())
    for k in range(n):
        t = k * dt
        s = _unpack(y, (0.0, 0.0, 0.0))
        rates, G, _ = profile.commands(t, s, phases)
        if not y[0] > 0:
            raise ValueError(f"profile drove airspeed to {y[0]:.3f} m/s at t={t:.2f}s")
        out[k] = (y[0], y[1], y[2], G.Gx, G.Gy, G.Gz, *rates, y[3], y[4], y[5], y[6], y[7], y[8])
        if k == n - 1:
            break
        g = gusts[k]
        k1 = f(t, y, g)
        k2 = f(t + dt / 2, y + dt / 2 * k1, g)
        k3 = f(t + dt / 2, y + dt / 2 * k2, g)
        k4 = f(t + dt, y + dt * k3, g)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return SensorTrajectory(1.0 / dt, out, out.copy(), np.zeros(n, np.uint8))


# ---------------------------------------------------------------------------
# measurement noise


@dataclass(frozen=True)
class NoiseSpec:
    """Per-sensor noise std in table units (deg, deg/s, g, m/s, m)."""
    V: float = 0.1  # m/s
    flow_angles: float = 0.1  # deg
    load_factors: float = 0.01  # g
    rates: float = 0.01  # deg/s
    attitude: float = 0.01  # deg
    position: float = 1.0  # m

    def __post_init__(self):
        if min(self.V, self.flow_angles, self.load_factors, self.rates,
               self.attitude, self.position) < 0:
            raise ValueError("noise std must be >= 0")

    def sigma(self):
        """Std per channel in internal units, CHANNELS order."""
        a, r, t = (math.radians(self.flow_angles), math.radians(self.rates),
                   math.radians(self.attitude))
        lf = self.load_factors
        return np.array([self.V, a, a, lf, lf, lf, r, r, r, t, t, t,
                         self.position, self.position, self.position])

    @classmethod
    def zero(cls):
        return cls(0, 0, 0, 0, 0, 0)


def add_measurement_noise(traj: SensorTrajectory, spec: NoiseSpec = NoiseSpec(), seed=0) -> SensorTrajectory:
    sig = spec.sigma()
    noise = np.random.default_rng(seed).standard_normal(traj.clean.shape) * sig
    return replace(traj, measured=traj.clean + noise, labels=traj.labels.copy())
