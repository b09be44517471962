"""Fingertip force conditioning: calibration, notch filtering, normalization.

Force recording file (``.frec``), little-endian::

    magic        4 bytes  b"FREC"
    version      uint32   (1)
    sample_rate  float64  Hz
    M            uint32   channel count
    M times:     uint16 name length, UTF-8 name
    V_in         float64  supply voltage
    C1, C2       float64  divider constants
    T            uint32   sample count
    samples      float32 * T * M, frame-major (all channels of sample 0 first)

Samples are raw sensor voltages ``V_out``.
"""

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .container import atomic_write_bytes
from .errors import FormatError, InvalidArgument, SensorSaturation

LB_TO_NEWTON = 4.448
SENSOR_MAX_NEWTONS = 8.896
FINGERS = ("thumb", "pointer", "middle", "ring")

REC_MAGIC = b"FREC"
REC_VERSION = 1


@dataclass(frozen=True)
class SensorCalibration:
    v_in: float
    c1: float
    c2: float
    f_max: float = SENSOR_MAX_NEWTONS

    def __post_init__(self):
        if not self.v_in > 0:
            raise InvalidArgument("V_in must be positive")


@dataclass
class ForceTrace:
    values: np.ndarray  # (T, M)
    sample_rate: float
    channels: tuple = FINGERS
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[1] != len(self.channels):
            raise InvalidArgument(
                f"{self.values.shape[1]} columns but {len(self.channels)} channel names")
        self.channels = tuple(self.channels)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class NormParams:
    lo: np.ndarray = field(default=None)
    hi: np.ndarray = field(default=None)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise InvalidArgument("NormParams need matching shapes with max >= min")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


def volts_to_force(cal, v_out):
    """Newtons from sensor voltage, ``4.448 * (C1 * Vo / (Vin - Vo) - C2)``, clamped."""
    v = np.asarray(v_out, dtype=np.float64)
    if np.any(v >= cal.v_in):
        raise SensorSaturation(f"V_out reached V_in={cal.v_in} (sensor overload)")
    if np.any(v < 0):
        raise InvalidArgument("V_out must be non-negative")
    f = LB_TO_NEWTON * (cal.c1 * v / (cal.v_in - v) - cal.c2)
    f = np.clip(f, 0.0, cal.f_max)
    return float(f) if f.ndim == 0 else f


def force_to_volts(cal, force):
    """Inverse of the unclamped calibration, used to synthesize recordings."""
    ratio = (np.asarray(force, dtype=np.float64) / LB_TO_NEWTON + cal.c2) / cal.c1
    return cal.v_in * ratio / (1.0 + ratio)


def notch_coefficients(f0, q, sample_rate):
    """Second-order notch (audio-EQ cookbook form), normalized so a[0] = 1."""
    w0 = 2.0 * np.pi * f0 / sample_rate
    alpha = np.sin(w0) / (2.0 * q)
    cw = np.cos(w0)
    b = np.array([1.0, -2.0 * cw, 1.0])
    a = np.array([1.0 + alpha, -2.0 * cw, 1.0 - alpha])
    return b / a[0], a / a[0]


def notch_filter(trace, f0=60.0, q=30.0):
    """Zero-phase notch: the biquad is run forward, then backward, per channel.

    Edges use odd extension and steady-state initial conditions, with padding
    long enough for the notch's ring-down (about 2q/f0 seconds).
    """
    fs = trace.sample_rate
    if not 0 < f0 < fs / 2:
        raise InvalidArgument(f"notch frequency {f0} Hz outside (0, {fs / 2}) Hz")
    if not q > 0:
        raise InvalidArgument("q must be positive")
    b, a = notch_coefficients(f0, q, fs)
    x = trace.values
    T = x.shape[0]
    if T == 0:
        return replace(trace, values=x.copy())
    ring = int(np.ceil(6.0 * q * fs / (np.pi * f0)))
    padlen = min(T - 1, max(ring, 3 * len(a)))
    y = signal.filtfilt(b, a, x, axis=0, padtype="odd" if padlen > 0 else None,
                        padlen=padlen)
    return replace(trace, values=np.ascontiguousarray(y))


def normalize(trace, params=None):
    """Per-channel min-max scaling to [0, 1]; returns ``(trace, params)``.

    Without ``params`` the range comes from ``trace`` itself (training data).
    Values outside a supplied range are clipped. Constant channels map to 0.
    """
    x = trace.values
    if params is None:
        params = NormParams(x.min(axis=0), x.max(axis=0))
    elif params.lo.shape[0] != x.shape[1]:
        raise InvalidArgument(f"{params.lo.shape[0]} norm channels vs {x.shape[1]}")
    span = params.hi - params.lo
    safe = np.where(span > 0, span, 1.0)
    y = np.where(span > 0, (x - params.lo) / safe, 0.0)
    y = np.clip(y, 0.0, 1.0)
    return replace(trace, values=y, normalized=True), params


def denormalize(trace, params):
    x = trace.values
    if params.lo.shape[0] != x.shape[1]:
        raise InvalidArgument(f"{params.lo.shape[0]} norm channels vs {x.shape[1]}")
    return replace(trace, values=x * (params.hi - params.lo) + params.lo, normalized=False)


def fit_norm(traces):
    """Pooled per-channel range over several training traces."""
    stacked = np.concatenate([t.values for t in traces], axis=0)
    return NormParams(stacked.min(axis=0), stacked.max(axis=0))


def resample_frames(trace, n_frames):
    """Linear interpolation of a trace onto ``n_frames`` evenly spaced instants."""
    T = len(trace)
    if n_frames < 1 or T < 1:
        raise InvalidArgument("resampling needs non-empty input and output")
    src = np.arange(T, dtype=np.float64)
    dst = np.linspace(0.0, T - 1, n_frames)
    vals = np.stack([np.interp(dst, src, trace.values[:, m])
                     for m in range(trace.values.shape[1])], axis=1)
    rate = trace.sample_rate * (n_frames - 1) / (T - 1) if T > 1 and n_frames > 1 \
        else trace.sample_rate
    return replace(trace, values=vals, sample_rate=rate)


@dataclass
class ForceRecording:
    volts: np.ndarray  # (T, M) raw V_out
    sample_rate: float
    channels: tuple
    calibration: SensorCalibration

    def to_forces(self):
        return ForceTrace(volts_to_force(self.calibration, self.volts),
                          self.sample_rate, tuple(self.channels))


def condition(rec, n_frames=None, f0=60.0, q=30.0, norm=None, do_normalize=False):
    """Calibrate, notch-filter, optionally resample to video frames and normalize."""
    trace = rec.to_forces()
    if f0 is not None and f0 < trace.sample_rate / 2:
        trace = notch_filter(trace, f0, q)
    elif f0 is not None:
        raise InvalidArgument(
            f"notch frequency {f0} Hz is above Nyquist for {trace.sample_rate} Hz recording")
    if n_frames is not None and n_frames != len(trace):
        trace = resample_frames(trace, n_frames)
    if do_normalize or norm is not None:
        trace, _ = normalize(trace, norm)
    return trace


def write_recording(path, rec):
    v = np.ascontiguousarray(rec.volts, dtype="<f4")
    T, M = v.shape
    parts = [REC_MAGIC, struct.pack("<I", REC_VERSION),
             struct.pack("<d", rec.sample_rate), struct.pack("<I", M)]
    for name in rec.channels:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
    cal = rec.calibration
    parts.append(struct.pack("<3d", cal.v_in, cal.c1, cal.c2))
    parts.append(struct.pack("<I", T))
    parts.append(v.tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_recording(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(path, "file", exc.strerror or str(exc)) from None
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(path, what, "file truncated")
        out = data[pos:pos + n]
        pos += n
        return out

    if take(4, "magic") != REC_MAGIC:
        raise FormatError(path, "magic", "not a force recording")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != REC_VERSION:
        raise FormatError(path, "version", f"unsupported version {version}")
    (rate,) = struct.unpack("<d", take(8, "sample_rate"))
    (M,) = struct.unpack("<I", take(4, "channel count"))
    names = []
    for _ in range(M):
        (n,) = struct.unpack("<H", take(2, "channel name length"))
        names.append(take(n, "channel name").decode("utf-8"))
    v_in, c1, c2 = struct.unpack("<3d", take(24, "calibration"))
    (T,) = struct.unpack("<I", take(4, "sample count"))
    raw = take(4 * T * M, "samples")
    if pos != len(data):
        raise FormatError(path, "samples", "unexpected trailing bytes")
    if not rate > 0:
        raise FormatError(path, "sample_rate", f"{rate}")
    try:
        cal = SensorCalibration(v_in, c1, c2)
    except InvalidArgument as exc:
        raise FormatError(path, "V_in", str(exc)) from None
    volts = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(T, M)
    return ForceRecording(volts, rate, tuple(names), cal)
