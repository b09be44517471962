import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from manipred.errors import FormatError, InvalidArgument, SensorSaturation
from manipred.forcesignal import (ForceRecording, ForceTrace, NormParams, SensorCalibration,
                                  condition, denormalize, fit_norm, force_to_volts,
                                  normalize, notch_filter, read_recording, resample_frames,
                                  volts_to_force, write_recording)

FS = 1000.0


def sine_amplitude(y, f, fs):
    """Least-squares amplitude of a sinusoid at ``f`` (with offset) fitted to ``y``."""
    t = np.arange(len(y)) / fs
    A = np.stack([np.sin(2 * np.pi * f * t), np.cos(2 * np.pi * f * t), np.ones_like(t)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(np.hypot(coef[0], coef[1]))


def tone(f, n=4000, fs=FS, amp=1.0):
    t = np.arange(n) / fs
    return ForceTrace(amp * np.sin(2 * np.pi * f * t), fs, ("x",))


def test_calibration_spot_values():
    cal = SensorCalibration(v_in=5.0, c1=1.0, c2=0.0)
    assert volts_to_force(cal, 2.5) == 4.448
    zero = SensorCalibration(v_in=5.0, c1=1.0, c2=1.0)  # ratio term is 1 at V_in / 2
    assert volts_to_force(zero, 2.5) == 0.0
    assert volts_to_force(cal, 4.999) == 8.896
    with pytest.raises(SensorSaturation):
        volts_to_force(cal, 5.0)


@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_calibration_monotone(a, b):
    cal = SensorCalibration(v_in=5.0, c1=0.5, c2=0.0, f_max=np.inf)
    lo, hi = sorted((a, b))
    assert volts_to_force(cal, lo) <= volts_to_force(cal, hi)


def test_force_to_volts_inverts_calibration():
    cal = SensorCalibration(v_in=5.0, c1=1.3, c2=0.2)
    f = np.linspace(0.1, 8.0, 20)
    np.testing.assert_allclose(volts_to_force(cal, force_to_volts(cal, f)), f, atol=1e-12)


def test_notch_attenuates_f0():
    y = notch_filter(tone(60.0)).values[:, 0]
    assert sine_amplitude(y, 60.0, FS) <= 10 ** (-30 / 20)


def test_notch_passes_quarter_frequency():
    y = notch_filter(tone(15.0)).values[:, 0]
    gain_db = 20 * np.log10(sine_amplitude(y, 15.0, FS))
    assert abs(gain_db) <= 1.0


def test_notch_dc_and_linearity():
    dc = ForceTrace(np.full((500, 2), 3.7), FS, ("a", "b"))
    np.testing.assert_allclose(notch_filter(dc).values, 3.7, atol=1e-9)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(600, 1)), rng.normal(size=(600, 1))
    fx = notch_filter(ForceTrace(x, FS, ("c",))).values
    fy = notch_filter(ForceTrace(y, FS, ("c",))).values
    fxy = notch_filter(ForceTrace(2.0 * x - 0.5 * y, FS, ("c",))).values
    np.testing.assert_allclose(fxy, 2.0 * fx - 0.5 * fy, atol=1e-9)


def test_notch_zero_phase_symmetry():
    t = np.arange(801)
    pulse = np.exp(-0.5 * ((t - 400) / 20.0) ** 2)
    y = notch_filter(ForceTrace(pulse, FS, ("p",))).values[:, 0]
    np.testing.assert_allclose(y, y[::-1], atol=1e-6)


def test_notch_frequency_range():
    with pytest.raises(InvalidArgument):
        notch_filter(tone(10.0, fs=100.0), f0=60.0)


def test_normalize_rules():
    tr = ForceTrace(np.array([[1.0, 4.0], [2.0, 4.0], [3.0, 4.0]]), 30.0, ("a", "b"))
    out, params = normalize(tr)
    np.testing.assert_allclose(out.values[:, 0], [0, 0.5, 1.0])
    np.testing.assert_array_equal(out.values[:, 1], 0.0)
    back = denormalize(out, params)
    np.testing.assert_allclose(back.values, tr.values, atol=1e-9)
    ends = denormalize(ForceTrace(np.array([[0.0, 0.0], [1.0, 1.0]]), 30.0, ("a", "b")), params)
    np.testing.assert_array_equal(ends.values[:, 0], [1.0, 3.0])
    np.testing.assert_array_equal(ends.values[:, 1], [4.0, 4.0])
    with pytest.raises(InvalidArgument):
        denormalize(ForceTrace(np.zeros((2, 3)), 30.0, ("a", "b", "c")), params)


def test_normalize_with_training_range_clips():
    params = NormParams(np.array([0.0]), np.array([2.0]))
    out, same = normalize(ForceTrace(np.array([-1.0, 1.0, 5.0]), 30.0, ("a",)), params)
    np.testing.assert_array_equal(out.values[:, 0], [0.0, 0.5, 1.0])
    assert same is params


@given(st.integers(0, 10_000))
def test_normalize_roundtrip_property(seed):
    x = np.random.default_rng(seed).uniform(0, 9, size=(20, 4))
    out, params = normalize(ForceTrace(x, 30.0))
    assert np.all((out.values >= 0) & (out.values <= 1))
    np.testing.assert_allclose(denormalize(out, params).values, x, atol=1e-9)


def test_fit_norm_pools_traces():
    a = ForceTrace(np.array([[0.0], [1.0]]), 30.0, ("a",))
    b = ForceTrace(np.array([[3.0], [2.0]]), 30.0, ("a",))
    p = fit_norm([a, b])
    assert p.lo[0] == 0.0 and p.hi[0] == 3.0


def test_resample_frames_linear():
    tr = ForceTrace(np.arange(9.0)[:, None], 240.0, ("a",))
    out = resample_frames(tr, 3)
    np.testing.assert_allclose(out.values[:, 0], [0.0, 4.0, 8.0])
    assert out.sample_rate == pytest.approx(60.0)


def test_recording_roundtrip_and_conditioning(tmp_path):
    cal = SensorCalibration(v_in=5.0, c1=1.0, c2=0.0)
    fs = 240.0
    t = np.arange(961) / fs
    forces = np.stack([4.0 + np.sin(2 * np.pi * 0.5 * t), 2.0 + 0 * t], axis=1)
    volts = force_to_volts(cal, forces) + 0.02 * np.sin(2 * np.pi * 60 * t)[:, None]
    rec = ForceRecording(volts, fs, ("thumb", "ring"), cal)
    path = tmp_path / "r.frec"
    write_recording(path, rec)
    back = read_recording(path)
    assert back.channels == ("thumb", "ring") and back.sample_rate == fs
    np.testing.assert_array_equal(back.volts, volts.astype(np.float32).astype(np.float64))
    clean = condition(back, n_frames=121)
    assert clean.values.shape == (121, 2)
    # interior frames land on 8x-decimated samples of the noise-free forces
    err = np.abs(clean.values[10:-10] - forces[::8][10:-10])
    assert err.max() < 0.05
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(FormatError, match="truncated"):
        read_recording(path)
    path.write_bytes(b"NOPE" + data[4:])
    with pytest.raises(FormatError, match="magic"):
        read_recording(path)
