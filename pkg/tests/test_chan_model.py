import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinytwin.chan_model import (
    FIXED_HEADER_SIZE,
    CirTrace,
    DelayGrid,
    PdpProfile,
    SparseTaps,
    file_size,
    identity_trace,
    load_trace,
    parse_trace,
    sidecar_path,
    tap_power_db,
    write_trace,
)
from tinytwin.errors import (
    BadMagic,
    NonFiniteTap,
    StepOutOfRange,
    Truncated,
    UnsupportedVersion,
    ValidationError,
)


def rand_trace(rng, T=5, L=3, label="t"):
    taps = rng.standard_normal((T, L)) + 1j * rng.standard_normal((T, L))
    return CirTrace(DelayGrid(L, 1.92e6), taps, label=label)


# -- delay grid --------------------------------------------------------------

def test_grid_spacing_is_sample_period():
    g = DelayGrid(4, 1.92e6)
    assert g.bin_spacing_ns == pytest.approx(1e9 / 1.92e6, rel=1e-15)
    assert g.bin_spacing * g.sample_rate == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(g.bin_delays_ns(), np.arange(4) * 1e9 / 1.92e6)


@pytest.mark.parametrize("sr", [1.92e6, 3.84e6, 7.68e6, 30.72e6, 1e6, 122.88e6])
def test_grid_round_trips_through_spacing(sr):
    g = DelayGrid(7, sr)
    assert DelayGrid.from_spacing_ns(7, g.bin_spacing_ns) == g


@pytest.mark.parametrize("bins,sr", [(0, 1e6), (-1, 1e6), (3, 0.0), (3, -5.0), (3, float("nan"))])
def test_grid_rejects_bad_fields(bins, sr):
    with pytest.raises(ValidationError):
        DelayGrid(bins, sr)


# -- trace container ---------------------------------------------------------

def test_identity_trace():
    t = identity_trace()
    assert (t.num_steps, t.num_bins) == (1, 1)
    assert t.taps[0, 0] == 1 + 0j


def test_trace_is_immutable_complex64():
    t = rand_trace(np.random.default_rng(0))
    assert t.taps.dtype == np.complex64
    with pytest.raises(ValueError):
        t.taps[0, 0] = 3


def test_trace_rejects_wrong_shape_and_nan():
    g = DelayGrid(3, 1e6)
    with pytest.raises(ValidationError):
        CirTrace(g, np.ones((4, 2)))
    bad = np.ones((4, 3), complex)
    bad[2, 1] = np.nan
    with pytest.raises(NonFiniteTap, match="step 2, bin 1"):
        CirTrace(g, bad)
    with pytest.raises(ValidationError):
        CirTrace(g, np.ones((1, 3)), time_step=0)


def test_looping_replay():
    t = rand_trace(np.random.default_rng(1), T=7)
    for s in range(60):
        assert np.array_equal(t.step_taps(s), t.step_taps(s % 7))


# -- file format -------------------------------------------------------------

def test_round_trip_bit_exact(tmp_path):
    t = rand_trace(np.random.default_rng(2), T=11, L=4, label="UMa-60kmh")
    write_trace(t, tmp_path / "a.cirt")
    u = load_trace(tmp_path / "a.cirt")
    assert u == t
    assert u.taps.tobytes() == t.taps.tobytes()


@settings(max_examples=60, deadline=None)
@given(T=st.integers(1, 12), L=st.integers(1, 9), seed=st.integers(0, 2**32 - 1),
       label=st.text(max_size=20), sr=st.sampled_from([1e6, 1.92e6, 7.68e6, 30.72e6]),
       step=st.sampled_from([1e-3, 5e-4, 0.125e-3]))
def test_round_trip_property(tmp_path_factory, T, L, seed, label, sr, step):
    rng = np.random.default_rng(seed)
    taps = (rng.standard_normal((T, L)) + 1j * rng.standard_normal((T, L))) * 10.0 ** rng.uniform(-6, 3)
    t = CirTrace(DelayGrid(L, sr), taps, time_step=step, label=label)
    blob = (tmp_path_factory.mktemp("rt") / "x.cirt")
    write_trace(t, blob)
    assert load_trace(blob) == t


def test_file_size_arithmetic(tmp_path):
    t = CirTrace(DelayGrid(20, 1.92e6), np.ones((1000, 20)), label="x")
    write_trace(t, tmp_path / "s.cirt")
    size = (tmp_path / "s.cirt").stat().st_size
    # 42-byte fixed header + 1-byte label + 1000 * 20 * 8 payload bytes
    assert size == 42 + 1 + 1000 * 20 * 8 == file_size(1000, 20, "x") == 160043


def test_header_fields_echo(tmp_path):
    t = CirTrace(DelayGrid(5, 1.92e6), np.ones((9, 5)), time_step=1e-3, carrier_freq=3.5e9, label="ab")
    write_trace(t, tmp_path / "h.cirt")
    raw = (tmp_path / "h.cirt").read_bytes()
    magic, ver, flags, T, L, sp, ts, fc, n = struct.unpack_from("<4sHHIIdddH", raw)
    assert (magic, ver, flags, T, L, n) == (b"CIRT", 1, 0, 9, 5, 2)
    assert sp == pytest.approx(1e9 / 1.92e6) and ts == pytest.approx(1000.0) and fc == 3.5e9
    assert raw[FIXED_HEADER_SIZE:FIXED_HEADER_SIZE + 2] == b"ab"


def test_sidecar_mirrors_header(tmp_path):
    t = rand_trace(np.random.default_rng(3))
    write_trace(t, tmp_path / "m.cirt", sidecar=True, extra_meta={"doppler_hz": 16.2})
    meta = json.loads(sidecar_path(tmp_path / "m.cirt").read_text())
    assert sidecar_path(tmp_path / "m.cirt").name == "m.meta.json"
    assert meta["num_steps"] == 5 and meta["num_bins"] == 3 and meta["doppler_hz"] == 16.2


def test_nan_rejected_before_write(tmp_path):
    t = rand_trace(np.random.default_rng(4))
    object.__setattr__(t, "taps", np.full((2, 3), np.nan, np.complex64))
    with pytest.raises(NonFiniteTap):
        write_trace(t, tmp_path / "n.cirt")
    assert list(tmp_path.iterdir()) == []


def _blob():
    t = rand_trace(np.random.default_rng(5), T=3, L=2, label="lab")
    from tinytwin.chan_model import _encode_header
    return _encode_header(t) + np.ascontiguousarray(t.taps, "<c8").tobytes()


def test_bad_magic(tmp_path):
    data = b"XXXX" + _blob()[4:]
    with pytest.raises(BadMagic) as ei:
        parse_trace(data)
    assert ei.value.offset == 0


def test_unsupported_version():
    data = bytearray(_blob())
    data[4:6] = struct.pack("<H", 9)
    with pytest.raises(UnsupportedVersion) as ei:
        parse_trace(bytes(data))
    assert ei.value.offset == 4


@pytest.mark.parametrize("cut", [0, 3, 10, 41, 44, 50, -1])
def test_truncated_names_offset(cut):
    data = _blob()
    data = data[:cut] if cut >= 0 else data[:cut]
    with pytest.raises(Truncated) as ei:
        parse_trace(data)
    assert ei.value.offset is not None and str(ei.value.offset) in str(ei.value)


def test_trailing_bytes_rejected():
    with pytest.raises(Truncated):
        parse_trace(_blob() + b"\0")


def test_non_finite_in_file_names_offset():
    data = bytearray(_blob())
    off = FIXED_HEADER_SIZE + 3 + 8 * 4 + 4   # step 2, bin 0, imag part
    data[off:off + 4] = struct.pack("<f", float("inf"))
    with pytest.raises(NonFiniteTap) as ei:
        parse_trace(bytes(data))
    assert ei.value.offset == off


# -- tap power ---------------------------------------------------------------

def one_step(taps):
    taps = np.asarray(taps, complex)
    return CirTrace(DelayGrid(taps.size, 1e6), taps[None, :])


@pytest.mark.parametrize("taps,expected", [
    ([1], 0.0),
    ([1 / math.sqrt(2), 1 / math.sqrt(2)], 0.0),
    ([0.6, 0.8j], 0.0),
    ([0.3, 0.4j], 10 * math.log10(0.25)),
])
def test_tap_power_db(taps, expected):
    assert tap_power_db(one_step(taps), 0) == pytest.approx(expected, abs=1e-6)


def test_tap_power_db_example_value():
    assert tap_power_db(one_step([0.3, 0.4j]), 0) == pytest.approx(-6.0206, abs=1e-4)


def test_step_out_of_range():
    t = one_step([1])
    for s in (-1, 1, 5):
        with pytest.raises(StepOutOfRange):
            tap_power_db(t, s)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(-20, 20))
def test_power_scaling_exact_for_binary_scale(seed, k):
    # powers of two scale float32 taps without rounding, so the shift is exact
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    c = 2.0 ** k
    d = tap_power_db(one_step(h * c), 0) - tap_power_db(one_step(h), 0)
    assert abs(d - 20 * math.log10(c)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(1e-3, 1e3))
def test_power_scaling_general(seed, c):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    d = tap_power_db(one_step(h * c), 0) - tap_power_db(one_step(h), 0)
    # float32 storage rounds each scaled tap by up to 2^-24 relative
    assert abs(d - 20 * math.log10(c)) < 1e-5


# -- PDP and sparse containers -----------------------------------------------

def test_pdp_normalizes():
    p = PdpProfile([0, 100, 300], [0, -3, -10])
    assert p.path_powers.sum() == pytest.approx(1.0)
    assert p.path_powers[0] / p.path_powers[1] == pytest.approx(10 ** 0.3)


@pytest.mark.parametrize("d,p", [([], []), ([0, 1], [0]), ([5, 1], [0, 0]), ([-1], [0])])
def test_pdp_rejects(d, p):
    with pytest.raises(ValidationError):
        PdpProfile(d, p)


def test_sparse_taps_invariants():
    s = SparseTaps([0, 2], [1, 2j], 4)
    assert s.entries == [(0, 1 + 0j), (2, 2j)]
    with pytest.raises(ValidationError):
        SparseTaps([2, 1], [1, 1], 4)
    with pytest.raises(ValidationError):
        SparseTaps([0, 4], [1, 1], 4)
