import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcbproto import frontend as fe
from rcbproto.frontend import AudioError, FeatureFileError, LogMelFeature, Waveform


def sine(freq, seconds=0.5, amp=0.5):
    t = np.arange(int(fe.SAMPLE_RATE * seconds)) / fe.SAMPLE_RATE
    return Waveform(amp * np.sin(2 * np.pi * freq * t))


# --- log-mel ------------------------------------------------------------------

def test_silence_seven_seconds():
    feat = fe.log_mel(Waveform(np.zeros(7 * fe.SAMPLE_RATE)))
    assert feat.values.shape == (80, 698)
    assert (feat.values == math.log(1e-10)).all()


@pytest.mark.parametrize("n, expected", [(400, 1), (559, 1), (560, 2), (16000, 98), (48000, 298)])
def test_frame_count_examples(n, expected):
    assert fe.n_frames_for(n) == expected
    assert fe.log_mel(Waveform(np.zeros(n))).n_frames == expected


@settings(max_examples=50, deadline=None)
@given(st.integers(400, 20000))
def test_frame_count_formula(n):
    assert fe.n_frames_for(n) == (n - 400) // 160 + 1


def test_short_waveform_and_wrong_rate():
    with pytest.raises(AudioError):
        fe.log_mel(Waveform(np.zeros(399)))
    with pytest.raises(AudioError):
        fe.log_mel(Waveform(np.zeros(1000), sample_rate=8000))
    with pytest.raises(AudioError):
        Waveform(np.zeros(0))


# filters 0 and 1 are narrower than the 31.25 Hz FFT bin spacing, so a sine at
# filter 1's center leaks more energy into filter 0 or 2 after bin sampling
@pytest.mark.parametrize("k", [0] + list(range(2, 80, 7)) + [78, 79])
def test_sine_at_filter_center_peaks_in_that_filter(k):
    f = fe.mel_center_frequencies(80)[k]
    feat = fe.log_mel(sine(f)).values
    interior = feat[:, 2:-2]
    assert (interior.argmax(axis=0) == k).all()


def test_filterbank_rows_nonnegative_and_peak_at_one():
    fb = fe.mel_filterbank(80)
    assert fb.shape == (80, 257)
    assert (fb >= 0).all()
    centers = fe.mel_center_frequencies(80)
    peaks = np.diag(fe.triangle_response(centers, 80))
    np.testing.assert_allclose(peaks, 1.0, rtol=0, atol=1e-12)
    assert (fb <= 1.0 + 1e-12).all()


def test_mel_scale_htk_values():
    assert fe.hz_to_mel(700.0) == pytest.approx(2595.0 * math.log10(2.0))
    np.testing.assert_allclose(fe.mel_to_hz(fe.hz_to_mel([0.0, 1000.0, 8000.0])), [0.0, 1000.0, 8000.0])
    edges = fe.mel_band_edges(80)
    assert edges[0] == 0.0 and edges[-1] == pytest.approx(8000.0)


def test_log_mel_matches_direct_pipeline(rng):
    samples = rng.uniform(-1, 1, 1200)
    feat = fe.log_mel(Waveform(samples)).values
    window = 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(400) / 399)
    fb = fe.mel_filterbank(80)
    for t in range(fe.n_frames_for(1200)):
        frame = samples[t * 160 : t * 160 + 400] * window
        spec = np.abs(np.fft.rfft(frame, 512)) ** 2
        expected = np.log(np.maximum(fb @ spec, 1e-10))
        np.testing.assert_allclose(feat[:, t], expected, rtol=1e-12, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 20.0), st.integers(0, 2**32 - 1))
def test_scaling_shifts_log_mel_by_two_log_s(s, seed):
    x = np.random.default_rng(seed).uniform(-0.05, 0.05, 800)
    base = fe.log_mel(Waveform(x)).values
    scaled = fe.log_mel(Waveform(s * x)).values
    above = (base > math.log(1e-10) + 1.0) & (scaled > math.log(1e-10) + 1.0)
    np.testing.assert_allclose(scaled[above] - base[above], 2 * math.log(s), rtol=0, atol=1e-9)


# --- WAV ----------------------------------------------------------------------

def test_wav_round_trip(tmp_path):
    w = sine(440.0, 0.1)
    path = tmp_path / "a.wav"
    fe.write_wav(path, w)
    back = fe.read_wav(path)
    assert back.sample_rate == 16000
    np.testing.assert_allclose(back.samples, w.samples, atol=1 / 32768)


def test_malformed_wav(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"RIFFnonsense")
    with pytest.raises(AudioError):
        fe.read_wav(path)


# --- feature files ----------------------------------------------------------------

def test_feature_round_trip_bitwise(tmp_path, rng):
    values = rng.standard_normal((80, 698)).astype(np.float32)
    path = tmp_path / "f.fgf"
    fe.write_features(path, LogMelFeature(values.astype(np.float64)))
    back = fe.read_features(path)
    assert back.values.dtype == np.float64
    np.testing.assert_array_equal(back.values.astype(np.float32).view(np.uint32), values.view(np.uint32))
    blob = path.read_bytes()
    assert blob[:4] == b"FGFI" and struct.unpack("<III", blob[4:16]) == (1, 80, 698)
    assert len(blob) == 16 + 4 * 80 * 698


def _write_raw(path, magic=b"FGFI", version=1, H=80, T=10, payload_cells=None):
    cells = H * T if payload_cells is None else payload_cells
    path.write_bytes(struct.pack("<4sIII", magic, version, H, T) + b"\0" * 4 * cells)
    return path


@pytest.mark.parametrize(
    "kwargs, kind",
    [
        (dict(magic=b"RIFF"), "bad_magic"),
        (dict(version=2), "unsupported_version"),
        (dict(payload_cells=799), "truncated"),
        (dict(H=0), "bad_dimensions"),
        (dict(H=1 << 20, T=1 << 20, payload_cells=0), "dimension_overflow"),
    ],
)
def test_malformed_feature_headers(tmp_path, kwargs, kind):
    path = _write_raw(tmp_path / "x.fgf", **kwargs)
    with pytest.raises(FeatureFileError) as err:
        fe.read_features(path)
    assert err.value.kind == kind


def test_short_header_is_truncated(tmp_path):
    path = tmp_path / "x.fgf"
    path.write_bytes(b"FGFI\x01\x00")
    with pytest.raises(FeatureFileError) as err:
        fe.read_features(path)
    assert err.value.kind == "truncated"


def test_feature_validation():
    with pytest.raises(ValueError):
        LogMelFeature(np.zeros((80, 0)))
    with pytest.raises(ValueError):
        LogMelFeature(np.array([[np.nan]]))


# --- manifest -------------------------------------------------------------------

def test_manifest_round_trip_resolves_relative_paths(tmp_path):
    (tmp_path / "sub").mkdir()
    manifest = tmp_path / "m.tsv"
    fe.write_manifest(manifest, [("spk1", "sub/a.fgf"), ("spk2", "/abs/b.fgf")])
    assert manifest.read_text() == "spk1\tsub/a.fgf\nspk2\t/abs/b.fgf\n"
    assert fe.read_manifest(manifest) == [("spk1", str(tmp_path / "sub/a.fgf")), ("spk2", "/abs/b.fgf")]


def test_manifest_rejects_bad_lines(tmp_path):
    manifest = tmp_path / "m.tsv"
    manifest.write_text("only-one-field\n")
    with pytest.raises(ValueError):
        fe.read_manifest(manifest)
    with pytest.raises(ValueError):
        fe.write_manifest(manifest, [("a\tb", "x")])
