"""16 kHz waveform -> log Mel-spectrogram, plus the binary feature-file format.

Feature file layout (little-endian)::

    b"FGFI" | version u32 (=1) | H u32 | T u32 | H*T float32, row-major (row = mel bin)
"""
from __future__ import annotations

import os
import struct
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

SAMPLE_RATE = 16000
N_FFT = 512
LOG_FLOOR = 1e-10

MAGIC = b"FGFI"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
# refuse to allocate more than this many cells from an untrusted header
MAX_CELLS = 1 << 28

PathLike = Union[str, os.PathLike]


class FeatureFileError(ValueError):
    """Malformed feature file. ``kind`` is one of ``bad_magic``,
    ``unsupported_version``, ``truncated``, ``dimension_overflow``, ``bad_dimensions``."""

    def __init__(self, kind: str, message: str, path: Optional[PathLike] = None):
        super().__init__(f"{kind}: {message}" + (f" ({path})" if path else ""))
        self.kind = kind
        self.path = path


class AudioError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioError("waveform must be a non-empty mono signal")


@dataclass
class LogMelFeature:
    values: np.ndarray  # (n_mels, n_frames)
    speaker_label: Optional[str] = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise ValueError(f"feature must be (H, T) with T >= 1, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("feature contains non-finite values")

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# mel filterbank
# ---------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels: int, f_min: float = 0.0, f_max: float = SAMPLE_RATE / 2) -> np.ndarray:
    """``n_mels + 2`` frequencies in Hz, equally spaced on the HTK mel scale."""
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))


def mel_center_frequencies(n_mels: int = 80) -> np.ndarray:
    return mel_band_edges(n_mels)[1:-1]


def triangle_response(freqs, n_mels: int = 80) -> np.ndarray:
    """Continuous triangular filter responses, shape ``(n_mels, len(freqs))``.

    Filter ``k`` rises linearly from edge ``k`` to 1 at edge ``k+1`` and falls
    back to 0 at edge ``k+2``.
    """
    edges = mel_band_edges(n_mels)
    f = np.asarray(freqs, dtype=np.float64)[None, :]
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (f - lo) / (mid - lo)
    falling = (hi - f) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_filterbank(n_mels: int = 80, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Filterbank matrix ``(n_mels, n_fft//2 + 1)`` sampled at the FFT bin frequencies."""
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    return triangle_response(bin_freqs, n_mels)


def n_frames_for(n_samples: int, frame_len: int = 400, hop: int = 160) -> int:
    if n_samples < frame_len:
        raise AudioError(f"need at least {frame_len} samples, got {n_samples}")
    return (n_samples - frame_len) // hop + 1


def log_mel(
    w: Waveform, frame_ms: float = 25, hop_ms: float = 10, n_mels: int = 80
) -> LogMelFeature:
    """Hamming-windowed 512-point power spectrum -> HTK mel filterbank -> natural log."""
    if w.sample_rate != SAMPLE_RATE:
        raise AudioError(f"expected {SAMPLE_RATE} Hz audio, got {w.sample_rate} Hz")
    frame_len = int(round(frame_ms * SAMPLE_RATE / 1000))
    hop = int(round(hop_ms * SAMPLE_RATE / 1000))
    if frame_len > N_FFT:
        raise AudioError(f"frame of {frame_len} samples exceeds the {N_FFT}-point FFT")
    T = n_frames_for(w.samples.size, frame_len, hop)

    starts = np.arange(T) * hop
    frames = w.samples[starts[:, None] + np.arange(frame_len)[None, :]]
    frames = frames * np.hamming(frame_len)[None, :]
    spectrum = np.fft.rfft(frames, n=N_FFT, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    energies = mel_filterbank(n_mels) @ power.T  # (n_mels, T)
    return LogMelFeature(np.log(np.maximum(energies, LOG_FLOOR)))


# ---------------------------------------------------------------------------
# audio / feature IO
# ---------------------------------------------------------------------------

def read_wav(path: PathLike) -> Waveform:
    """Read a mono PCM-16 WAV file, scaled to [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getsampwidth() != 2:
                raise AudioError(f"{path}: only 16-bit PCM is supported")
            if wf.getnchannels() != 1:
                raise AudioError(f"{path}: only mono audio is supported")
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"{path}: {exc}") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise AudioError(f"{path}: no samples")
    return Waveform(samples, rate)


def write_wav(path: PathLike, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(pcm.tobytes())


def write_features(path: PathLike, feature: LogMelFeature) -> None:
    H, T = feature.values.shape
    if H >= 1 << 32 or T >= 1 << 32 or H * T > MAX_CELLS:
        raise FeatureFileError("dimension_overflow", f"H={H}, T={T} too large", path)
    payload = feature.values.astype("<f4", order="C").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, H, T))
        fh.write(payload)


def read_features(path: PathLike, speaker_label: Optional[str] = None) -> LogMelFeature:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FeatureFileError("bad_magic", f"expected {MAGIC!r}, found {blob[:4]!r}", path)
    if len(blob) < _HEADER.size:
        raise FeatureFileError("truncated", "header shorter than 16 bytes", path)
    _, version, H, T = _HEADER.unpack_from(blob)
    if version != FORMAT_VERSION:
        raise FeatureFileError("unsupported_version", f"version {version}", path)
    if H == 0 or T == 0:
        raise FeatureFileError("bad_dimensions", f"H={H}, T={T}", path)
    if H * T > MAX_CELLS:
        raise FeatureFileError("dimension_overflow", f"H*T = {H * T} cells", path)
    need = _HEADER.size + 4 * H * T
    if len(blob) < need:
        raise FeatureFileError("truncated", f"payload has {len(blob) - _HEADER.size} of {4 * H * T} bytes", path)
    values = np.frombuffer(blob, dtype="<f4", count=H * T, offset=_HEADER.size).reshape(H, T)
    return LogMelFeature(values.astype(np.float64), speaker_label)


# ---------------------------------------------------------------------------
# manifest: one ``speaker_id<TAB>feature_path`` record per line
# ---------------------------------------------------------------------------

def write_manifest(path: PathLike, records: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for speaker, feat_path in records:
            if "\t" in speaker or "\n" in speaker:
                raise ValueError(f"speaker id {speaker!r} contains a tab or newline")
            fh.write(f"{speaker}\t{feat_path}\n")


def read_manifest(path: PathLike) -> list[tuple[str, str]]:
    """Relative feature paths are resolved against the manifest's directory."""
    base = Path(path).parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'speaker<TAB>path'")
            speaker, feat = parts
            feat_path = Path(feat)
            if not feat_path.is_absolute():
                feat_path = base / feat_path
            records.append((speaker, str(feat_path)))
    return records
