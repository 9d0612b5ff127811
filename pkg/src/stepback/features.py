"""Acoustic feature pipeline.

Waveform loading (WAV/FLAC, resampled to the pipeline rate), log-magnitude
spectrogram extraction with an unpadded frame grid, random fixed-length
segment sampling for training, iterative magnitude-consistency phase
reconstruction back to audio, and per-speaker bin normalization statistics.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import resample_poly

from . import audio_flac
from .errors import AudioReadError, SegmentTooShortError, ValidationError

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_N_FFT = 1024
DEFAULT_HOP = 256
DEFAULT_LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = DEFAULT_N_FFT
    hop: int = DEFAULT_HOP
    sample_rate: int = DEFAULT_SAMPLE_RATE
    log_floor: float = DEFAULT_LOG_FLOOR

    def __post_init__(self):
        if self.hop > self.n_fft:
            raise ValidationError(f"hop {self.hop} exceeds window length {self.n_fft}")
        if self.hop <= 0 or self.n_fft <= 0 or self.sample_rate <= 0:
            raise ValidationError("n_fft, hop and sample_rate must be positive")
        if self.log_floor <= 0:
            raise ValidationError("log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def to_dict(self) -> dict:
        return {
            "n_fft": self.n_fft,
            "hop": self.hop,
            "sample_rate": self.sample_rate,
            "log_floor": self.log_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StftConfig":
        return cls(**d)


@dataclass
class Waveform:
    samples: np.ndarray  # mono, float32 in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ValidationError("waveform must be mono (1-D)")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class Spectrogram:
    values: np.ndarray  # [n_frames, n_bins] log-magnitudes
    hop_length: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValidationError("spectrogram values must be [n_frames, n_bins]")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]


def frame_count(n_samples: int, n_fft: int, hop: int) -> int:
    """Number of analysis frames for an unpadded signal of n_samples."""
    if n_samples < n_fft:
        raise ValidationError(f"signal length {n_samples} is shorter than the window {n_fft}")
    return (n_samples - n_fft) // hop + 1


def resampled_length(n_samples: int, rate_in: int, rate_out: int) -> int:
    """Length after polyphase resampling from rate_in to rate_out."""
    if rate_in == rate_out:
        return n_samples
    g = math.gcd(rate_out, rate_in)
    return -(-n_samples * (rate_out // g) // (rate_in // g))


def _read_audio_file(path) -> tuple[np.ndarray, int]:
    """Raw decode to float [n, channels] plus the source sample rate."""
    suffix = Path(path).suffix.lower()
    if suffix == ".flac":
        samples, rate, bps = audio_flac.read_flac(path)
        return samples.astype(np.float64) / float(1 << (bps - 1)), rate
    try:
        rate, samples = wavfile.read(path)
    except ValueError as exc:
        raise AudioReadError(f"{path}: {exc}") from exc
    samples = np.atleast_1d(samples)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.dtype == np.int16:
        scaled = samples.astype(np.float64) / 32768.0
    elif samples.dtype == np.int32:
        scaled = samples.astype(np.float64) / 2147483648.0
    elif samples.dtype == np.uint8:
        scaled = (samples.astype(np.float64) - 128.0) / 128.0
    else:
        scaled = samples.astype(np.float64)
    return scaled, rate


def load_waveform(path, target_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Load an audio file as a mono waveform at target_rate.

    Multi-channel input is averaged to mono before resampling.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    samples, rate = _read_audio_file(path)
    if samples.shape[0] == 0:
        raise ValidationError(f"{path}: zero-length audio")
    mono = samples.mean(axis=1)
    if rate != target_rate:
        g = math.gcd(target_rate, rate)
        mono = resample_poly(mono, target_rate // g, rate // g)
        mono = np.clip(mono, -1.0, 1.0)
    return Waveform(mono.astype(np.float32), target_rate)


def save_waveform(path, w: Waveform) -> None:
    """Write a waveform as 16-bit PCM (WAV or FLAC by extension)."""
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype(np.int16)
    if Path(path).suffix.lower() == ".flac":
        audio_flac.write_flac(path, pcm, w.sample_rate)
    else:
        wavfile.write(path, w.sample_rate, pcm)


def _hann(n_fft: int) -> np.ndarray:
    # periodic window; satisfies overlap-add at hop <= n_fft/2
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)


def _stft_magnitude_phase(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    frames = sliding_window_view(samples, cfg.n_fft)[::cfg.hop]
    return np.fft.rfft(frames * _hann(cfg.n_fft), axis=1)


def compute_spectrogram(w: Waveform, cfg: StftConfig) -> Spectrogram:
    """Log-magnitude spectrogram on an unpadded frame grid.

    values[t, k] = log(max(|STFT(w)[t, k]|, log_floor)).
    """
    if w.sample_rate != cfg.sample_rate:
        raise ValidationError(
            f"waveform rate {w.sample_rate} differs from pipeline rate {cfg.sample_rate}"
        )
    n = len(w)
    n_frames = frame_count(n, cfg.n_fft, cfg.hop)
    spec = _stft_magnitude_phase(w.samples.astype(np.float64), cfg)
    assert spec.shape == (n_frames, cfg.n_bins)
    values = np.log(np.maximum(np.abs(spec), cfg.log_floor))
    return Spectrogram(values.astype(np.float32), cfg.hop)


def sample_segment(s: Spectrogram, n_frames: int, rng: np.random.Generator) -> Spectrogram:
    """Contiguous n_frames slice at a uniformly random start offset."""
    if s.n_frames < n_frames:
        raise SegmentTooShortError(
            f"utterance has {s.n_frames} frames, segment needs {n_frames}"
        )
    offset = int(rng.integers(0, s.n_frames - n_frames + 1))
    return Spectrogram(s.values[offset:offset + n_frames], s.hop_length)


def _istft(spec: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Weighted overlap-add inverse of the unpadded STFT."""
    window = _hann(cfg.n_fft)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1) * window
    n_frames = frames.shape[0]
    out_len = (n_frames - 1) * cfg.hop + cfg.n_fft
    signal = np.zeros(out_len)
    weight = np.zeros(out_len)
    win_sq = window * window
    for t in range(n_frames):
        start = t * cfg.hop
        signal[start:start + cfg.n_fft] += frames[t]
        weight[start:start + cfg.n_fft] += win_sq
    return signal / np.maximum(weight, 1e-12)


def invert_spectrogram(s: Spectrogram, cfg: StftConfig, n_iters: int = 100) -> Waveform:
    """Phase reconstruction by iterative magnitude-consistency projection.

    n_iters = 0 yields the zero-phase inverse. Each iteration replaces the
    phase with the phase of the re-analyzed signal while keeping the target
    magnitude, which never increases the spectral-convergence error.
    """
    if s.n_bins != cfg.n_bins:
        raise ValidationError(f"spectrogram has {s.n_bins} bins, config expects {cfg.n_bins}")
    magnitude = np.exp(s.values.astype(np.float64))
    signal = _istft(magnitude.astype(np.complex128), cfg)
    for _ in range(n_iters):
        reanalyzed = _stft_magnitude_phase(signal, cfg)
        phase = reanalyzed / np.maximum(np.abs(reanalyzed), 1e-16)
        signal = _istft(magnitude * phase, cfg)
    peak = np.max(np.abs(signal))
    if peak > 1.0:
        signal = signal / peak
    return Waveform(signal.astype(np.float32), cfg.sample_rate)


def spectral_convergence(w: Waveform, target_magnitude: np.ndarray, cfg: StftConfig) -> float:
    """Relative Frobenius distance between |STFT(w)| and a target magnitude."""
    mag = np.abs(_stft_magnitude_phase(w.samples.astype(np.float64), cfg))
    mag = mag[:target_magnitude.shape[0]]
    return float(
        np.linalg.norm(mag - target_magnitude) / max(np.linalg.norm(target_magnitude), 1e-16)
    )


GLOBAL_STATS_KEY = "__global__"


@dataclass
class FeatureStats:
    """Per-speaker (and pooled) per-bin mean/std of log-magnitude features."""

    n_bins: int
    by_speaker: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def set(self, key: str, mean: np.ndarray, std: np.ndarray) -> None:
        self.by_speaker[key] = (
            np.asarray(mean, dtype=np.float64),
            np.asarray(std, dtype=np.float64),
        )

    def get(self, key: str) -> tuple[np.ndarray, np.ndarray]:
        if key not in self.by_speaker:
            raise KeyError(f"no normalization statistics for {key!r}")
        return self.by_speaker[key]

    def normalize(self, values: np.ndarray, key: str) -> np.ndarray:
        mean, std = self.get(key)
        return ((values - mean) / std).astype(np.float32)

    def denormalize(self, values: np.ndarray, key: str) -> np.ndarray:
        mean, std = self.get(key)
        return (values * std + mean).astype(np.float32)

    def to_dict(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "entries": {
                key: {"mean": mean.tolist(), "std": std.tolist()}
                for key, (mean, std) in sorted(self.by_speaker.items())
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureStats":
        stats = cls(n_bins=doc["n_bins"])
        for key, entry in doc["entries"].items():
            stats.set(key, np.asarray(entry["mean"]), np.asarray(entry["std"]))
        return stats

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "FeatureStats":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def compute_feature_stats(
    spectrograms_by_speaker: dict[str, list[Spectrogram]], std_floor: float = 1e-6
) -> FeatureStats:
    """Two-pass per-bin mean/std per speaker plus a pooled entry.

    The pooled entry keyed GLOBAL_STATS_KEY covers conversion inputs whose
    speaker is outside the training set.
    """
    if not spectrograms_by_speaker:
        raise ValidationError("no spectrograms to compute statistics over")
    n_bins = next(iter(spectrograms_by_speaker.values()))[0].n_bins
    stats = FeatureStats(n_bins=n_bins)
    all_values = []
    for key, specs in spectrograms_by_speaker.items():
        stacked = np.concatenate([s.values.astype(np.float64) for s in specs], axis=0)
        all_values.append(stacked)
        mean = stacked.mean(axis=0)
        std = np.maximum(stacked.std(axis=0), std_floor)
        stats.set(key, mean, std)
    pooled = np.concatenate(all_values, axis=0)
    stats.set(GLOBAL_STATS_KEY, pooled.mean(axis=0), np.maximum(pooled.std(axis=0), std_floor))
    return stats
