"""Feature pipeline tests: framing, STFT against a direct DFT oracle,
audio IO round trips, normalization, segment sampling, and phase
reconstruction behavior."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stepback.errors import SegmentTooShortError, ValidationError
from stepback.features import (
    GLOBAL_STATS_KEY,
    FeatureStats,
    Spectrogram,
    StftConfig,
    Waveform,
    compute_feature_stats,
    compute_spectrogram,
    frame_count,
    invert_spectrogram,
    load_waveform,
    resampled_length,
    sample_segment,
    save_waveform,
    spectral_convergence,
)
from stepback.synth import synth_utterance

CFG = StftConfig(n_fft=64, hop=32, sample_rate=8000)


def oracle_frame_count(n_samples, n_fft, hop):
    count = 0
    start = 0
    while start + n_fft <= n_samples:
        count += 1
        start += hop
    return count


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(min_value=8, max_value=100_000),
    n_fft=st.integers(min_value=8, max_value=2048),
    hop_frac=st.fractions(min_value=0, max_value=1),
)
def test_frame_count_matches_walk(n, n_fft, hop_frac):
    hop = max(1, int(n_fft * float(hop_frac)))
    if n < n_fft:
        with pytest.raises(ValidationError):
            frame_count(n, n_fft, hop)
    else:
        assert frame_count(n, n_fft, hop) == oracle_frame_count(n, n_fft, hop)


def test_stft_matches_direct_dft():
    """Independent oracle: per-frame windowed DFT computed with an explicit
    loop over bins."""
    rng = np.random.default_rng(0)
    samples = rng.normal(size=300)
    cfg = StftConfig(n_fft=16, hop=8, sample_rate=8000)
    spec = compute_spectrogram(Waveform(samples.astype(np.float32), 8000), cfg)
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(16) / 16)
    x = samples.astype(np.float32).astype(np.float64)
    for t in range(spec.n_frames):
        frame = x[t * 8 : t * 8 + 16] * window
        for k in range(cfg.n_bins):
            ref = np.sum(frame * np.exp(-2j * np.pi * k * np.arange(16) / 16))
            expected = np.log(max(abs(ref), cfg.log_floor))
            assert abs(spec.values[t, k] - expected) < 1e-6


def test_spectrogram_floor_on_silence():
    silence = Waveform(np.zeros(1000, dtype=np.float32), 8000)
    spec = compute_spectrogram(silence, CFG)
    # values are stored float32, so compare at float32 precision
    np.testing.assert_allclose(spec.values, np.log(CFG.log_floor), rtol=1e-6)


@settings(max_examples=100, deadline=None)
@given(
    n=st.integers(min_value=100, max_value=50_000),
    rate_in=st.sampled_from([8000, 16000, 22050, 44100, 48000]),
    rate_out=st.sampled_from([8000, 16000, 22050]),
)
def test_resampled_length_matches_scipy(n, rate_in, rate_out):
    from math import gcd

    from scipy.signal import resample_poly

    g = gcd(rate_in, rate_out)
    out = resample_poly(np.zeros(n), rate_out // g, rate_in // g)
    assert resampled_length(n, rate_in, rate_out) == len(out)


def test_wav_round_trip(tmp_path):
    wave = synth_utterance(0, 0, duration_s=0.5, sample_rate=8000)
    path = tmp_path / "x.wav"
    save_waveform(path, wave)
    back = load_waveform(path, target_rate=8000)
    # 16-bit quantization error only
    assert np.max(np.abs(back.samples - wave.samples)) <= 1.0 / 32767 + 1e-7


def test_flac_round_trip(tmp_path):
    wave = synth_utterance(1, 2, duration_s=0.5, sample_rate=8000)
    wav_path = tmp_path / "x.wav"
    flac_path = tmp_path / "x.flac"
    save_waveform(wav_path, wave)
    save_waveform(flac_path, wave)
    from_wav = load_waveform(wav_path, target_rate=8000)
    from_flac = load_waveform(flac_path, target_rate=8000)
    np.testing.assert_array_equal(from_wav.samples, from_flac.samples)


def test_load_waveform_mixes_to_mono(tmp_path):
    from scipy.io import wavfile

    rng = np.random.default_rng(1)
    stereo = rng.integers(-20000, 20000, size=(4000, 2)).astype(np.int16)
    path = tmp_path / "stereo.wav"
    wavfile.write(path, 8000, stereo)
    wave = load_waveform(path, target_rate=8000)
    expected = stereo.astype(np.float64).mean(axis=1) / 32768.0
    np.testing.assert_allclose(wave.samples, expected, atol=1e-6)


def test_load_waveform_resamples(tmp_path):
    wave = synth_utterance(0, 1, duration_s=0.4, sample_rate=16000)
    path = tmp_path / "x.wav"
    save_waveform(path, wave)
    down = load_waveform(path, target_rate=8000)
    assert down.sample_rate == 8000
    assert len(down) == resampled_length(len(wave), 16000, 8000)


def test_load_missing_file_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_waveform(tmp_path / "nope.wav")


def test_zero_length_audio_rejected(tmp_path):
    from scipy.io import wavfile

    path = tmp_path / "empty.wav"
    wavfile.write(path, 8000, np.zeros(0, dtype=np.int16))
    with pytest.raises(ValidationError):
        load_waveform(path, target_rate=8000)


def test_waveform_rejects_nonfinite():
    samples = np.zeros(100, dtype=np.float32)
    samples[3] = np.nan
    with pytest.raises(ValidationError):
        Waveform(samples, 8000)


def test_sample_segment_bounds_and_determinism():
    rng = np.random.default_rng(0)
    spec = Spectrogram(rng.normal(size=(200, 33)).astype(np.float32), 32)
    seg1 = sample_segment(spec, 64, np.random.default_rng(9))
    seg2 = sample_segment(spec, 64, np.random.default_rng(9))
    assert seg1.values.shape == (64, 33)
    np.testing.assert_array_equal(seg1.values, seg2.values)
    # the segment is a contiguous slice of the source
    found = any(
        np.array_equal(spec.values[i : i + 64], seg1.values) for i in range(200 - 64 + 1)
    )
    assert found


def test_sample_segment_too_short():
    spec = Spectrogram(np.zeros((10, 33), dtype=np.float32), 32)
    with pytest.raises(SegmentTooShortError):
        sample_segment(spec, 64, np.random.default_rng(0))


def test_sample_segment_exact_length():
    spec = Spectrogram(np.arange(33 * 64, dtype=np.float32).reshape(64, 33), 32)
    seg = sample_segment(spec, 64, np.random.default_rng(0))
    np.testing.assert_array_equal(seg.values, spec.values)


def test_normalization_round_trip():
    rng = np.random.default_rng(2)
    stats = FeatureStats(n_bins=33)
    stats.set("spk", rng.normal(size=33), rng.uniform(0.5, 2.0, size=33))
    values = rng.normal(size=(50, 33)).astype(np.float32)
    back = stats.denormalize(stats.normalize(values, "spk"), "spk")
    np.testing.assert_allclose(back, values, atol=1e-4)


def test_stats_unknown_key_raises():
    stats = FeatureStats(n_bins=33)
    with pytest.raises(KeyError):
        stats.get("missing")


def test_compute_feature_stats_oracle():
    rng = np.random.default_rng(3)
    specs = {
        "a": [Spectrogram(rng.normal(1.0, 2.0, size=(40, 5)).astype(np.float32), 32)],
        "b": [
            Spectrogram(rng.normal(-1.0, 0.5, size=(30, 5)).astype(np.float32), 32),
            Spectrogram(rng.normal(-1.0, 0.5, size=(20, 5)).astype(np.float32), 32),
        ],
    }
    stats = compute_feature_stats(specs)
    b_all = np.concatenate([s.values for s in specs["b"]], axis=0).astype(np.float64)
    mean_b, std_b = stats.get("b")
    np.testing.assert_allclose(mean_b, b_all.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(std_b, b_all.std(axis=0), atol=1e-12)
    pooled = np.concatenate(
        [s.values for group in specs.values() for s in group], axis=0
    ).astype(np.float64)
    mean_g, std_g = stats.get(GLOBAL_STATS_KEY)
    np.testing.assert_allclose(mean_g, pooled.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(std_g, pooled.std(axis=0), atol=1e-12)


def test_stats_json_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    stats = FeatureStats(n_bins=4)
    stats.set("x", rng.normal(size=4), rng.uniform(0.1, 1, size=4))
    path = tmp_path / "stats.json"
    stats.save(path)
    loaded = FeatureStats.load(path)
    np.testing.assert_array_equal(loaded.get("x")[0], stats.get("x")[0])
    np.testing.assert_array_equal(loaded.get("x")[1], stats.get("x")[1])


def test_griffin_lim_convergence_never_worsens():
    """Each phase-reconstruction iteration must not increase the spectral
    convergence error (allowing float noise)."""
    wave = synth_utterance(0, 3, duration_s=0.6, sample_rate=8000)
    spec = compute_spectrogram(wave, CFG)
    target = np.exp(spec.values.astype(np.float64))
    errors = []
    for iters in (0, 1, 2, 4, 8, 16):
        out = invert_spectrogram(spec, CFG, n_iters=iters)
        errors.append(spectral_convergence(out, target, CFG))
    for earlier, later in zip(errors, errors[1:]):
        assert later <= earlier + 1e-9
    assert errors[-1] < errors[0]


def test_griffin_lim_zero_iters_length():
    wave = synth_utterance(1, 1, duration_s=0.5, sample_rate=8000)
    spec = compute_spectrogram(wave, CFG)
    out = invert_spectrogram(spec, CFG, n_iters=0)
    assert out.sample_rate == 8000
    assert len(out) >= (spec.n_frames - 1) * CFG.hop + CFG.n_fft - CFG.hop
    assert np.max(np.abs(out.samples)) <= 1.0 + 1e-6


def test_invert_output_in_range():
    rng = np.random.default_rng(5)
    spec = Spectrogram(rng.normal(0, 2, size=(40, 33)).astype(np.float32), 32)
    out = invert_spectrogram(spec, CFG, n_iters=3)
    assert np.max(np.abs(out.samples)) <= 1.0 + 1e-6
    assert np.all(np.isfinite(out.samples))


def test_stft_config_validation():
    with pytest.raises(ValidationError):
        StftConfig(n_fft=64, hop=65, sample_rate=8000)
    with pytest.raises(ValidationError):
        StftConfig(n_fft=64, hop=32, sample_rate=8000, log_floor=0.0)


def test_stft_config_round_trip():
    d = CFG.to_dict()
    assert StftConfig.from_dict(d) == CFG


def test_rate_mismatch_rejected():
    wave = Waveform(np.zeros(1000, dtype=np.float32), 16000)
    with pytest.raises(ValidationError):
        compute_spectrogram(wave, CFG)
