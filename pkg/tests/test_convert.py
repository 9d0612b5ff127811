"""Conversion tests over the desk-scale trained checkpoint: determinism,
frame padding contracts, speaker validation, and reconstruction sanity."""

import numpy as np
import pytest

from stepback.convert import convert_file, convert_spectrogram, pad_frames_to_multiple
from stepback.errors import UnknownSpeakerError, ValidationError
from stepback.features import load_waveform
from stepback.nets import parameter_checksum
from stepback.trainer import MetricLog, load_checkpoint


@pytest.fixture(scope="module")
def checkpoint(desk_run):
    return load_checkpoint(desk_run.ckpt)


def _test_utterance(desk_run, speaker_index=0):
    records = desk_run.manifest.test_records()
    return next(r for r in records if r.speaker.index == speaker_index)


def test_pad_noop_on_exact_multiple():
    values = np.arange(32 * 3, dtype=np.float32).reshape(32, 3)
    padded, original = pad_frames_to_multiple(values, 8)
    assert original == 32
    assert padded is values


def test_pad_repeats_last_frame():
    values = np.arange(10 * 3, dtype=np.float32).reshape(10, 3)
    padded, original = pad_frames_to_multiple(values, 8)
    assert original == 10
    assert padded.shape == (16, 3)
    for row in padded[10:]:
        np.testing.assert_array_equal(row, values[-1])


def test_pad_rejects_empty():
    with pytest.raises(ValidationError):
        pad_frames_to_multiple(np.zeros((0, 3), dtype=np.float32), 8)


def test_convert_spectrogram_trims_to_input_length(checkpoint):
    rng = np.random.default_rng(0)
    for n_frames in (16, 17, 23, 24):
        normalized = rng.normal(size=(n_frames, 33)).astype(np.float32)
        out = convert_spectrogram(checkpoint, normalized, target_index=1)
        assert out.shape == (n_frames, 33)
        assert np.all(np.isfinite(out))


def test_convert_file_deterministic(checkpoint, desk_run, tmp_path):
    record = _test_utterance(desk_run)
    target = desk_run.manifest.speakers.by_index(1).code
    a = convert_file(
        checkpoint, record.audio_path, target, tmp_path / "a.wav",
        gl_iters=4, source_speaker=record.speaker.code,
    )
    b = convert_file(
        checkpoint, record.audio_path, target, tmp_path / "b.wav",
        gl_iters=4, source_speaker=record.speaker.code,
    )
    np.testing.assert_array_equal(a.spectrogram, b.spectrogram)
    np.testing.assert_array_equal(a.waveform.samples, b.waveform.samples)
    assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()


def test_convert_file_output_is_playable(checkpoint, desk_run, tmp_path):
    record = _test_utterance(desk_run)
    target = desk_run.manifest.speakers.by_index(1).code
    result = convert_file(
        checkpoint, record.audio_path, target, tmp_path / "out.wav", gl_iters=2
    )
    back = load_waveform(result.output_path, target_rate=checkpoint.stft.sample_rate)
    assert len(back) > 0
    assert np.max(np.abs(back.samples)) <= 1.0
    assert result.n_frames == result.spectrogram.shape[0]


def test_convert_rejects_unknown_target(checkpoint, desk_run, tmp_path):
    record = _test_utterance(desk_run)
    with pytest.raises(UnknownSpeakerError):
        convert_file(checkpoint, record.audio_path, "nobody", tmp_path / "x.wav")


def test_convert_rejects_negative_iters(checkpoint, desk_run, tmp_path):
    record = _test_utterance(desk_run)
    target = desk_run.manifest.speakers.by_index(1).code
    with pytest.raises(ValidationError):
        convert_file(checkpoint, record.audio_path, target, tmp_path / "x.wav", gl_iters=-1)


def test_unknown_source_falls_back_to_pooled_stats(checkpoint, desk_run, tmp_path):
    record = _test_utterance(desk_run)
    target = desk_run.manifest.speakers.by_index(1).code
    explicit = convert_file(
        checkpoint, record.audio_path, target, tmp_path / "a.wav",
        gl_iters=0, source_speaker="someone-new",
    )
    default = convert_file(
        checkpoint, record.audio_path, target, tmp_path / "b.wav", gl_iters=0
    )
    np.testing.assert_array_equal(explicit.spectrogram, default.spectrogram)


def test_conversion_does_not_mutate_checkpoint(checkpoint, desk_run, tmp_path):
    before = {
        name: parameter_checksum(m) for name, m in checkpoint.models.modules().items()
    }
    record = _test_utterance(desk_run)
    target = desk_run.manifest.speakers.by_index(1).code
    convert_file(checkpoint, record.audio_path, target, tmp_path / "x.wav", gl_iters=1)
    after = {
        name: parameter_checksum(m) for name, m in checkpoint.models.modules().items()
    }
    assert before == after


def test_self_conversion_tracks_training_reconstruction(checkpoint, desk_run, tmp_path):
    """Converting an utterance to its own speaker should land near the
    reconstruction quality training reached; a large gap would mean the
    conversion path diverges from the training path."""
    record = _test_utterance(desk_run, speaker_index=0)
    own = record.speaker.code
    result = convert_file(
        checkpoint, record.audio_path, own, tmp_path / "self.wav",
        gl_iters=0, source_speaker=own,
    )
    wave = load_waveform(record.audio_path, target_rate=checkpoint.stft.sample_rate)
    from stepback.features import compute_spectrogram

    original = compute_spectrogram(wave, checkpoint.stft).values
    norm_orig = checkpoint.stats.normalize(original, own)
    norm_out = checkpoint.stats.normalize(result.spectrogram, own)
    mae = float(np.abs(norm_orig - norm_out).mean())

    records = MetricLog.read(desk_run.metrics_path)
    final_recon = [
        r["loss"]
        for r in records
        if r["stage"] == "stepback" and r["kind"] == "reconstruction"
    ][-1]
    assert mae < 2.0 * final_recon
