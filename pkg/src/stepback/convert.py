"""Waveform-to-waveform conversion using a trained checkpoint.

The path is: load audio, log-magnitude features, normalize with the source
speaker's statistics (the pooled entry covers unknown sources), encode,
decode with the target speaker's embedding row, denormalize with the
target's statistics, then reconstruct phase iteratively.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import UnknownSpeakerError, ValidationError
from .features import (
    GLOBAL_STATS_KEY,
    Spectrogram,
    Waveform,
    compute_spectrogram,
    invert_spectrogram,
    load_waveform,
    save_waveform,
)
from .trainer import Checkpoint

DEFAULT_GL_ITERS = 60


@dataclass
class ConversionResult:
    output_path: Path
    n_frames: int
    spectrogram: np.ndarray  # denormalized log magnitudes, [n_frames, n_bins]
    waveform: Waveform


def pad_frames_to_multiple(values: np.ndarray, multiple: int) -> tuple[np.ndarray, int]:
    """Repeat the final frame until the frame count divides by multiple.
    Returns the padded array and the original frame count."""
    n = values.shape[0]
    if n == 0:
        raise ValidationError("cannot pad an empty spectrogram")
    remainder = n % multiple
    if remainder == 0:
        return values, n
    pad = np.repeat(values[-1:], multiple - remainder, axis=0)
    return np.concatenate([values, pad], axis=0), n


def convert_spectrogram(
    checkpoint: Checkpoint, normalized: np.ndarray, target_index: int
) -> np.ndarray:
    """Run normalized features through encoder and decoder in eval mode.
    Input and output are [n_frames, n_bins]; padding added for the strided
    encoder is trimmed from the result."""
    models = checkpoint.models
    models.eval()
    padded, original = pad_frames_to_multiple(
        normalized, checkpoint.model_config.frame_multiple
    )
    with torch.no_grad():
        x = torch.from_numpy(padded.astype(np.float32)).unsqueeze(0)
        ids = torch.tensor([target_index], dtype=torch.long)
        out = models.decoder(models.encoder(x), ids)
    return out.squeeze(0).numpy()[:original]


def convert_file(
    checkpoint: Checkpoint,
    source_path,
    target_speaker: str,
    output_path,
    gl_iters: int = DEFAULT_GL_ITERS,
    source_speaker: str | None = None,
) -> ConversionResult:
    """Convert one audio file to the target speaker's voice.

    target_speaker must be a code from the checkpoint's speaker table.
    source_speaker selects normalization statistics; omitted or unknown to
    the table, the pooled statistics are used.
    """
    table_codes = set(checkpoint.speakers.codes())
    if target_speaker not in table_codes:
        raise UnknownSpeakerError(
            f"target speaker {target_speaker!r} not in checkpoint table "
            f"{sorted(table_codes)}"
        )
    target_index = checkpoint.speakers.by_code(target_speaker).index
    stats = checkpoint.stats
    source_key = (
        source_speaker
        if source_speaker is not None and source_speaker in stats.by_speaker
        else GLOBAL_STATS_KEY
    )
    if gl_iters < 0:
        raise ValidationError("gl_iters must be nonnegative")

    wave = load_waveform(source_path, target_rate=checkpoint.stft.sample_rate)
    spec = compute_spectrogram(wave, checkpoint.stft)
    normalized = stats.normalize(spec.values, source_key)
    converted = convert_spectrogram(checkpoint, normalized, target_index)
    denorm = stats.denormalize(converted, target_speaker)
    out_wave = invert_spectrogram(
        Spectrogram(denorm, checkpoint.stft.hop), checkpoint.stft, n_iters=gl_iters
    )
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    save_waveform(output_path, out_wave)
    return ConversionResult(
        output_path=output_path,
        n_frames=denorm.shape[0],
        spectrogram=denorm,
        waveform=out_wave,
    )
