"""Synthetic multi-speaker toy corpus generation.

Produces deterministic harmonic "voices" with per-speaker fundamentals and
spectral envelopes, laid out on disk the way the corpus loader expects:
a speaker-info table plus one directory of utterances per speaker. Used by
the desk-scale experiment scripts and the test suite; real corpora follow
the same layout.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .features import Waveform, save_waveform


def speaker_fundamental(speaker_idx: int) -> float:
    # spread fundamentals so toy speakers are spectrally well separated
    return 95.0 + 40.0 * speaker_idx


def synth_utterance(
    speaker_idx: int,
    utterance_idx: int,
    duration_s: float,
    sample_rate: int,
) -> Waveform:
    """One deterministic pseudo-utterance for (speaker, utterance) indices."""
    rng = np.random.default_rng([7, speaker_idx, utterance_idx])
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = speaker_fundamental(speaker_idx)
    # slow per-utterance melody so repeated utterances differ
    melody = 1.0 + 0.06 * np.sin(2 * np.pi * rng.uniform(0.4, 1.8) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * melody) / sample_rate
    signal = np.zeros(n)
    tilt = 0.55 + 0.06 * (speaker_idx % 5)
    for h in range(1, 9):
        if h * f0 * 1.1 >= sample_rate / 2:
            break
        amp = tilt ** (h - 1)
        signal += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t) ** 2
    signal *= envelope
    signal += 0.01 * rng.standard_normal(n)
    signal *= 0.5 / np.max(np.abs(signal))
    return Waveform(signal.astype(np.float32), sample_rate)


def make_toy_corpus(
    root,
    n_speakers: int = 4,
    utterances_per_speaker: int = 8,
    duration_s: float = 1.4,
    sample_rate: int = 8000,
    flac_every: int = 0,
) -> Path:
    """Write a toy corpus under root and return its path.

    Speakers alternate F/M genders. When flac_every > 0 every flac_every-th
    utterance is written as FLAC instead of WAV.
    """
    root = Path(root)
    audio_root = root / "wav"
    audio_root.mkdir(parents=True, exist_ok=True)
    info_lines = ["ID  AGE  GENDER  ACCENTS  REGION"]
    for spk in range(n_speakers):
        code = f"s{spk:03d}"
        gender = "F" if spk % 2 == 0 else "M"
        info_lines.append(f"{code}  23  {gender}  None  None")
        spk_dir = audio_root / code
        spk_dir.mkdir(exist_ok=True)
        for utt in range(utterances_per_speaker):
            wave = synth_utterance(spk, utt, duration_s, sample_rate)
            ext = "flac" if flac_every and (utt + 1) % flac_every == 0 else "wav"
            save_waveform(spk_dir / f"{code}_{utt:03d}.{ext}", wave)
    (root / "speaker-info.txt").write_text("\n".join(info_lines) + "\n")
    return root
