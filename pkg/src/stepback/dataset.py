"""Corpus ingestion, speaker subset selection, splits, and batch building.

The corpus layout is one directory of utterance files per speaker plus a
speaker-info table carrying genders. A build selects a balanced speaker
subset deterministically from a seed, splits each speaker's utterances
90/10, drops utterances too short for training segments, and persists
everything as a line-delimited manifest with the speaker index table in
its header.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, SegmentTooShortError, ValidationError
from .features import (
    FeatureStats,
    Spectrogram,
    StftConfig,
    compute_feature_stats,
    compute_spectrogram,
    load_waveform,
    sample_segment,
)

log = logging.getLogger(__name__)

TRAIN = "train"
TEST = "test"

BATCH_STAGES = ("reconstruction", "classifier", "stepback", "gan")

# independent seed streams per consumer of the run seed
_STREAM_IDS = {
    "subset": 0,
    "split": 1,
    "reconstruction": 2,
    "classifier": 3,
    "stepback": 4,
    "gan-disc": 5,
    "gan-gen": 6,
    "stepback-m1": 7,
}


@dataclass(frozen=True)
class SpeakerId:
    index: int
    code: str
    gender: str  # "F" or "M"


@dataclass(frozen=True)
class UtteranceRecord:
    speaker: SpeakerId
    audio_path: str
    split: str


class SpeakerTable:
    """Bijective index <-> code mapping for the selected subset."""

    def __init__(self, speakers: list[SpeakerId]):
        self.speakers = sorted(speakers, key=lambda s: s.index)
        self._by_code = {s.code: s for s in self.speakers}
        self._by_index = {s.index: s for s in self.speakers}
        if len(self._by_code) != len(self.speakers) or len(self._by_index) != len(self.speakers):
            raise ValidationError("speaker table is not a bijection")

    def __len__(self) -> int:
        return len(self.speakers)

    def __iter__(self):
        return iter(self.speakers)

    def by_code(self, code: str) -> SpeakerId:
        return self._by_code[code]

    def by_index(self, index: int) -> SpeakerId:
        return self._by_index[index]

    def codes(self) -> list[str]:
        return [s.code for s in self.speakers]


@dataclass
class Manifest:
    records: list[UtteranceRecord]
    speakers: SpeakerTable
    stft: StftConfig
    skipped: int

    def train_records(self) -> list[UtteranceRecord]:
        return [r for r in self.records if r.split == TRAIN]

    def test_records(self) -> list[UtteranceRecord]:
        return [r for r in self.records if r.split == TEST]


@dataclass
class Batch:
    segments: list[Spectrogram]
    speaker_ids: list[SpeakerId]
    other_speaker_ids: list[SpeakerId] | None = None


def _parse_speaker_info(path: Path) -> dict[str, str]:
    genders: dict[str, str] = {}
    for line in path.read_text().splitlines():
        parts = line.split()
        if len(parts) < 3 or parts[0].upper() == "ID":
            continue
        code, gender = parts[0], parts[2].upper()
        if gender in ("F", "M"):
            genders[code] = gender
    return genders


def _find_speaker_dirs(corpus_root: Path, codes: set[str]) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for path in sorted(corpus_root.rglob("*")):
        if path.is_dir() and path.name in codes and path.name not in found:
            if any(p.suffix.lower() in (".wav", ".flac") for p in path.iterdir()):
                found[path.name] = path
    return found


def build_manifest(
    corpus_root,
    subset_seed: int,
    stft: StftConfig | None = None,
    min_frames: int = 128,
    speakers_per_gender: int = 10,
    train_fraction: float = 0.9,
) -> Manifest:
    """Select a balanced speaker subset and split each speaker's utterances.

    Selection sorts eligible speakers by code, shuffles them with
    subset_seed, and takes the first speakers_per_gender of each gender.
    Unreadable files and utterances shorter than min_frames feature frames
    are skipped with a logged count.
    """
    corpus_root = Path(corpus_root)
    stft = stft or StftConfig()
    info_path = corpus_root / "speaker-info.txt"
    if not info_path.exists():
        raise ConfigurationError(f"no speaker-info.txt under {corpus_root}")
    genders = _parse_speaker_info(info_path)
    dirs = _find_speaker_dirs(corpus_root, set(genders))
    eligible = sorted(code for code in genders if code in dirs)

    rng = np.random.default_rng([subset_seed, _STREAM_IDS["subset"]])
    shuffled = [eligible[i] for i in rng.permutation(len(eligible))]
    selected: list[str] = []
    for gender in ("F", "M"):
        of_gender = [c for c in shuffled if genders[c] == gender][:speakers_per_gender]
        if len(of_gender) < speakers_per_gender:
            raise ConfigurationError(
                f"need {speakers_per_gender} speakers of gender {gender}, "
                f"found {len(of_gender)}"
            )
        selected.extend(of_gender)

    table = SpeakerTable(
        [
            SpeakerId(index=i, code=code, gender=genders[code])
            for i, code in enumerate(sorted(selected))
        ]
    )

    records: list[UtteranceRecord] = []
    skipped = 0
    for speaker in table:
        files = sorted(dirs[speaker.code].iterdir())
        usable: list[str] = []
        for f in files:
            if f.suffix.lower() not in (".wav", ".flac"):
                continue
            try:
                wave = load_waveform(f, target_rate=stft.sample_rate)
                spec_frames = (len(wave) - stft.n_fft) // stft.hop + 1
            except (OSError, ValidationError) as exc:
                log.warning("skipping unreadable file %s: %s", f, exc)
                skipped += 1
                continue
            if spec_frames < min_frames:
                log.warning("skipping short utterance %s (%d frames)", f, spec_frames)
                skipped += 1
                continue
            usable.append(str(f))
        split_rng = np.random.default_rng([subset_seed, _STREAM_IDS["split"], speaker.index])
        order = split_rng.permutation(len(usable))
        n_train = int(round(train_fraction * len(usable)))
        if len(usable) >= 2:
            n_train = min(max(n_train, 1), len(usable) - 1)
        train_set = {usable[i] for i in order[:n_train]}
        for path in usable:
            records.append(
                UtteranceRecord(
                    speaker=speaker,
                    audio_path=path,
                    split=TRAIN if path in train_set else TEST,
                )
            )
    if skipped:
        log.info("manifest build skipped %d files", skipped)
    return Manifest(records=records, speakers=table, stft=stft, skipped=skipped)


MANIFEST_HEADER = "# stepback-manifest v1"


def save_manifest(manifest: Manifest, path) -> None:
    lines = [MANIFEST_HEADER]
    cfg = manifest.stft
    lines.append(
        f"# stft n_fft={cfg.n_fft} hop={cfg.hop} "
        f"sample_rate={cfg.sample_rate} log_floor={cfg.log_floor!r}"
    )
    lines.append(f"# skipped {manifest.skipped}")
    for s in manifest.speakers:
        lines.append(f"# speaker {s.index} {s.code} {s.gender}")
    for r in manifest.records:
        lines.append(f"{r.speaker.code}\t{r.speaker.gender}\t{r.audio_path}\t{r.split}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path) -> Manifest:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ConfigurationError(f"{path} is not a manifest file")
    stft = None
    skipped = 0
    speakers: list[SpeakerId] = []
    records: list[UtteranceRecord] = []
    by_code: dict[str, SpeakerId] = {}
    for line in lines[1:]:
        if line.startswith("# stft "):
            fields = dict(kv.split("=", 1) for kv in line[len("# stft "):].split())
            stft = StftConfig(
                n_fft=int(fields["n_fft"]),
                hop=int(fields["hop"]),
                sample_rate=int(fields["sample_rate"]),
                log_floor=float(fields["log_floor"]),
            )
        elif line.startswith("# skipped "):
            skipped = int(line.split()[-1])
        elif line.startswith("# speaker "):
            _, _, index, code, gender = line.split()
            spk = SpeakerId(index=int(index), code=code, gender=gender)
            speakers.append(spk)
            by_code[code] = spk
        elif line.startswith("#") or not line.strip():
            continue
        else:
            code, _gender, audio_path, split = line.split("\t")
            records.append(
                UtteranceRecord(speaker=by_code[code], audio_path=audio_path, split=split)
            )
    if stft is None:
        raise ConfigurationError(f"{path} has no stft header line")
    return Manifest(records=records, speakers=SpeakerTable(speakers), stft=stft, skipped=skipped)


class FeatureLoader:
    """Loads, normalizes, and memoizes per-utterance spectrograms."""

    def __init__(self, stft: StftConfig, stats: FeatureStats | None = None, cache_size: int = 512):
        self.stft = stft
        self.stats = stats
        self.cache_size = cache_size
        self._cache: dict[str, Spectrogram] = {}

    def spectrogram(self, record: UtteranceRecord) -> Spectrogram:
        key = record.audio_path
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        wave = load_waveform(record.audio_path, target_rate=self.stft.sample_rate)
        spec = compute_spectrogram(wave, self.stft)
        if self.stats is not None:
            spec = Spectrogram(
                self.stats.normalize(spec.values, record.speaker.code), spec.hop_length
            )
        if len(self._cache) >= self.cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = spec
        return spec


def compute_manifest_stats(manifest: Manifest, loader: FeatureLoader | None = None) -> FeatureStats:
    """Per-speaker bin statistics over the manifest's training split."""
    loader = loader or FeatureLoader(manifest.stft, stats=None)
    by_speaker: dict[str, list[Spectrogram]] = {}
    for record in manifest.train_records():
        by_speaker.setdefault(record.speaker.code, []).append(loader.spectrogram(record))
    return compute_feature_stats(by_speaker)


def next_batch(
    records: list[UtteranceRecord],
    stage: str,
    rng: np.random.Generator,
    loader: FeatureLoader,
    batch_size: int = 32,
    segment_frames: int = 128,
    speakers: SpeakerTable | None = None,
) -> Batch:
    """Draw one training batch of fixed-length segments.

    All stages pair each segment with its own speaker id; the stepback stage
    additionally draws a uniformly random different speaker per segment.
    """
    if stage not in BATCH_STAGES:
        raise ValidationError(f"unknown batch stage {stage!r}")
    if not records:
        raise DataError("no records to draw batches from")
    if speakers is None:
        unique = {r.speaker.index: r.speaker for r in records}
        speakers = SpeakerTable(list(unique.values()))
    if stage == "stepback" and len(speakers) < 2:
        raise DataError("stepback batches need at least two speakers")

    segments: list[Spectrogram] = []
    speaker_ids: list[SpeakerId] = []
    misses = 0
    while len(segments) < batch_size:
        record = records[int(rng.integers(0, len(records)))]
        try:
            spec = loader.spectrogram(record)
            segments.append(sample_segment(spec, segment_frames, rng))
            speaker_ids.append(record.speaker)
        except SegmentTooShortError:
            misses += 1
            if misses >= 4 * batch_size and not _any_long_enough(
                records, loader, segment_frames
            ):
                raise DataError(
                    f"no utterance has the {segment_frames} frames a segment needs"
                ) from None

    other_speaker_ids = None
    if stage == "stepback":
        n = len(speakers)
        other_speaker_ids = []
        for own in speaker_ids:
            draw = int(rng.integers(0, n - 1))
            if draw >= own.index:
                draw += 1
            other_speaker_ids.append(speakers.by_index(draw))
    return Batch(segments=segments, speaker_ids=speaker_ids, other_speaker_ids=other_speaker_ids)


def _any_long_enough(records, loader, segment_frames: int) -> bool:
    for record in records:
        try:
            if loader.spectrogram(record).n_frames >= segment_frames:
                return True
        except (OSError, ValidationError):
            continue
    return False


class BatchSource:
    """Deterministic batch stream: batch(stage, step) depends only on
    (manifest, stage, seed, step), never on call order or worker count."""

    def __init__(
        self,
        records: list[UtteranceRecord],
        speakers: SpeakerTable,
        loader: FeatureLoader,
        seed: int,
        batch_size: int,
        segment_frames: int,
    ):
        self.records = records
        self.speakers = speakers
        self.loader = loader
        self.seed = seed
        self.batch_size = batch_size
        self.segment_frames = segment_frames

    def rng_for(self, stream: str, step: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, _STREAM_IDS[stream], step])

    def batch(self, stage: str, step: int, stream: str | None = None) -> Batch:
        rng = self.rng_for(stream or stage, step)
        return next_batch(
            self.records,
            stage,
            rng,
            self.loader,
            batch_size=self.batch_size,
            segment_frames=self.segment_frames,
            speakers=self.speakers,
        )

    def batch_with_targets(self, stream: str, step: int) -> tuple[Batch, list[SpeakerId]]:
        """A batch plus uniform random conversion targets, both drawn from
        the stream's per-step generator so the pair is reproducible."""
        rng = self.rng_for(stream, step)
        batch = next_batch(
            self.records,
            "gan",
            rng,
            self.loader,
            batch_size=self.batch_size,
            segment_frames=self.segment_frames,
            speakers=self.speakers,
        )
        n = len(self.speakers)
        targets = [
            self.speakers.by_index(int(i))
            for i in rng.integers(0, n, len(batch.segments))
        ]
        return batch, targets
