"""Objective and subjective evaluation tooling.

Objective: per-bin global variance of log-magnitude features and
deterministic spectrogram heatmap images.

Subjective: blinded two-alternative listening sections. Each section holds
three comparisons over one conversion pair: which sample sounds more
natural, which preserves the source's content, and which matches the
target's identity. Audio is addressed by opaque tokens so the participant
view carries no hint of which system produced what.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, DuplicateChoiceError, ValidationError

SESSIONS_FORMAT = "stepback-sessions"
SESSIONS_VERSION = 1

PART_NATURALNESS = "naturalness"
PART_CONTENT = "content"
PART_SIMILARITY = "similarity"
PARTS = (PART_NATURALNESS, PART_CONTENT, PART_SIMILARITY)

PART_PROMPTS = {
    PART_NATURALNESS: "Which sample sounds more natural in pitch, tone, and stress?",
    PART_CONTENT: "Listening to the reference first, which sample preserves its words "
    "and intonation better, ignoring who is speaking?",
    PART_SIMILARITY: "Listening to the reference first, which sample sounds more like "
    "the same speaker?",
}

# which reference recording accompanies each part: the source utterance for
# the content question, the target speaker for the similarity question
PART_REFERENCE = {
    PART_NATURALNESS: None,
    PART_CONTENT: "source",
    PART_SIMILARITY: "target",
}


# -- objective ---------------------------------------------------------------

CONVERSION_KINDS = ("M2M", "M2F", "F2M", "F2F")


def kind_genders(kind: str) -> tuple[str, str]:
    """Source and target gender letters of a conversion kind like "M2F"."""
    if kind not in CONVERSION_KINDS:
        raise ValidationError(f"kind must be one of {CONVERSION_KINDS}, got {kind!r}")
    return kind[0], kind[2]


@dataclass(frozen=True)
class GlobalVarianceProfile:
    variances: np.ndarray  # [n_bins]
    conversion_kind: str
    n_utterances: int


def global_variance(spectrograms: list[np.ndarray]) -> np.ndarray:
    """Population variance per frequency bin over all frames of all inputs.

    Two passes in float64: an exact pooled mean, then mean squared
    deviation, so huge frame counts do not lose precision to streaming.
    """
    if not spectrograms:
        raise ValidationError("no spectrograms given")
    n_bins = spectrograms[0].shape[1]
    for s in spectrograms:
        if s.ndim != 2 or s.shape[1] != n_bins:
            raise ValidationError("spectrograms disagree on bin count")
    total = np.zeros(n_bins, dtype=np.float64)
    frames = 0
    for s in spectrograms:
        total += s.astype(np.float64).sum(axis=0)
        frames += s.shape[0]
    mean = total / frames
    accum = np.zeros(n_bins, dtype=np.float64)
    for s in spectrograms:
        accum += ((s.astype(np.float64) - mean) ** 2).sum(axis=0)
    return accum / frames


def global_variance_profile(
    spectrograms: list[np.ndarray], kind: str
) -> GlobalVarianceProfile:
    kind_genders(kind)
    return GlobalVarianceProfile(
        variances=global_variance(spectrograms),
        conversion_kind=kind,
        n_utterances=len(spectrograms),
    )


def write_gv_csv(profile: GlobalVarianceProfile, path) -> None:
    lines = [
        f"# kind={profile.conversion_kind} n_utterances={profile.n_utterances}",
        "bin,variance",
    ]
    lines += [f"{i},{v!r}" for i, v in enumerate(profile.variances.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


# five-anchor color ramp, dark blue to yellow, linearly interpolated
_RAMP = np.array(
    [
        (13, 8, 135),
        (84, 2, 163),
        (156, 23, 158),
        (237, 121, 83),
        (240, 249, 33),
    ],
    dtype=np.float64,
)


def _colorize(normalized: np.ndarray) -> np.ndarray:
    """[0,1] floats -> uint8 RGB through the fixed ramp."""
    pos = np.clip(normalized, 0.0, 1.0) * (len(_RAMP) - 1)
    low = np.floor(pos).astype(np.int64)
    high = np.minimum(low + 1, len(_RAMP) - 1)
    frac = (pos - low)[..., None]
    rgb = _RAMP[low] * (1.0 - frac) + _RAMP[high] * frac
    return np.round(rgb).clip(0, 255).astype(np.uint8)


def render_heatmap(values: np.ndarray, path, scale: int = 2) -> None:
    """Write a PNG of a [n_frames, n_bins] array: time left to right, low
    bins at the bottom, color from the fixed ramp. Byte-for-byte
    deterministic for identical inputs."""
    if values.ndim != 2:
        raise ValidationError(f"expected a 2-D array, got shape {values.shape}")
    v = values.astype(np.float64)
    lo, hi = float(v.min()), float(v.max())
    normalized = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    # transpose to [bins, frames], flip so bin 0 lands on the bottom row
    rgb = _colorize(normalized.T[::-1])
    image = Image.fromarray(rgb, mode="RGB")
    if scale > 1:
        image = image.resize((image.width * scale, image.height * scale), Image.NEAREST)
    image.save(path, format="PNG")


# -- subjective sessions -----------------------------------------------------


@dataclass(frozen=True)
class ComparisonPair:
    """One conversion rendered by both systems, with its references."""

    pair_id: str
    first: str  # audio path, system labeled "first" at build time
    second: str
    source: str  # reference: the utterance that was converted
    target: str  # reference: the target speaker's own recording


@dataclass
class SessionItem:
    item_id: str
    part: str
    prompt: str
    a_token: str
    b_token: str
    a_condition: str  # hidden from participants
    b_condition: str
    reference_token: str | None = None


@dataclass
class EvalSession:
    session_id: str
    items: list[SessionItem] = field(default_factory=list)


@dataclass
class SessionSet:
    seed: int
    sessions: list[EvalSession]
    audio_by_token: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "format": SESSIONS_FORMAT,
            "version": SESSIONS_VERSION,
            "seed": self.seed,
            "sessions": [
                {
                    "session_id": s.session_id,
                    "items": [vars(i).copy() for i in s.items],
                }
                for s in self.sessions
            ],
            "audio_by_token": dict(sorted(self.audio_by_token.items())),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SessionSet":
        if doc.get("format") != SESSIONS_FORMAT:
            raise ConfigurationError("not a session file")
        if doc.get("version") != SESSIONS_VERSION:
            raise ConfigurationError(f"unsupported session version {doc.get('version')}")
        sessions = [
            EvalSession(
                session_id=s["session_id"],
                items=[SessionItem(**i) for i in s["items"]],
            )
            for s in doc["sessions"]
        ]
        return cls(seed=doc["seed"], sessions=sessions, audio_by_token=doc["audio_by_token"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "SessionSet":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def blinded_index(self) -> list[dict]:
        return [
            {"session_id": s.session_id, "n_items": len(s.items)} for s in self.sessions
        ]

    def blinded_session(self, session_id: str) -> dict:
        for s in self.sessions:
            if s.session_id == session_id:
                return {
                    "session_id": s.session_id,
                    "items": [
                        {
                            "item_id": i.item_id,
                            "part": i.part,
                            "prompt": i.prompt,
                            "a_token": i.a_token,
                            "b_token": i.b_token,
                            "reference_token": i.reference_token,
                        }
                        for i in s.items
                    ],
                }
        raise KeyError(session_id)

    def condition_of(self, session_id: str, item_id: str, choice: str) -> str:
        for s in self.sessions:
            if s.session_id != session_id:
                continue
            for i in s.items:
                if i.item_id == item_id:
                    return i.a_condition if choice == "a" else i.b_condition
        raise KeyError((session_id, item_id))


def _token(seed: int, *parts: str) -> str:
    digest = hashlib.sha256(":".join([str(seed), *parts]).encode()).hexdigest()
    return digest[:24]


def build_sessions(pairs: list[ComparisonPair], seed: int, n_sessions: int = 20) -> SessionSet:
    """Lay out blinded sections, one conversion pair per section, cycling
    through pairs when there are fewer pairs than sections.

    A per-section coin decides whether "first" is presented as A or B; the
    assignment stays fixed across the section's three parts so the
    identity question can refer back to the same two samples.
    """
    if not pairs:
        raise ConfigurationError("no comparison pairs given")
    if n_sessions < 1:
        raise ConfigurationError("need at least one session")
    rng = np.random.default_rng([seed, 17])
    audio: dict[str, str] = {}
    sessions: list[EvalSession] = []

    def register(path: str, *key_parts: str) -> str:
        token = _token(seed, *key_parts)
        audio[token] = path
        return token

    for k in range(n_sessions):
        pair = pairs[k % len(pairs)]
        session_id = f"s{k + 1:03d}"
        flip = bool(rng.integers(0, 2))
        a_cond, b_cond = ("second", "first") if flip else ("first", "second")
        a_path = pair.second if flip else pair.first
        b_path = pair.first if flip else pair.second
        a_token = register(a_path, session_id, "a")
        b_token = register(b_path, session_id, "b")
        items = []
        for part in PARTS:
            ref_kind = PART_REFERENCE[part]
            ref_token = None
            if ref_kind == "source":
                ref_token = register(pair.source, session_id, part, "ref")
            elif ref_kind == "target":
                ref_token = register(pair.target, session_id, part, "ref")
            items.append(
                SessionItem(
                    item_id=f"{session_id}-{part}",
                    part=part,
                    prompt=PART_PROMPTS[part],
                    a_token=a_token,
                    b_token=b_token,
                    a_condition=a_cond,
                    b_condition=b_cond,
                    reference_token=ref_token,
                )
            )
        sessions.append(EvalSession(session_id=session_id, items=items))
    return SessionSet(seed=seed, sessions=sessions, audio_by_token=audio)


def load_pairs_table(path) -> list[ComparisonPair]:
    """Tab-separated pair listing: pair_id, first, second, source, target."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ConfigurationError(f"line {lineno}: expected 5 tab-separated fields")
        pairs.append(ComparisonPair(*fields))
    return pairs


# -- responses ---------------------------------------------------------------


class ResponseStore:
    """Append-only JSON-lines store of participant choices.

    One record per (subject, session, item). A repeat submission with the
    same choice is acknowledged without a new record; one with a different
    choice raises, and the original stays untouched.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._seen: dict[tuple[str, str, str], str] = {}
        if self.path.exists():
            for record in self.read(self.path):
                key = (record["subject"], record["session_id"], record["item_id"])
                self._seen[key] = record["choice"]

    def __len__(self) -> int:
        return len(self._seen)

    def add(self, subject: str, session_id: str, item_id: str, choice: str) -> dict:
        if choice not in ("a", "b"):
            raise ValidationError(f"choice must be 'a' or 'b', got {choice!r}")
        key = (subject, session_id, item_id)
        if key in self._seen:
            if self._seen[key] == choice:
                return {"status": "duplicate", "choice": choice}
            raise DuplicateChoiceError(
                f"{subject} already answered {item_id} with {self._seen[key]!r}"
            )
        record = {
            "subject": subject,
            "session_id": session_id,
            "item_id": item_id,
            "choice": choice,
            "received_at": datetime.now(timezone.utc).isoformat(),
        }
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._seen[key] = choice
        return {"status": "accepted", "choice": choice}

    @staticmethod
    def read(path) -> list[dict]:
        records = []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                records.append(json.loads(line))
        return records


def exact_binomial_p(k: int, n: int) -> float:
    """Two-sided exact binomial test against a fair coin:
    min(1, 2 * min(P(X <= k), P(X >= k))) with X ~ Binomial(n, 1/2)."""
    if n < 0 or not 0 <= k <= max(n, 0):
        raise ValidationError(f"invalid binomial arguments k={k} n={n}")
    if n == 0:
        return 1.0
    scale = 2.0 ** -n
    lower = sum(math.comb(n, i) for i in range(0, k + 1)) * scale
    upper = sum(math.comb(n, i) for i in range(k, n + 1)) * scale
    return min(1.0, 2.0 * min(lower, upper))


def _tally(wins: dict[str, int]) -> dict:
    n = wins["first"] + wins["second"]
    return {
        "n": n,
        "first_wins": wins["first"],
        "second_wins": wins["second"],
        "first_proportion": wins["first"] / n if n else None,
        "p_value": exact_binomial_p(wins["first"], n),
    }


def aggregate_responses(sessions: SessionSet, responses: list[dict]) -> dict:
    """Tally choices by part and attach exact two-sided p-values for the
    hypothesis that the two systems are chosen equally often. The result is
    a pure function of the response *set*: ordering never matters."""
    if not responses:
        raise ValidationError("no responses recorded")
    by_part: dict[str, dict[str, int]] = {p: {"first": 0, "second": 0} for p in PARTS}
    total = {"first": 0, "second": 0}
    for record in responses:
        condition = sessions.condition_of(
            record["session_id"], record["item_id"], record["choice"]
        )
        part = record["item_id"].rsplit("-", 1)[1]
        by_part[part][condition] += 1
        total[condition] += 1
    return {
        "n_responses": total["first"] + total["second"],
        "parts": {part: _tally(wins) for part, wins in by_part.items()},
        "overall": _tally(total),
    }
