#!/usr/bin/env python3
"""Generate a synthetic speech-like corpus for desk experiments.

The layout matches what `stepback dataset build` expects: a speaker-info
table plus one directory of utterances per speaker. Useful for exercising
the full pipeline on machines without access to a real corpus.
"""

import argparse
from pathlib import Path

from stepback.synth import make_toy_corpus


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="corpus root directory")
    parser.add_argument("--speakers", type=int, default=4)
    parser.add_argument("--utterances", type=int, default=8)
    parser.add_argument("--duration", type=float, default=1.4, help="seconds per utterance")
    parser.add_argument("--sample-rate", type=int, default=8000)
    parser.add_argument(
        "--flac-every",
        type=int,
        default=0,
        help="write every Nth utterance as FLAC instead of WAV (0 = all WAV)",
    )
    args = parser.parse_args()

    root = make_toy_corpus(
        Path(args.out),
        n_speakers=args.speakers,
        utterances_per_speaker=args.utterances,
        duration_s=args.duration,
        sample_rate=args.sample_rate,
        flac_every=args.flac_every,
    )
    n_files = sum(1 for _ in (root / "wav").rglob("*") if _.is_file())
    print(f"wrote {root}: {args.speakers} speakers, {n_files} utterances")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
