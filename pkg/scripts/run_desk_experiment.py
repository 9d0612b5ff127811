#!/usr/bin/env python3
"""One self-contained desk-scale experiment, start to finish.

Builds a synthetic corpus, selects a manifest, trains all three stages at
toy sizes, converts a held-out utterance to every other speaker, writes
variance profiles and a spectrogram heatmap, and lays out a blinded
listening session file ready for `stepback serve`.

Everything lands under --out; the run takes a couple of minutes on CPU.
"""

import argparse
import time
from pathlib import Path

from stepback.config import RunConfig, save_run_config
from stepback.convert import convert_file
from stepback.dataset import build_manifest, save_manifest
from stepback.evaluation import (
    ComparisonPair,
    build_sessions,
    global_variance_profile,
    render_heatmap,
    write_gv_csv,
)
from stepback.features import StftConfig, compute_spectrogram, load_waveform
from stepback.nets import tiny_model_config
from stepback.synth import make_toy_corpus
from stepback.trainer import Trainer, TrainingConfig, load_checkpoint, training_budget


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="experiment directory")
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--prep-steps", type=int, default=500)
    parser.add_argument("--cycles", type=int, default=20)
    parser.add_argument("--gan-steps", type=int, default=10)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stft = StftConfig(n_fft=64, hop=32, sample_rate=8000)

    t0 = time.time()
    corpus = make_toy_corpus(
        out / "corpus", n_speakers=4, utterances_per_speaker=8, duration_s=1.2,
        sample_rate=8000,
    )
    manifest = build_manifest(
        corpus, subset_seed=3, stft=stft, min_frames=32, speakers_per_gender=2
    )
    save_manifest(manifest, out / "manifest.tsv")
    print(f"[{time.time() - t0:6.1f}s] manifest: {len(manifest.records)} records, "
          f"{len(manifest.speakers)} speakers")

    model_cfg = tiny_model_config(n_bins=stft.n_bins, n_speakers=len(manifest.speakers))
    train_cfg = TrainingConfig(
        seed=args.seed,
        prep_recon_steps=args.prep_steps,
        prep_clf_steps=args.prep_steps,
        stepback_cycles=args.cycles,
        gan_steps=args.gan_steps,
        batch_size=8,
        segment_frames=16,
        lr=1e-3,
        checkpoint_every=10**6,
        log_every=10,
    )
    save_run_config(
        RunConfig(
            manifest=str(out / "manifest.tsv"),
            out_dir=str(out / "run"),
            model=model_cfg,
            train=train_cfg,
        ),
        out / "run.cfg",
    )
    print(f"budget: {training_budget(train_cfg)}")

    trainer = Trainer(manifest, model_cfg, train_cfg, out / "run")
    ckpt_path = trainer.run()
    print(f"[{time.time() - t0:6.1f}s] trained, checkpoint at {ckpt_path}")

    checkpoint = load_checkpoint(ckpt_path)
    source = manifest.test_records()[0]
    conversions = []
    for speaker in manifest.speakers:
        if speaker == source.speaker:
            continue
        wav_out = out / "converted" / f"{source.speaker.code}_to_{speaker.code}.wav"
        result = convert_file(
            checkpoint, source.audio_path, speaker.code, wav_out,
            gl_iters=30, source_speaker=source.speaker.code,
        )
        conversions.append((speaker, result))
        print(f"[{time.time() - t0:6.1f}s] {wav_out.name}: {result.n_frames} frames")

    originals = [
        compute_spectrogram(
            load_waveform(r.audio_path, target_rate=stft.sample_rate), stft
        ).values
        for r in manifest.test_records()
    ]
    write_gv_csv(global_variance_profile(originals, "F2F"), out / "gv_natural.csv")
    write_gv_csv(
        global_variance_profile([res.spectrogram for _, res in conversions], "F2M"),
        out / "gv_converted.csv",
    )
    render_heatmap(conversions[0][1].spectrogram, out / "converted.png")
    render_heatmap(originals[0], out / "original.png")

    target_rec = next(
        r for r in manifest.train_records() if r.speaker == conversions[0][0]
    )
    pair = ComparisonPair(
        pair_id="desk0",
        first=str(conversions[0][1].output_path),
        second=str(conversions[-1][1].output_path),
        source=source.audio_path,
        target=target_rec.audio_path,
    )
    build_sessions([pair], seed=args.seed, n_sessions=2).save(out / "sessions.json")
    print(f"[{time.time() - t0:6.1f}s] wrote profiles, heatmaps, and sessions under {out}")
    print(f"serve the listening test with:\n"
          f"  stepback serve --sessions {out / 'sessions.json'} "
          f"--responses {out / 'responses.jsonl'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
