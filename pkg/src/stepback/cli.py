"""Command line front end.

Subcommands: dataset build, train, convert, eval gv, eval heatmap,
eval sessions build, eval sessions aggregate, and serve.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import convert as convert_mod
from . import evaluation
from .config import load_run_config
from .dataset import build_manifest, load_manifest, save_manifest
from .features import StftConfig, compute_spectrogram, load_waveform
from .trainer import Trainer, load_checkpoint

log = logging.getLogger(__name__)


def _stft_from_args(args) -> StftConfig:
    return StftConfig(
        n_fft=args.n_fft, hop=args.hop, sample_rate=args.sample_rate
    )


def _add_stft_flags(parser) -> None:
    parser.add_argument("--sample-rate", type=int, default=16000)
    parser.add_argument("--n-fft", type=int, default=1024)
    parser.add_argument("--hop", type=int, default=256)


def cmd_dataset_build(args) -> int:
    stft = _stft_from_args(args)
    manifest = build_manifest(
        args.corpus,
        subset_seed=args.seed,
        stft=stft,
        min_frames=args.min_frames,
        speakers_per_gender=args.speakers_per_gender,
    )
    save_manifest(manifest, args.out)
    print(
        f"wrote {args.out}: {len(manifest.speakers)} speakers, "
        f"{len(manifest.records)} utterances "
        f"({len(manifest.train_records())} train / {len(manifest.test_records())} test), "
        f"{manifest.skipped} skipped"
    )
    return 0


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    manifest = load_manifest(run.manifest)
    out_dir = Path(run.out_dir)
    if args.resume is not None:
        ckpt_path = Path(args.resume) if args.resume else out_dir / "checkpoint.pt"
        if not ckpt_path.exists():
            print(f"--resume given but {ckpt_path} does not exist", file=sys.stderr)
            return 2
        trainer = Trainer.from_checkpoint(ckpt_path, manifest, out_dir)
    else:
        trainer = Trainer(manifest, run.model, run.train, out_dir)
    final = trainer.run(stage=args.stage)
    print(f"training done, checkpoint at {final}")
    return 0


def cmd_convert(args) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    result = convert_mod.convert_file(
        checkpoint,
        args.src,
        args.target,
        args.out,
        gl_iters=args.gl_iters,
        source_speaker=args.source_speaker,
    )
    print(f"wrote {result.output_path} ({result.n_frames} frames)")
    return 0


def cmd_eval_gv(args) -> int:
    manifest = load_manifest(args.manifest)
    src_gender, tgt_gender = evaluation.kind_genders(args.kind)
    specs = []
    if args.ckpt:
        # converted profile: run test utterances of the source gender
        # through the model toward one target speaker of the target gender
        checkpoint = load_checkpoint(args.ckpt)
        targets = [s.code for s in checkpoint.speakers if s.gender == tgt_gender]
        if not targets:
            print(f"checkpoint has no {tgt_gender} speakers", file=sys.stderr)
            return 2
        target = args.target or targets[0]
        sources = [r for r in manifest.test_records() if r.speaker.gender == src_gender]
        for record in sources[: args.limit]:
            wave = load_waveform(record.audio_path, target_rate=checkpoint.stft.sample_rate)
            spec = compute_spectrogram(wave, checkpoint.stft)
            normalized = checkpoint.stats.normalize(spec.values, record.speaker.code)
            converted = convert_mod.convert_spectrogram(
                checkpoint,
                normalized,
                checkpoint.speakers.by_code(target).index,
            )
            specs.append(checkpoint.stats.denormalize(converted, target))
    else:
        # natural reference profile: the target gender's own test utterances
        records = [r for r in manifest.test_records() if r.speaker.gender == tgt_gender]
        for record in records[: args.limit]:
            wave = load_waveform(record.audio_path, target_rate=manifest.stft.sample_rate)
            specs.append(compute_spectrogram(wave, manifest.stft).values)
    profile = evaluation.global_variance_profile(specs, args.kind)
    evaluation.write_gv_csv(profile, args.out)
    print(f"wrote {args.out}: kind {args.kind}, {profile.n_utterances} utterances")
    return 0


def cmd_eval_heatmap(args) -> int:
    in_path = Path(args.in_path)
    if in_path.suffix.lower() == ".npy":
        import numpy as np

        values = np.load(in_path)
    else:
        stft = _stft_from_args(args)
        wave = load_waveform(in_path, target_rate=stft.sample_rate)
        values = compute_spectrogram(wave, stft).values
    evaluation.render_heatmap(values, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_sessions_build(args) -> int:
    pairs = evaluation.load_pairs_table(args.pairs)
    session_set = evaluation.build_sessions(pairs, seed=args.seed, n_sessions=args.sessions)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    session_set.save(out)
    n_items = sum(len(s.items) for s in session_set.sessions)
    print(f"wrote {out}: {len(session_set.sessions)} sessions, {n_items} items")
    return 0


def cmd_sessions_aggregate(args) -> int:
    session_set = evaluation.SessionSet.load(args.sessions)
    responses = (
        evaluation.ResponseStore.read(args.responses) if Path(args.responses).exists() else []
    )
    doc = evaluation.aggregate_responses(session_set, responses)
    text = json.dumps(doc, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(args.sessions, args.responses, admin_token=args.admin_token)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepback")
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="corpus tools")
    dataset_sub = p_dataset.add_subparsers(dest="dataset_command", required=True)
    p_build = dataset_sub.add_parser("build", help="select speakers and write a manifest")
    p_build.add_argument("--corpus", required=True)
    p_build.add_argument("--out", required=True)
    p_build.add_argument("--seed", type=int, required=True)
    p_build.add_argument("--min-frames", type=int, default=128)
    p_build.add_argument("--speakers-per-gender", type=int, default=10)
    _add_stft_flags(p_build)
    p_build.set_defaults(func=cmd_dataset_build)

    p_train = sub.add_parser("train", help="run the training stages")
    p_train.add_argument("--config", required=True)
    p_train.add_argument(
        "--stage", choices=["all", "prep", "stepback", "gan"], default="all"
    )
    p_train.add_argument(
        "--resume",
        nargs="?",
        const="",
        default=None,
        metavar="CKPT",
        help="continue from a checkpoint (default: <out_dir>/checkpoint.pt)",
    )
    p_train.set_defaults(func=cmd_train)

    p_convert = sub.add_parser("convert", help="convert audio to a target voice")
    p_convert.add_argument("--ckpt", required=True)
    p_convert.add_argument("--src", required=True)
    p_convert.add_argument("--target", required=True, help="target speaker code")
    p_convert.add_argument("--out", required=True)
    p_convert.add_argument("--gl-iters", type=int, default=convert_mod.DEFAULT_GL_ITERS)
    p_convert.add_argument("--source-speaker", default=None)
    p_convert.set_defaults(func=cmd_convert)

    p_eval = sub.add_parser("eval", help="objective and subjective evaluation")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)

    p_gv = eval_sub.add_parser("gv", help="per-bin global variance profile")
    p_gv.add_argument("--manifest", required=True)
    p_gv.add_argument("--kind", required=True, choices=list(evaluation.CONVERSION_KINDS))
    p_gv.add_argument("--out", required=True, help="csv file to write")
    p_gv.add_argument("--ckpt", default=None, help="profile converted outputs instead")
    p_gv.add_argument("--target", default=None, help="target speaker code (with --ckpt)")
    p_gv.add_argument("--limit", type=int, default=20, help="max utterances to profile")
    p_gv.set_defaults(func=cmd_eval_gv)

    p_heat = eval_sub.add_parser("heatmap", help="render a spectrogram image")
    p_heat.add_argument("--in", dest="in_path", required=True, help="audio or .npy file")
    p_heat.add_argument("--out", required=True)
    _add_stft_flags(p_heat)
    p_heat.set_defaults(func=cmd_eval_heatmap)

    p_sessions = eval_sub.add_parser("sessions", help="listening test sessions")
    sessions_sub = p_sessions.add_subparsers(dest="sessions_command", required=True)
    p_sb = sessions_sub.add_parser("build", help="lay out blinded sections")
    p_sb.add_argument("--pairs", required=True, help="tab separated pair table")
    p_sb.add_argument("--out", required=True, help="session file to write")
    p_sb.add_argument("--seed", type=int, required=True)
    p_sb.add_argument("--sessions", type=int, default=20)
    p_sb.set_defaults(func=cmd_sessions_build)
    p_sa = sessions_sub.add_parser("aggregate", help="tally recorded choices")
    p_sa.add_argument("--sessions", required=True)
    p_sa.add_argument("--responses", required=True)
    p_sa.add_argument("--out", default=None)
    p_sa.set_defaults(func=cmd_sessions_aggregate)

    p_serve = sub.add_parser("serve", help="run the listening test API")
    p_serve.add_argument("--sessions", required=True)
    p_serve.add_argument("--responses", required=True)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8765)
    p_serve.add_argument("--admin-token", default="change-me")
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
