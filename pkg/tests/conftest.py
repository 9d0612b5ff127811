"""Shared fixtures: synthetic corpora, desk-scale manifests, and one
session-scoped three-stage training run reused by trainer, conversion, and
acceptance tests."""

from types import SimpleNamespace

import numpy as np
import pytest
import torch

from stepback.dataset import build_manifest
from stepback.features import StftConfig
from stepback.nets import parameter_checksum, tiny_model_config
from stepback.synth import make_toy_corpus
from stepback.trainer import Trainer, TrainingConfig

DESK_STFT = StftConfig(n_fft=64, hop=32, sample_rate=8000)


def desk_training_config(**overrides) -> TrainingConfig:
    base = dict(
        seed=11,
        prep_recon_steps=500,
        prep_clf_steps=500,
        stepback_cycles=20,
        recon_per_cycle=4,
        gan_steps=10,
        disc_per_gen=5,
        lambda_ramp_steps=36000,
        batch_size=8,
        segment_frames=16,
        checkpoint_every=10**6,
        log_every=1,
        lr=1e-3,
    )
    base.update(overrides)
    return TrainingConfig(**base)


def probe_source_logprob(trainer: Trainer, n_batches: int = 10) -> float:
    """Mean frozen-judge log-probability of the true source speaker on
    cross-speaker decodes, over fixed probe batches outside training steps."""
    trainer.models.eval()
    values = []
    with torch.no_grad():
        for step in range(10**6, 10**6 + n_batches):
            batch = trainer.source.batch("stepback", step)
            x = torch.from_numpy(np.stack([s.values for s in batch.segments]))
            own = torch.tensor([s.index for s in batch.speaker_ids])
            other = torch.tensor([s.index for s in batch.other_speaker_ids])
            converted = trainer.models.decoder(trainer.models.encoder(x), other)
            log_probs = trainer.models.classifier.log_probs(converted)
            values.append(float(log_probs[torch.arange(len(own)), own].mean()))
    return float(np.mean(values))


@pytest.fixture(scope="session")
def corpus4(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus4")
    make_toy_corpus(
        root,
        n_speakers=4,
        utterances_per_speaker=6,
        duration_s=1.2,
        sample_rate=8000,
        flac_every=5,
    )
    return root


@pytest.fixture(scope="session")
def manifest4(corpus4):
    return build_manifest(
        corpus4, subset_seed=3, stft=DESK_STFT, min_frames=32, speakers_per_gender=2
    )


@pytest.fixture(scope="session")
def corpus2(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus2")
    make_toy_corpus(
        root, n_speakers=2, utterances_per_speaker=8, duration_s=1.2, sample_rate=8000
    )
    return root


@pytest.fixture(scope="session")
def manifest2(corpus2):
    return build_manifest(
        corpus2, subset_seed=3, stft=DESK_STFT, min_frames=32, speakers_per_gender=1
    )


@pytest.fixture(scope="session")
def desk_run(manifest2, tmp_path_factory):
    """One complete desk-scale pipeline: 500+500 preparatory steps on the
    2-speaker corpus, 20 dual-flow cycles, 10 adversarial generator steps.
    Probe statistics and the frozen classifier checksum are captured at the
    stage boundaries for the tests that assert on them."""
    out = tmp_path_factory.mktemp("desk_run")
    model_cfg = tiny_model_config(n_bins=DESK_STFT.n_bins, n_speakers=2)
    trainer = Trainer(manifest2, model_cfg, desk_training_config(), out)
    trainer.run_preparatory()
    clf_checksum_after_prep = parameter_checksum(trainer.models.classifier)
    probe_before = probe_source_logprob(trainer)
    trainer.run_stepback()
    probe_after_stepback = probe_source_logprob(trainer)
    clf_checksum_after_stepback = parameter_checksum(trainer.models.classifier)
    trainer.run_adversarial()
    clf_checksum_after_gan = parameter_checksum(trainer.models.classifier)
    ckpt = trainer.save(out / "final.pt")
    return SimpleNamespace(
        trainer=trainer,
        manifest=manifest2,
        model_cfg=model_cfg,
        out=out,
        ckpt=ckpt,
        metrics_path=out / "metrics.jsonl",
        clf_checksum_after_prep=clf_checksum_after_prep,
        clf_checksum_after_stepback=clf_checksum_after_stepback,
        clf_checksum_after_gan=clf_checksum_after_gan,
        probe_before=probe_before,
        probe_after_stepback=probe_after_stepback,
    )
