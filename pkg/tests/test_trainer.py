"""Trainer tests: stage budgets, the destructive-term ramp, metric logging,
checkpoint persistence, stage ordering, classifier freezing, determinism,
and divergence handling."""

import json
from types import SimpleNamespace

import pytest
import torch

from conftest import DESK_STFT, desk_training_config
from stepback.errors import ConfigurationError, TrainingDivergedError, ValidationError
from stepback.nets import parameter_checksum, tiny_model_config
from stepback.trainer import (
    CHECKPOINT_VERSION,
    MetricLog,
    Trainer,
    TrainingConfig,
    lambda_schedule,
    load_checkpoint,
    training_budget,
)


def test_training_budget_default_schedule():
    budget = training_budget(TrainingConfig())
    assert budget == {
        "preparatory": 48_000,
        "stepback": 200_000,
        "adversarial": 300_000,
        "total": 548_000,
    }


def test_training_budget_desk_schedule():
    budget = training_budget(desk_training_config())
    assert budget == {
        "preparatory": 1000,
        "stepback": 100,
        "adversarial": 60,
        "total": 1160,
    }


def test_training_budget_zero_counts():
    empty = SimpleNamespace(
        prep_recon_steps=0,
        prep_clf_steps=0,
        stepback_cycles=0,
        recon_per_cycle=0,
        gan_steps=0,
        disc_per_gen=0,
    )
    assert training_budget(empty)["total"] == 0


def test_training_config_rejects_nonpositive_counts():
    with pytest.raises(ConfigurationError):
        TrainingConfig(prep_recon_steps=0)
    with pytest.raises(ConfigurationError):
        TrainingConfig(stepback_cycles=-1)
    with pytest.raises(ConfigurationError):
        TrainingConfig(lr=0.0)


def test_training_config_round_trip():
    cfg = desk_training_config()
    assert TrainingConfig.from_dict(cfg.to_dict()) == cfg


def test_lambda_schedule_endpoints():
    cfg = TrainingConfig()
    assert lambda_schedule(0, cfg) == 0.0
    assert lambda_schedule(18_000, cfg) == pytest.approx(0.0005, rel=1e-12)
    assert lambda_schedule(36_000, cfg) == pytest.approx(0.001, rel=1e-12)
    # saturates instead of overshooting
    assert lambda_schedule(300_000, cfg) == pytest.approx(0.001, rel=1e-12)
    with pytest.raises(ValidationError):
        lambda_schedule(-1, cfg)


def test_lambda_schedule_monotone():
    cfg = TrainingConfig()
    values = [lambda_schedule(s, cfg) for s in range(0, 40_000, 500)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_metric_log_round_trip(tmp_path):
    path = tmp_path / "metrics.jsonl"
    log = MetricLog(path)
    log.append(stage="prep", kind="reconstruction", step=0, loss=1.5)
    log.append(stage="gan", kind="generator", step=3, loss=-0.25)
    log.close()
    records = MetricLog.read(path)
    assert records == [
        {"stage": "prep", "kind": "reconstruction", "step": 0, "loss": 1.5},
        {"stage": "gan", "kind": "generator", "step": 3, "loss": -0.25},
    ]
    # one JSON document per line, keys sorted for stable diffs
    first = path.read_text().splitlines()[0]
    assert list(json.loads(first)) == sorted(json.loads(first))


def _mini_trainer(manifest2, out, **overrides):
    model_cfg = tiny_model_config(n_bins=DESK_STFT.n_bins, n_speakers=2)
    small = dict(prep_recon_steps=8, prep_clf_steps=8, stepback_cycles=4, gan_steps=2)
    small.update(overrides)
    return Trainer(manifest2, model_cfg, desk_training_config(**small), out)


def test_trainer_validates_bins(manifest2, tmp_path):
    bad = tiny_model_config(n_bins=17, n_speakers=2)
    with pytest.raises(ConfigurationError):
        Trainer(manifest2, bad, desk_training_config(), tmp_path)


def test_trainer_validates_speaker_count(manifest2, tmp_path):
    bad = tiny_model_config(n_bins=DESK_STFT.n_bins, n_speakers=5)
    with pytest.raises(ConfigurationError):
        Trainer(manifest2, bad, desk_training_config(), tmp_path)


def test_trainer_validates_segment_divisibility(manifest2, tmp_path):
    model_cfg = tiny_model_config(n_bins=DESK_STFT.n_bins, n_speakers=2)
    with pytest.raises(ConfigurationError):
        Trainer(manifest2, model_cfg, desk_training_config(segment_frames=20), tmp_path)


def test_stage_order_enforced(manifest2, tmp_path):
    trainer = _mini_trainer(manifest2, tmp_path / "a")
    with pytest.raises(ConfigurationError):
        trainer.run_stepback()
    with pytest.raises(ConfigurationError):
        trainer.run_adversarial()
    with pytest.raises(ConfigurationError):
        trainer.run(stage="warmup")


def test_metric_stream_deterministic(manifest2, tmp_path):
    """Two fresh runs over the same manifest and seed must log byte-equal
    metric streams."""
    a = _mini_trainer(manifest2, tmp_path / "a", prep_recon_steps=100, prep_clf_steps=100)
    b = _mini_trainer(manifest2, tmp_path / "b", prep_recon_steps=100, prep_clf_steps=100)
    a.run_preparatory(limit=100)
    b.run_preparatory(limit=100)
    assert (tmp_path / "a" / "metrics.jsonl").read_text() == (
        tmp_path / "b" / "metrics.jsonl"
    ).read_text()


def test_limit_leaves_stage_incomplete(manifest2, tmp_path):
    trainer = _mini_trainer(manifest2, tmp_path)
    trainer.run_preparatory(limit=3)
    assert trainer.counters["prep_recon"] == 3
    assert trainer.counters["prep_clf"] == 0
    assert not trainer._prep_complete()
    trainer.run_preparatory()
    assert trainer._prep_complete()


def test_checkpoint_round_trip(manifest2, tmp_path):
    trainer = _mini_trainer(manifest2, tmp_path)
    trainer.run_preparatory(limit=2)
    path = trainer.save(tmp_path / "ck.pt")
    ck = load_checkpoint(path)
    assert ck.counters == trainer.counters
    assert ck.model_config == trainer.models.config
    assert ck.training_config == trainer.train_cfg
    assert ck.stft == manifest2.stft
    assert list(ck.speakers) == list(manifest2.speakers)
    for name, module in trainer.models.modules().items():
        assert parameter_checksum(ck.models.modules()[name]) == parameter_checksum(module)


def test_checkpoint_restores_optimizer_state(manifest2, tmp_path):
    trainer = _mini_trainer(manifest2, tmp_path / "a")
    trainer.run_preparatory(limit=4)
    path = trainer.save(tmp_path / "ck.pt")
    resumed = Trainer.from_checkpoint(path, manifest2, tmp_path / "b")
    state = resumed.optimizers["recon"].state_dict()["state"]
    assert state, "optimizer moments should carry over"
    original = trainer.optimizers["recon"].state_dict()["state"]
    for key in original:
        assert torch.equal(original[key]["exp_avg"], state[key]["exp_avg"])


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "other.pt"
    torch.save({"weights": [1, 2, 3]}, path)
    with pytest.raises(ConfigurationError):
        load_checkpoint(path)


def test_checkpoint_rejects_future_version(manifest2, tmp_path):
    trainer = _mini_trainer(manifest2, tmp_path)
    path = trainer.save(tmp_path / "ck.pt")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    payload["version"] = CHECKPOINT_VERSION + 1
    bad = tmp_path / "future.pt"
    torch.save(payload, bad)
    with pytest.raises(ConfigurationError):
        load_checkpoint(bad)


def test_divergence_leaves_diagnostic_checkpoint(manifest2, tmp_path):
    trainer = _mini_trainer(manifest2, tmp_path, max_loss=1e-9)
    with pytest.raises(TrainingDivergedError):
        trainer.run_preparatory()
    diagnostic = tmp_path / "diverged.pt"
    assert diagnostic.exists()
    ck = load_checkpoint(diagnostic)
    assert ck.counters["prep_clf"] == 0


def test_classifier_frozen_through_later_stages(desk_run):
    """The judge must not move once the preparatory stage ends."""
    assert desk_run.clf_checksum_after_prep == desk_run.clf_checksum_after_stepback
    assert desk_run.clf_checksum_after_prep == desk_run.clf_checksum_after_gan
    clf = desk_run.trainer.models.classifier
    assert all(not p.requires_grad for p in clf.parameters())
    assert not clf.training


def test_freeze_verification_detects_tampering(manifest2, tmp_path):
    trainer = _mini_trainer(manifest2, tmp_path)
    trainer.run_preparatory()
    with torch.no_grad():
        next(trainer.models.classifier.parameters()).add_(1.0)
    with pytest.raises(ConfigurationError):
        trainer.run_stepback()


def test_counters_at_completion(desk_run):
    assert desk_run.trainer.counters == {
        "prep_recon": 500,
        "prep_clf": 500,
        "stepback_cycles": 20,
        "gan_steps": 10,
    }


def _records(desk_run, stage, kind):
    return [
        r
        for r in MetricLog.read(desk_run.metrics_path)
        if r["stage"] == stage and r["kind"] == kind
    ]


def test_preparatory_accounting(desk_run):
    assert len(_records(desk_run, "prep", "reconstruction")) == 500
    assert len(_records(desk_run, "prep", "classifier")) == 500


def test_stepback_accounting_four_to_one(desk_run):
    recon = _records(desk_run, "stepback", "reconstruction")
    dual = _records(desk_run, "stepback", "stepback")
    assert len(recon) == 80
    assert len(dual) == 20
    assert [r["step"] for r in dual] == list(range(20))


def test_adversarial_accounting_five_to_one(desk_run):
    disc = _records(desk_run, "gan", "discriminator")
    gen = _records(desk_run, "gan", "generator")
    assert len(disc) == 50
    assert len(gen) == 10
    assert [r["step"] for r in disc] == list(range(50))


def test_stepback_log_carries_ramp(desk_run):
    dual = _records(desk_run, "stepback", "stepback")
    lams = [r["lambda"] for r in dual]
    assert lams[0] == 0.0
    assert all(b >= a for a, b in zip(lams, lams[1:]))
    for r in dual:
        assert set(r) >= {"loss", "lambda", "same_flow_distance", "identity_nll"}


def test_adversarial_log_values_sane(desk_run):
    import math

    disc = _records(desk_run, "gan", "discriminator")
    for r in disc:
        assert math.isfinite(r["wasserstein_gap"])
        assert math.isfinite(r["gradient_penalty"])
        assert r["gradient_penalty"] >= 0.0
    gen = _records(desk_run, "gan", "generator")
    for r in gen:
        assert math.isfinite(r["adversarial"])


def test_final_checkpoint_complete(desk_run):
    ck = load_checkpoint(desk_run.ckpt)
    assert ck.counters == desk_run.trainer.counters
    assert ck.classifier_checksum == desk_run.clf_checksum_after_gan


def test_resume_mid_stage_bit_identical(manifest2, tmp_path):
    """Interrupting inside the dual-flow stage and again inside the
    adversarial stage, then resuming from the saved checkpoints, must end
    with exactly the weights an uninterrupted run produces. Dropout is
    enabled so the torch RNG stream genuinely matters."""
    import dataclasses

    model_cfg = dataclasses.replace(
        tiny_model_config(n_bins=DESK_STFT.n_bins, n_speakers=2),
        dropout=0.1,
        clf_dropout=0.2,
    )
    cfg = desk_training_config(
        prep_recon_steps=6, prep_clf_steps=6, stepback_cycles=4, gan_steps=2
    )

    straight = Trainer(manifest2, model_cfg, cfg, tmp_path / "straight")
    straight.run()
    want = {
        name: parameter_checksum(m) for name, m in straight.models.modules().items()
    }

    broken = Trainer(manifest2, model_cfg, cfg, tmp_path / "broken")
    broken.run_preparatory()
    broken.run_stepback(limit=2)
    first_stop = broken.save(tmp_path / "mid_stepback.pt")

    resumed = Trainer.from_checkpoint(first_stop, manifest2, tmp_path / "resumed1")
    assert resumed.counters["stepback_cycles"] == 2
    resumed.run_stepback()
    resumed.run_adversarial(limit=1)
    second_stop = resumed.save(tmp_path / "mid_gan.pt")

    final = Trainer.from_checkpoint(second_stop, manifest2, tmp_path / "resumed2")
    assert final.counters["gan_steps"] == 1
    final.run_adversarial()

    got = {name: parameter_checksum(m) for name, m in final.models.modules().items()}
    assert got == want
