"""Three-stage training: preparatory reconstruction and classifier fitting,
the dual-flow stage with its ramped destructive weight, and a final
Wasserstein adversarial stage.

Every mini-batch is addressed by (seed, stream, step), so a run can stop
and resume anywhere and replay the exact same data. Checkpoints carry
model weights, per-objective optimizer moments, stage counters, the torch
RNG state, feature statistics, and the speaker table, which makes a
resumed run bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch

from .dataset import Batch, BatchSource, FeatureLoader, Manifest, SpeakerId, SpeakerTable
from .dataset import compute_manifest_stats
from .errors import ConfigurationError, TrainingDivergedError, ValidationError
from .features import FeatureStats, StftConfig
from .losses import (
    classifier_nll,
    conversion_identity_loss,
    discriminator_loss,
    generator_adversarial_loss,
    reconstruction_loss,
    stepback_loss,
)
from .nets import ModelConfig, ModelSet, build_models, dual_decode, parameter_checksum

log = logging.getLogger(__name__)

STAGE_PREP = "prep"
STAGE_STEPBACK = "stepback"
STAGE_GAN = "gan"
STAGES = (STAGE_PREP, STAGE_STEPBACK, STAGE_GAN)

CHECKPOINT_FORMAT = "stepback-checkpoint"
CHECKPOINT_VERSION = 1

OPTIMIZER_NAMES = ("recon", "classifier", "stepback", "generator", "discriminator")


@dataclass(frozen=True)
class TrainingConfig:
    seed: int = 7
    prep_recon_steps: int = 8000
    prep_clf_steps: int = 40000
    stepback_cycles: int = 40000
    recon_per_cycle: int = 4
    gan_steps: int = 50000
    disc_per_gen: int = 5
    lambda_max: float = 0.001
    lambda_ramp_steps: int = 36000
    batch_size: int = 32
    segment_frames: int = 128
    lr: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    checkpoint_every: int = 2000
    log_every: int = 50
    max_loss: float = 1e6

    def __post_init__(self):
        for name in (
            "prep_recon_steps",
            "prep_clf_steps",
            "stepback_cycles",
            "recon_per_cycle",
            "gan_steps",
            "disc_per_gen",
            "lambda_ramp_steps",
            "batch_size",
            "segment_frames",
            "checkpoint_every",
            "log_every",
        ):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.lambda_max < 0:
            raise ConfigurationError("lambda_max must be nonnegative")
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        return cls(**d)


def lambda_schedule(step: int, cfg: TrainingConfig) -> float:
    """Destructive-term weight at a 0-based dual-flow update index: a
    linear ramp from 0 that reaches lambda_max at lambda_ramp_steps."""
    if step < 0:
        raise ValidationError(f"negative schedule step {step}")
    return min(step / cfg.lambda_ramp_steps, 1.0) * cfg.lambda_max


def training_budget(cfg: TrainingConfig) -> dict[str, int]:
    """Total mini-batch counts per stage and overall."""
    prep = cfg.prep_recon_steps + cfg.prep_clf_steps
    stepback = cfg.stepback_cycles * (cfg.recon_per_cycle + 1)
    gan = cfg.gan_steps * (cfg.disc_per_gen + 1)
    return {
        "preparatory": prep,
        "stepback": stepback,
        "adversarial": gan,
        "total": prep + stepback + gan,
    }


class MetricLog:
    """Append-only JSON-lines metric stream, one record per update."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a")

    def append(self, **record) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    @staticmethod
    def read(path) -> list[dict]:
        records = []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                records.append(json.loads(line))
        return records


def _fresh_counters() -> dict[str, int]:
    return {"prep_recon": 0, "prep_clf": 0, "stepback_cycles": 0, "gan_steps": 0}


def save_checkpoint(
    path,
    models: ModelSet,
    optimizers: dict[str, torch.optim.Optimizer],
    train_cfg: TrainingConfig,
    counters: dict[str, int],
    stats: FeatureStats,
    speakers: SpeakerTable,
    stft: StftConfig,
    classifier_checksum: str | None = None,
) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": models.config.to_dict(),
        "training_config": train_cfg.to_dict(),
        "counters": dict(counters),
        "models": {name: m.state_dict() for name, m in models.modules().items()},
        "optimizers": {name: opt.state_dict() for name, opt in optimizers.items()},
        "torch_rng": torch.get_rng_state(),
        "stats": stats.to_dict(),
        "speakers": [(s.index, s.code, s.gender) for s in speakers],
        "stft": stft.to_dict(),
        "classifier_checksum": classifier_checksum,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


@dataclass
class Checkpoint:
    model_config: ModelConfig
    training_config: TrainingConfig
    counters: dict[str, int]
    models: ModelSet
    optimizer_states: dict[str, dict]
    torch_rng: torch.Tensor
    stats: FeatureStats
    speakers: SpeakerTable
    stft: StftConfig
    classifier_checksum: str | None = None


def load_checkpoint(path) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a recognized checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(
            f"checkpoint version {payload.get('version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    model_cfg = ModelConfig.from_dict(payload["model_config"])
    from .nets import Decoder, Discriminator, Encoder, SpeakerClassifier

    models = ModelSet(
        config=model_cfg,
        encoder=Encoder(model_cfg),
        decoder=Decoder(model_cfg),
        classifier=SpeakerClassifier(model_cfg),
        discriminator=Discriminator(model_cfg),
    )
    for name, module in models.modules().items():
        module.load_state_dict(payload["models"][name])
    speakers = SpeakerTable(
        [SpeakerId(index=i, code=c, gender=g) for i, c, g in payload["speakers"]]
    )
    return Checkpoint(
        model_config=model_cfg,
        training_config=TrainingConfig.from_dict(payload["training_config"]),
        counters=dict(payload["counters"]),
        models=models,
        optimizer_states=payload["optimizers"],
        torch_rng=payload["torch_rng"],
        stats=FeatureStats.from_dict(payload["stats"]),
        speakers=speakers,
        stft=StftConfig.from_dict(payload["stft"]),
        classifier_checksum=payload.get("classifier_checksum"),
    )


class Trainer:
    """Drives the three stages over one manifest.

    The classifier is trained only during the preparatory stage. Once that
    stage completes it is frozen: gradients disabled, eval mode, and its
    parameter checksum recorded so later stages can prove it never moved.
    """

    def __init__(
        self,
        manifest: Manifest,
        model_cfg: ModelConfig,
        train_cfg: TrainingConfig,
        out_dir,
        stats: FeatureStats | None = None,
    ):
        if model_cfg.n_bins != manifest.stft.n_bins:
            raise ConfigurationError(
                f"model expects {model_cfg.n_bins} bins, features have {manifest.stft.n_bins}"
            )
        if train_cfg.segment_frames % model_cfg.frame_multiple:
            raise ConfigurationError(
                f"segment_frames {train_cfg.segment_frames} not divisible by "
                f"{model_cfg.frame_multiple}"
            )
        if train_cfg.segment_frames < model_cfg.clf_min_frames:
            raise ConfigurationError(
                f"segment_frames {train_cfg.segment_frames} below classifier minimum "
                f"{model_cfg.clf_min_frames}"
            )
        if len(manifest.speakers) != model_cfg.n_speakers:
            raise ConfigurationError(
                f"model expects {model_cfg.n_speakers} speakers, "
                f"manifest has {len(manifest.speakers)}"
            )
        self.manifest = manifest
        self.train_cfg = train_cfg
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.stats = stats or compute_manifest_stats(manifest)
        loader = FeatureLoader(manifest.stft, self.stats)
        self.source = BatchSource(
            manifest.train_records(),
            manifest.speakers,
            loader,
            seed=train_cfg.seed,
            batch_size=train_cfg.batch_size,
            segment_frames=train_cfg.segment_frames,
        )
        self.models = build_models(model_cfg, seed=train_cfg.seed)
        self.counters = _fresh_counters()
        self.optimizers = self._build_optimizers()
        self.metrics = MetricLog(self.out_dir / "metrics.jsonl")
        self.classifier_checksum: str | None = None

    def _build_optimizers(self) -> dict[str, torch.optim.Optimizer]:
        cfg = self.train_cfg
        betas = (cfg.adam_beta1, cfg.adam_beta2)
        gen_params = list(self.models.encoder.parameters()) + list(
            self.models.decoder.parameters()
        )
        return {
            "recon": torch.optim.Adam(gen_params, lr=cfg.lr, betas=betas),
            "classifier": torch.optim.Adam(
                self.models.classifier.parameters(), lr=cfg.lr, betas=betas
            ),
            "stepback": torch.optim.Adam(gen_params, lr=cfg.lr, betas=betas),
            "generator": torch.optim.Adam(gen_params, lr=cfg.lr, betas=betas),
            "discriminator": torch.optim.Adam(
                self.models.discriminator.parameters(), lr=cfg.lr, betas=betas
            ),
        }

    @classmethod
    def from_checkpoint(cls, path, manifest: Manifest, out_dir) -> "Trainer":
        ck = load_checkpoint(path)
        trainer = cls(
            manifest, ck.model_config, ck.training_config, out_dir, stats=ck.stats
        )
        for name, module in trainer.models.modules().items():
            module.load_state_dict(ck.models.modules()[name].state_dict())
        for name, opt in trainer.optimizers.items():
            opt.load_state_dict(ck.optimizer_states[name])
        trainer.counters = dict(ck.counters)
        trainer.classifier_checksum = ck.classifier_checksum
        torch.set_rng_state(ck.torch_rng.cpu())
        if trainer._prep_complete():
            trainer._freeze_classifier(verify=True)
        return trainer

    # -- plumbing -----------------------------------------------------------

    def _tensors(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        x = torch.from_numpy(np.stack([s.values for s in batch.segments]))
        ids = torch.tensor([s.index for s in batch.speaker_ids], dtype=torch.long)
        return x, ids

    def _ids(self, speakers: list[SpeakerId]) -> torch.Tensor:
        return torch.tensor([s.index for s in speakers], dtype=torch.long)

    def _check_finite(self, value: float, where: str) -> None:
        if not math.isfinite(value) or abs(value) > self.train_cfg.max_loss:
            # leave a diagnostic checkpoint of the state that produced this
            diagnostic = self.save(self.out_dir / "diverged.pt")
            raise TrainingDivergedError(
                f"{where} loss diverged to {value}, state saved to {diagnostic}"
            )

    def _prep_complete(self) -> bool:
        return (
            self.counters["prep_recon"] >= self.train_cfg.prep_recon_steps
            and self.counters["prep_clf"] >= self.train_cfg.prep_clf_steps
        )

    def _freeze_classifier(self, verify: bool = False) -> None:
        clf = self.models.classifier
        clf.eval()
        for p in clf.parameters():
            p.requires_grad_(False)
        checksum = parameter_checksum(clf)
        if verify and self.classifier_checksum and checksum != self.classifier_checksum:
            raise ConfigurationError("classifier weights changed after freezing")
        self.classifier_checksum = checksum

    def save(self, path=None) -> Path:
        path = Path(path) if path else self.out_dir / "checkpoint.pt"
        save_checkpoint(
            path,
            self.models,
            self.optimizers,
            self.train_cfg,
            self.counters,
            self.stats,
            self.manifest.speakers,
            self.manifest.stft,
            classifier_checksum=self.classifier_checksum,
        )
        return path

    def _maybe_log(self, stage: str, kind: str, step: int, fields: dict) -> None:
        if step % self.train_cfg.log_every == 0:
            self.metrics.append(stage=stage, kind=kind, step=step, **fields)

    # -- single updates -----------------------------------------------------

    def _recon_update(self, stream: str, step: int) -> float:
        batch = self.source.batch("reconstruction", step, stream=stream)
        x, ids = self._tensors(batch)
        out = self.models.decoder(self.models.encoder(x), ids)
        loss = reconstruction_loss(out, x)
        value = float(loss.detach())
        self._check_finite(value, "reconstruction")
        opt = self.optimizers["recon"]
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        return value

    def _classifier_update(self, step: int) -> float:
        batch = self.source.batch("classifier", step)
        x, ids = self._tensors(batch)
        loss = classifier_nll(self.models.classifier.log_probs(x), ids)
        value = float(loss.detach())
        self._check_finite(value, "classifier")
        opt = self.optimizers["classifier"]
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        return value

    def _stepback_update(self, cycle: int) -> dict:
        batch = self.source.batch("stepback", cycle)
        x, own = self._tensors(batch)
        other = self._ids(batch.other_speaker_ids)
        code = self.models.encoder(x)
        rebuilt, converted = dual_decode(self.models.decoder, code, own, other)
        same_flow = reconstruction_loss(rebuilt, x)
        identity = conversion_identity_loss(self.models.classifier, converted, other)
        lam = lambda_schedule(cycle, self.train_cfg)
        loss = stepback_loss(same_flow, identity, lam)
        value = float(loss.detach())
        self._check_finite(value, "stepback")
        opt = self.optimizers["stepback"]
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        return {
            "loss": value,
            "lambda": lam,
            "same_flow_distance": float(same_flow.detach()),
            "identity_nll": float(identity.detach()),
        }

    def _disc_update(self, step: int) -> dict:
        batch, targets = self.source.batch_with_targets("gan-disc", step)
        x, ids = self._tensors(batch)
        with torch.no_grad():
            fake = self.models.decoder(self.models.encoder(x), self._ids(targets))
        parts = discriminator_loss(self.models.discriminator, x, fake, ids)
        self._check_finite(parts.parts["total"], "discriminator")
        opt = self.optimizers["discriminator"]
        opt.zero_grad(set_to_none=True)
        parts.total.backward()
        opt.step()
        return parts.parts

    def _gen_update(self, step: int) -> dict:
        batch, targets = self.source.batch_with_targets("gan-gen", step)
        x, _ = self._tensors(batch)
        target_ids = self._ids(targets)
        fake = self.models.decoder(self.models.encoder(x), target_ids)
        parts = generator_adversarial_loss(self.models.discriminator, fake, target_ids)
        self._check_finite(parts.parts["total"], "generator")
        opt = self.optimizers["generator"]
        opt.zero_grad(set_to_none=True)
        parts.total.backward()
        opt.step()
        return parts.parts

    # -- stages -------------------------------------------------------------

    def run_preparatory(self, limit: int | None = None) -> None:
        """First stage. limit caps how many updates this call performs,
        leaving the stage resumable; None runs it to completion."""
        cfg = self.train_cfg
        remaining = float("inf") if limit is None else limit
        self.models.train()
        for step in range(self.counters["prep_recon"], cfg.prep_recon_steps):
            if remaining <= 0:
                self.save()
                return
            value = self._recon_update("reconstruction", step)
            self._maybe_log(STAGE_PREP, "reconstruction", step, {"loss": value})
            self.counters["prep_recon"] = step + 1
            remaining -= 1
            if (step + 1) % cfg.checkpoint_every == 0:
                self.save()
        for step in range(self.counters["prep_clf"], cfg.prep_clf_steps):
            if remaining <= 0:
                self.save()
                return
            value = self._classifier_update(step)
            self._maybe_log(STAGE_PREP, "classifier", step, {"loss": value})
            self.counters["prep_clf"] = step + 1
            remaining -= 1
            if (step + 1) % cfg.checkpoint_every == 0:
                self.save()
        self._freeze_classifier()
        self.save()

    def run_stepback(self, limit: int | None = None) -> None:
        """Second stage, in cycles of plain reconstruction updates followed
        by one dual-flow update. limit caps cycles for this call."""
        cfg = self.train_cfg
        if not self._prep_complete():
            raise ConfigurationError("preparatory stage incomplete, run it first")
        self._freeze_classifier(verify=True)
        self.models.encoder.train()
        self.models.decoder.train()
        start = self.counters["stepback_cycles"]
        end = cfg.stepback_cycles if limit is None else min(cfg.stepback_cycles, start + limit)
        for cycle in range(start, end):
            for i in range(cfg.recon_per_cycle):
                step = cycle * cfg.recon_per_cycle + i
                value = self._recon_update("stepback-m1", step)
                self._maybe_log(STAGE_STEPBACK, "reconstruction", step, {"loss": value})
            fields = self._stepback_update(cycle)
            self._maybe_log(STAGE_STEPBACK, "stepback", cycle, fields)
            self.counters["stepback_cycles"] = cycle + 1
            if (cycle + 1) % cfg.checkpoint_every == 0:
                self.save()
        self.save()

    def run_adversarial(self, limit: int | None = None) -> None:
        """Third stage: several critic updates per generator update.
        limit caps generator updates for this call."""
        cfg = self.train_cfg
        if self.counters["stepback_cycles"] < cfg.stepback_cycles:
            raise ConfigurationError("dual-flow stage incomplete, run it first")
        self._freeze_classifier(verify=True)
        self.models.encoder.train()
        self.models.decoder.train()
        self.models.discriminator.train()
        start = self.counters["gan_steps"]
        end = cfg.gan_steps if limit is None else min(cfg.gan_steps, start + limit)
        for step in range(start, end):
            for d in range(cfg.disc_per_gen):
                disc_step = step * cfg.disc_per_gen + d
                parts = self._disc_update(disc_step)
                self._maybe_log(STAGE_GAN, "discriminator", disc_step, parts)
            gen_parts = self._gen_update(step)
            self._maybe_log(STAGE_GAN, "generator", step, gen_parts)
            self.counters["gan_steps"] = step + 1
            if (step + 1) % cfg.checkpoint_every == 0:
                self.save()
        self.save()

    def run(self, stage: str = "all") -> Path:
        if stage not in STAGES + ("all",):
            raise ConfigurationError(f"unknown stage {stage!r}")
        if stage in ("all", STAGE_PREP):
            self.run_preparatory()
        if stage in ("all", STAGE_STEPBACK):
            self.run_stepback()
        if stage in ("all", STAGE_GAN):
            self.run_adversarial()
        return self.save()
