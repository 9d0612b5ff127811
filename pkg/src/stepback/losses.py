"""Training objectives.

The disentanglement objective rewards the model for keeping the two decoder
flows apart: the same-speaker flow may drift away from perfect
reconstruction (its distance enters with a negative weight) while the
cross-speaker flow must land on the requested identity according to a
frozen judge. The adversarial stage uses Wasserstein critics with a
gradient penalty plus an auxiliary speaker head on both sides.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ShapeError

GP_WEIGHT = 10.0
AUX_WEIGHT = 1.0


@dataclass
class LossParts:
    """A differentiable total plus detached floats for logging."""

    total: torch.Tensor
    parts: dict[str, float] = field(default_factory=dict)


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over every element."""
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


def classifier_nll(log_probs: torch.Tensor, speaker_ids: torch.Tensor) -> torch.Tensor:
    """Negative log likelihood of the given identities."""
    if log_probs.dim() != 2 or speaker_ids.dim() != 1:
        raise ShapeError("expected [B, n_speakers] log probs and [B] ids")
    return F.nll_loss(log_probs, speaker_ids)


def conversion_identity_loss(
    classifier, converted: torch.Tensor, target_ids: torch.Tensor
) -> torch.Tensor:
    """How far the converted output is from the target identity, as judged
    by a (frozen) classifier."""
    return classifier_nll(classifier.log_probs(converted), target_ids)


def stepback_loss(
    same_flow_distance: torch.Tensor,
    identity_nll: torch.Tensor,
    lambda_weight: float,
) -> torch.Tensor:
    """Combined objective for the dual-flow stage.

    Kept as a single expression so the value is reproducible bit for bit:
    -lambda_weight * same_flow_distance + identity_nll, in that order.
    """
    return -lambda_weight * same_flow_distance + identity_nll


def gradient_penalty(
    realness_fn,
    real: torch.Tensor,
    fake: torch.Tensor,
    eps: torch.Tensor | None = None,
) -> torch.Tensor:
    """Two-sided penalty pushing critic gradient norms to 1 along random
    per-sample interpolates between real and generated batches."""
    if real.shape != fake.shape:
        raise ShapeError(f"shape mismatch {tuple(real.shape)} vs {tuple(fake.shape)}")
    b = real.shape[0]
    if eps is None:
        eps = torch.rand(b, *([1] * (real.dim() - 1)), dtype=real.dtype, device=real.device)
    mixed = (eps * real + (1.0 - eps) * fake).requires_grad_(True)
    score = realness_fn(mixed)
    (grad,) = torch.autograd.grad(
        outputs=score.sum(), inputs=mixed, create_graph=True, retain_graph=True
    )
    norms = grad.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def discriminator_loss(
    discriminator,
    real: torch.Tensor,
    fake: torch.Tensor,
    real_speakers: torch.Tensor,
    gp_weight: float = GP_WEIGHT,
    aux_weight: float = AUX_WEIGHT,
    eps: torch.Tensor | None = None,
) -> LossParts:
    """Critic update: score generated above real (to be minimized), penalize
    gradient norms, and classify real samples with the auxiliary head."""
    fake = fake.detach()
    real_score, real_logits = discriminator(real)
    fake_score, _ = discriminator(fake)
    gap = fake_score.mean() - real_score.mean()
    gp = gradient_penalty(lambda x: discriminator(x)[0], real, fake, eps=eps)
    aux = classifier_nll(F.log_softmax(real_logits, dim=1), real_speakers)
    total = gap + gp_weight * gp + aux_weight * aux
    return LossParts(
        total=total,
        parts={
            "wasserstein_gap": float(gap.detach()),
            "gradient_penalty": float(gp.detach()),
            "aux_speaker_nll": float(aux.detach()),
            "total": float(total.detach()),
        },
    )


def generator_adversarial_loss(
    discriminator,
    fake: torch.Tensor,
    target_speakers: torch.Tensor,
    aux_weight: float = AUX_WEIGHT,
) -> LossParts:
    """Generator update: raise the critic's score of generated batches and
    make the auxiliary head attribute them to the requested speakers."""
    fake_score, fake_logits = discriminator(fake)
    adv = -fake_score.mean()
    aux = classifier_nll(F.log_softmax(fake_logits, dim=1), target_speakers)
    total = adv + aux_weight * aux
    return LossParts(
        total=total,
        parts={
            "adversarial": float(adv.detach()),
            "aux_speaker_nll": float(aux.detach()),
            "total": float(total.detach()),
        },
    )
