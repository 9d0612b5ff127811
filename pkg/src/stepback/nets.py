"""Network architectures: spectrogram encoder, speaker-conditioned decoder,
speaker classifier, and the adversarial discriminator that reuses the
classifier trunk with an extra realness head.

All modules consume and produce batch-first spectrogram tensors shaped
[batch, frames, bins]. The encoder halves the frame axis once per strided
conv block, the decoder restores it with 1-D sub-pixel upsampling, so frame
counts must be divisible by the total stride.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError, ConfigurationError

LRELU_SLOPE = 0.2


@dataclass(frozen=True)
class ModelConfig:
    n_bins: int = 513
    n_speakers: int = 20
    bank_kernels: int = 8
    bank_width: int = 128
    enc_width: int = 512
    enc_conv_blocks: int = 3
    enc_dense_blocks: int = 4
    enc_rnn_width: int = 512
    dec_width: int = 512
    dec_up_blocks: int = 3
    dec_dense_blocks: int = 4
    dec_rnn_width: int = 256
    clf_channels: tuple[int, ...] = (64, 128, 256, 512, 512)
    clf_proj_channels: int = 32
    dropout: float = 0.1
    clf_dropout: float = 0.5

    def __post_init__(self):
        if self.enc_conv_blocks != self.dec_up_blocks:
            raise ConfigurationError("encoder stride and decoder upsampling must match")
        for name in ("n_bins", "n_speakers", "bank_kernels", "bank_width", "enc_width"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")

    @property
    def frame_multiple(self) -> int:
        """Frame counts fed to the encoder must divide by this."""
        return 2 ** self.enc_conv_blocks

    @property
    def clf_min_frames(self) -> int:
        """Shortest input the strided classifier trunk accepts."""
        return 2 ** len(self.clf_channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clf_channels"] = list(self.clf_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["clf_channels"] = tuple(d["clf_channels"])
        return cls(**d)


def tiny_model_config(n_bins: int = 33, n_speakers: int = 4) -> ModelConfig:
    """Small widths for fast tests and finite-difference gradient checks."""
    return ModelConfig(
        n_bins=n_bins,
        n_speakers=n_speakers,
        bank_kernels=4,
        bank_width=8,
        enc_width=16,
        enc_conv_blocks=3,
        enc_dense_blocks=2,
        enc_rnn_width=16,
        dec_width=16,
        dec_up_blocks=3,
        dec_dense_blocks=2,
        dec_rnn_width=8,
        clf_channels=(16, 16, 16, 16),
        clf_proj_channels=4,
        dropout=0.0,
        clf_dropout=0.0,
    )


def pixel_shuffle_1d(x: torch.Tensor, factor: int) -> torch.Tensor:
    """[B, C*factor, T] -> [B, C, T*factor], interleaving channel groups."""
    b, c, t = x.shape
    if c % factor:
        raise ShapeError(f"channels {c} not divisible by shuffle factor {factor}")
    x = x.view(b, c // factor, factor, t)
    x = x.permute(0, 1, 3, 2).contiguous()
    return x.view(b, c // factor, t * factor)


class DenseBlock(nn.Module):
    """Per-frame linear layer, instance norm, residual add, no activation."""

    def __init__(self, width: int):
        super().__init__()
        self.fc = nn.Linear(width, width)
        self.norm = nn.InstanceNorm1d(width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [B, C, T]
        y = self.fc(x.transpose(1, 2)).transpose(1, 2)
        return self.norm(y) + x


class ConvBank(nn.Module):
    """Parallel 1-D convs with kernel sizes 1..k over the input bins."""

    def __init__(self, in_channels: int, width: int, kernels: int):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv1d(in_channels, width, kernel_size=k) for k in range(1, kernels + 1)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        outs = []
        for k, conv in enumerate(self.convs, start=1):
            padded = F.pad(x, (k // 2, (k - 1) // 2))
            outs.append(conv(padded))
        return F.leaky_relu(torch.cat(outs, dim=1), LRELU_SLOPE)


class DownBlock(nn.Module):
    """Strided conv halving the frame axis: conv k5 s2, LReLU, IN, dropout."""

    def __init__(self, in_channels: int, out_channels: int, dropout: float):
        super().__init__()
        self.conv = nn.Conv1d(in_channels, out_channels, kernel_size=5, stride=2, padding=2)
        self.norm = nn.InstanceNorm1d(out_channels)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.drop(self.norm(F.leaky_relu(self.conv(x), LRELU_SLOPE)))


class Encoder(nn.Module):
    """Maps [B, T, n_bins] to a speaker-mixed content code [B, T/s, width]."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.bank = ConvBank(cfg.n_bins, cfg.bank_width, cfg.bank_kernels)
        channels = [cfg.bank_width * cfg.bank_kernels] + [cfg.enc_width] * cfg.enc_conv_blocks
        self.down = nn.ModuleList(
            DownBlock(channels[i], channels[i + 1], cfg.dropout)
            for i in range(cfg.enc_conv_blocks)
        )
        self.dense = nn.ModuleList(DenseBlock(cfg.enc_width) for _ in range(cfg.enc_dense_blocks))
        self.rnn = nn.GRU(
            cfg.enc_width, cfg.enc_rnn_width, batch_first=True, bidirectional=True
        )
        if cfg.enc_rnn_width != cfg.enc_width:
            self.rnn_align = nn.Linear(cfg.enc_rnn_width, cfg.enc_width)
        else:
            self.rnn_align = nn.Identity()

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        if spec.dim() != 3 or spec.shape[2] != self.cfg.n_bins:
            raise ShapeError(f"encoder expects [B, T, {self.cfg.n_bins}], got {tuple(spec.shape)}")
        if spec.shape[1] % self.cfg.frame_multiple:
            raise ShapeError(
                f"frame count {spec.shape[1]} not divisible by {self.cfg.frame_multiple}"
            )
        x = spec.transpose(1, 2)
        x = self.bank(x)
        for block in self.down:
            x = block(x)
        for block in self.dense:
            x = block(x)
        h = x.transpose(1, 2)
        r, _ = self.rnn(h)
        # sum forward and backward directions
        r = r[:, :, : self.cfg.enc_rnn_width] + r[:, :, self.cfg.enc_rnn_width :]
        return h + self.rnn_align(r)


class UpBlock(nn.Module):
    """Doubles the frame axis: conv to 2x channels, sub-pixel shuffle, conv,
    instance norm, and a residual that repeats each input frame twice."""

    def __init__(self, width: int, dropout: float):
        super().__init__()
        self.expand = nn.Conv1d(width, width * 2, kernel_size=3, padding=1)
        self.refine = nn.Conv1d(width, width, kernel_size=3, padding=1)
        self.norm = nn.InstanceNorm1d(width)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.leaky_relu(self.expand(x), LRELU_SLOPE)
        y = pixel_shuffle_1d(y, 2)
        y = F.leaky_relu(self.refine(y), LRELU_SLOPE)
        y = self.norm(y)
        return self.drop(y) + torch.repeat_interleave(x, 2, dim=2)


class Decoder(nn.Module):
    """Reconstructs [B, T, n_bins] from a content code and a speaker index.

    The speaker enters through one embedding table per block (upsample,
    dense, and recurrent stages each get their own), added to the block
    input and broadcast over frames, so identity is injected at every depth
    rather than once at the bottom.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.dec_width
        if cfg.enc_width != w:
            self.entry = nn.Linear(cfg.enc_width, w)
        else:
            self.entry = nn.Identity()
        self.up_embed = nn.ModuleList(
            nn.Embedding(cfg.n_speakers, w) for _ in range(cfg.dec_up_blocks)
        )
        self.up = nn.ModuleList(UpBlock(w, cfg.dropout) for _ in range(cfg.dec_up_blocks))
        self.dense_embed = nn.ModuleList(
            nn.Embedding(cfg.n_speakers, w) for _ in range(cfg.dec_dense_blocks)
        )
        self.dense = nn.ModuleList(DenseBlock(w) for _ in range(cfg.dec_dense_blocks))
        self.rnn_embed = nn.Embedding(cfg.n_speakers, w)
        self.rnn = nn.GRU(w, cfg.dec_rnn_width, batch_first=True, bidirectional=True)
        self.rnn_align = nn.Linear(cfg.dec_rnn_width, w)
        self.out = nn.Linear(w, cfg.n_bins)

    def forward(self, code: torch.Tensor, speaker: torch.Tensor) -> torch.Tensor:
        if code.dim() != 3:
            raise ShapeError(f"decoder expects [B, T, C] code, got {tuple(code.shape)}")
        if speaker.shape != code.shape[:1]:
            raise ShapeError(f"speaker ids {tuple(speaker.shape)} do not match batch")
        x = self.entry(code).transpose(1, 2)
        for embed, block in zip(self.up_embed, self.up):
            x = x + embed(speaker).unsqueeze(2)
            x = block(x)
        for embed, block in zip(self.dense_embed, self.dense):
            x = x + embed(speaker).unsqueeze(2)
            x = block(x)
        h = x.transpose(1, 2)
        r, _ = self.rnn(h + self.rnn_embed(speaker).unsqueeze(1))
        r = r[:, :, : self.cfg.dec_rnn_width] + r[:, :, self.cfg.dec_rnn_width :]
        h = h + self.rnn_align(r)
        return self.out(h)


def dual_decode(
    decoder: Decoder, code: torch.Tensor, own: torch.Tensor, other: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Decode the same content code twice: back to its own speaker and
    across to a different one. Both flows share every decoder weight."""
    return decoder(code, own), decoder(code, other)


class ClassifierTrunk(nn.Module):
    """Strided 2-D conv stack over [frames, bins] that pools over frames,
    so the summary is frame-count invariant and sees no positions."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        channels = [1] + list(cfg.clf_channels)
        self.blocks = nn.ModuleList(
            nn.Conv2d(channels[i], channels[i + 1], kernel_size=5, stride=2, padding=2)
            for i in range(len(cfg.clf_channels))
        )
        self.drop = nn.Dropout(cfg.clf_dropout)
        self.proj = nn.Conv2d(cfg.clf_channels[-1], cfg.clf_proj_channels, kernel_size=1)

    @property
    def out_features(self) -> int:
        bins = self.cfg.n_bins
        for _ in self.cfg.clf_channels:
            bins = (bins + 1) // 2
        return self.cfg.clf_proj_channels * bins

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        if spec.dim() != 3 or spec.shape[2] != self.cfg.n_bins:
            raise ShapeError(
                f"classifier expects [B, T, {self.cfg.n_bins}], got {tuple(spec.shape)}"
            )
        if spec.shape[1] < self.cfg.clf_min_frames:
            raise ShapeError(
                f"classifier needs at least {self.cfg.clf_min_frames} frames, "
                f"got {spec.shape[1]}"
            )
        x = spec.unsqueeze(1)
        for conv in self.blocks:
            x = self.drop(F.leaky_relu(conv(x), LRELU_SLOPE))
        x = F.leaky_relu(self.proj(x), LRELU_SLOPE)
        # [B, C, T', F'] -> mean over the frame axis only
        x = x.mean(dim=2)
        return x.flatten(1)


class SpeakerClassifier(nn.Module):
    """Frame-pooled speaker logits. Trained once, then frozen as the judge
    the conversion flow is scored against."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.trunk = ClassifierTrunk(cfg)
        self.head = nn.Linear(self.trunk.out_features, cfg.n_speakers)

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(spec))

    def log_probs(self, spec: torch.Tensor) -> torch.Tensor:
        return F.log_softmax(self.forward(spec), dim=1)


class Discriminator(nn.Module):
    """Same trunk as the classifier with two heads: a scalar realness score
    (no sigmoid, Wasserstein-style) and auxiliary speaker logits."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.trunk = ClassifierTrunk(cfg)
        self.real_head = nn.Linear(self.trunk.out_features, 1)
        self.speaker_head = nn.Linear(self.trunk.out_features, cfg.n_speakers)

    def forward(self, spec: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.trunk(spec)
        return self.real_head(h).squeeze(1), self.speaker_head(h)


@dataclass
class ModelSet:
    config: ModelConfig
    encoder: Encoder
    decoder: Decoder
    classifier: SpeakerClassifier
    discriminator: Discriminator

    def modules(self) -> dict[str, nn.Module]:
        return {
            "encoder": self.encoder,
            "decoder": self.decoder,
            "classifier": self.classifier,
            "discriminator": self.discriminator,
        }

    def train(self):
        for m in self.modules().values():
            m.train()

    def eval(self):
        for m in self.modules().values():
            m.eval()


def build_models(cfg: ModelConfig, seed: int = 0) -> ModelSet:
    """Construct all four networks with weights drawn from one seeded stream."""
    torch.manual_seed(seed)
    return ModelSet(
        config=cfg,
        encoder=Encoder(cfg),
        decoder=Decoder(cfg),
        classifier=SpeakerClassifier(cfg),
        discriminator=Discriminator(cfg),
    )


def parameter_checksum(module: nn.Module) -> str:
    """Order-stable digest of every parameter and buffer, bit exact."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
