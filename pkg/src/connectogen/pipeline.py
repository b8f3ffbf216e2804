"""Composite model wiring the feature extractor, latent autoencoder, conditional
denoiser, conditioning encoder, and graph classifier behind one config."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .diffusion import (
    LATENT_HEIGHT,
    LATENT_WIDTH,
    ConditionalDenoiser,
    ConditioningEncoder,
    DenoiserConfig,
    LatentEncoder,
    NetworkDecoder,
)
from .fenet import FeatureExtractor, FenetConfig
from .gcn import GraphClassifier

PARAMETER_GROUPS = ("fenet", "encoder", "decoder", "denoiser", "conditioner", "classifier")


@dataclass(frozen=True)
class PipelineConfig:
    fenet: FenetConfig = field(default_factory=FenetConfig)
    latent_channels: int = 4
    ae_channels: int = 16
    denoiser_channels: int = 16
    time_dim: int = 32
    attn_dim: int = 32
    context_dim: int = 64
    gcn_hidden: int = 32

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.latent_channels, LATENT_HEIGHT, LATENT_WIDTH)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fenet"] = asdict(self.fenet)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        fenet = d.pop("fenet", {})
        fenet = {k: tuple(v) if isinstance(v, list) else v for k, v in fenet.items()}
        return cls(fenet=FenetConfig(**fenet), **d)


def tiny_pipeline_config() -> PipelineConfig:
    """Small CPU-friendly configuration used by fast tests and sanity runs."""
    return PipelineConfig(
        fenet=FenetConfig(
            stem_channels=4,
            stem_stride=2,
            channels_per_block=(8, 90),
            block_strides=(2, 2),
            pool_bins=(2, 2, 2),
        ),
        latent_channels=2,
        ae_channels=8,
        denoiser_channels=8,
        time_dim=16,
        attn_dim=16,
        context_dim=16,
        gcn_hidden=16,
    )


class PipelineModel(nn.Module):
    """All learnable components of the volume-to-network pipeline."""

    def __init__(self, config: PipelineConfig | None = None):
        super().__init__()
        self.config = config or PipelineConfig()
        cfg = self.config
        self.fenet = FeatureExtractor(cfg.fenet)
        self.encoder = LatentEncoder(cfg.latent_channels, cfg.ae_channels)
        self.decoder = NetworkDecoder(cfg.latent_channels, cfg.ae_channels)
        self.denoiser = ConditionalDenoiser(
            cfg.latent_channels,
            DenoiserConfig(
                channels=cfg.denoiser_channels,
                time_dim=cfg.time_dim,
                attn_dim=cfg.attn_dim,
                context_dim=cfg.context_dim,
            ),
        )
        self.conditioner = ConditioningEncoder(cfg.context_dim)
        self.classifier = GraphClassifier(cfg.gcn_hidden)

    def reconstruct(self, volumes: torch.Tensor) -> torch.Tensor:
        """Volume batch -> reconstructed network batch (B, 90, 90)."""
        feats = self.fenet(volumes)
        z0 = self.encoder(feats.unsqueeze(1))
        return self.decoder(z0)

    def parameter_group(self, name: str) -> list[tuple[str, nn.Parameter]]:
        if name not in PARAMETER_GROUPS:
            raise KeyError(f"unknown parameter group {name!r}")
        module = getattr(self, name)
        return [(f"{name}.{pname}", p) for pname, p in module.named_parameters()]

    def all_named_parameters(self) -> list[tuple[str, nn.Parameter]]:
        return [pair for g in PARAMETER_GROUPS for pair in self.parameter_group(g)]


def build_pipeline(config: PipelineConfig | None = None, seed: int = 0) -> PipelineModel:
    """Construct a pipeline with reproducible parameter initialization."""
    torch.manual_seed(seed)
    return PipelineModel(config)
