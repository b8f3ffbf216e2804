"""Volumetric feature extractor: DTI volume -> 90x80 regional feature matrix.

A stem convolution plus strided depthwise separable blocks reduce the
(109, 91, 91) grid; the final block emits one channel per region, whose pooled
spatial bins are projected to an 80-dim feature vector by a head shared across
channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import N_REGIONS, DtiVolume, VOLUME_SHAPE
from .errors import DimensionError, ValidationError

FEATURE_DIM = 80


@dataclass
class FeatureMatrix:
    """Per-region structural features, shape (90, 80)."""

    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.shape != (N_REGIONS, FEATURE_DIM):
            raise DimensionError(
                f"feature matrix must be ({N_REGIONS}, {FEATURE_DIM}), got {self.features.shape}"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("feature matrix contains non-finite values")


@dataclass(frozen=True)
class FenetConfig:
    stem_channels: int = 8
    stem_stride: int = 2
    channels_per_block: tuple[int, ...] = (16, 32, 90)
    block_strides: tuple[int, ...] = (2, 2, 2)
    pool_bins: tuple[int, int, int] = (2, 2, 2)
    feature_dim: int = FEATURE_DIM
    final_channels: int = N_REGIONS

    def __post_init__(self):
        if self.final_channels != N_REGIONS:
            raise ValidationError("final_channels must equal the region count (90)")
        if self.num_ds_blocks < 1:
            raise ValidationError("need at least one depthwise separable block")
        if self.channels_per_block[-1] != self.final_channels:
            raise ValidationError("last block must emit final_channels channels")
        if len(self.block_strides) != self.num_ds_blocks:
            raise ValidationError("block_strides length must match channels_per_block")

    @property
    def num_ds_blocks(self) -> int:
        return len(self.channels_per_block)


class DepthwiseSeparableBlock(nn.Module):
    """Depth-wise spatial conv then pointwise 1x1x1 channel mixing.

    Each convolution is followed by instance normalization and a ReLU; spatial
    downsampling happens in the depth-wise conv when stride > 1.
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.in_channels = in_channels
        self.depthwise = nn.Conv3d(
            in_channels, in_channels, kernel_size=3, stride=stride,
            padding=1, groups=in_channels,
        )
        self.depthwise_norm = nn.InstanceNorm3d(in_channels, affine=True)
        self.pointwise = nn.Conv3d(in_channels, out_channels, kernel_size=1)
        self.pointwise_norm = nn.InstanceNorm3d(out_channels, affine=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_channels:
            raise DimensionError(
                f"block expects {self.in_channels} channels, got {x.shape[1]}"
            )
        h = torch.relu(self.depthwise_norm(self.depthwise(x)))
        return torch.relu(self.pointwise_norm(self.pointwise(h)))


class FeatureExtractor(nn.Module):
    """Maps a (B, 1, 109, 91, 91) volume batch to (B, 90, 80) feature matrices."""

    def __init__(self, config: FenetConfig | None = None):
        super().__init__()
        self.config = config or FenetConfig()
        cfg = self.config
        self.stem = nn.Conv3d(1, cfg.stem_channels, kernel_size=3,
                              stride=cfg.stem_stride, padding=1)
        self.stem_norm = nn.InstanceNorm3d(cfg.stem_channels, affine=True)
        blocks = []
        in_ch = cfg.stem_channels
        for out_ch, stride in zip(cfg.channels_per_block, cfg.block_strides):
            blocks.append(DepthwiseSeparableBlock(in_ch, out_ch, stride=stride))
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(int(np.prod(cfg.pool_bins)), cfg.feature_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5 or x.shape[1] != 1 or x.shape[2:] != VOLUME_SHAPE:
            raise DimensionError(
                f"expected (B, 1, {', '.join(map(str, VOLUME_SHAPE))}), got {tuple(x.shape)}"
            )
        h = torch.relu(self.stem_norm(self.stem(x)))
        for block in self.blocks:
            h = block(h)
        h = nn.functional.adaptive_avg_pool3d(h, self.config.pool_bins)
        h = h.flatten(start_dim=2)  # (B, 90, prod(pool_bins))
        return self.head(h)


def fenet_forward(volume: DtiVolume, model: FeatureExtractor) -> FeatureMatrix:
    """Inference-mode forward pass for a single volume."""
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(volume.voxels, dtype=dtype).unsqueeze(0).unsqueeze(0)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(x)
    finally:
        model.train(was_training)
    return FeatureMatrix(out[0].numpy())


def separable_parameter_count(block: DepthwiseSeparableBlock) -> int:
    return sum(p.numel() for p in block.parameters())


def dense_equivalent_parameter_count(
    in_channels: int, out_channels: int, kernel_size: int = 3
) -> int:
    """Parameters of the dense 3D conv the separable block replaces."""
    return in_channels * out_channels * kernel_size**3 + out_channels


def volumes_to_batch(volumes: list[DtiVolume], dtype=torch.float32) -> torch.Tensor:
    stack = np.stack([v.voxels for v in volumes])
    return torch.as_tensor(stack, dtype=dtype).unsqueeze(1)
