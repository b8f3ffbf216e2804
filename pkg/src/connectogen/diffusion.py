"""Conditional latent diffusion over regional feature matrices.

The feature matrix is treated as a 1x90x80 image: a strided convolutional
encoder compresses it to a (C, 45, 40) latent, a time-conditional U-Net with
cross-attention over context tokens predicts the forward-process noise, and the
decoder maps latents back to a valid 90x90 network (sigmoid, symmetrize, zero
diagonal).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import N_REGIONS, ConnectivityMatrix
from .errors import DimensionError, StateError, ValidationError
from .fenet import FEATURE_DIM

LATENT_HEIGHT = 45
LATENT_WIDTH = 40
N_CLASSES = 3


@dataclass
class NoiseSchedule:
    """Per-step variances beta_t with derived alpha_t and their running product."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValidationError("beta must be a non-empty 1-D array")
        if beta[0] <= 0 or beta[-1] >= 1 or np.any(np.diff(beta) < 0):
            raise ValidationError("need 0 < beta_1 <= ... <= beta_T < 1")
        self.beta = beta
        self.alpha = 1.0 - beta
        self.alpha_bar = np.cumprod(self.alpha)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    @classmethod
    def linear(cls, T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        if T < 1:
            raise ValidationError("T must be >= 1")
        return cls(np.linspace(beta_start, beta_end, T))

    @classmethod
    def linear_scaled(cls, T: int, reference_T: int = 1000) -> "NoiseSchedule":
        """Linear schedule whose total noise budget matches the reference chain.

        The default 1e-4..0.02 endpoints drive alpha_bar_T to ~0 only at
        T = 1000; for shorter chains the endpoints are scaled by reference_T/T
        (capped below 1) so sampling can still start from pure noise.
        """
        scale = reference_T / T
        return cls.linear(T, min(1e-4 * scale, 0.05), min(0.02 * scale, 0.999))


@dataclass
class LatentTensor:
    """Channel x height x width latent grid."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DimensionError(f"latent must be 3-D, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("latent contains non-finite values")


@dataclass
class ConditioningEmbedding:
    """Context tokens, shape (M, d_tau)."""

    tokens: np.ndarray

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        if self.tokens.ndim != 2:
            raise DimensionError(f"tokens must be 2-D, got {self.tokens.shape}")
        if not np.all(np.isfinite(self.tokens)):
            raise ValidationError("tokens contain non-finite values")


def q_sample(z0, t: int, eps, schedule: NoiseSchedule):
    """Forward process: sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps.

    Works on numpy arrays and torch tensors alike.
    """
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t must be in [1, {schedule.T}], got {t}")
    if tuple(eps.shape) != tuple(z0.shape):
        raise DimensionError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    abar = float(schedule.alpha_bar[t - 1])
    return math.sqrt(abar) * z0 + math.sqrt(1.0 - abar) * eps


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embeddings of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float64) / half
    ).to(t.device)
    args = t.double()[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class CrossAttention(nn.Module):
    """Single-head attention of a flattened grid over context tokens.

    Q = grid @ W_Q.T, K = ctx @ W_K.T, V = ctx @ W_V.T; the output row for each
    grid position is softmax(Q K^T / sqrt(d)) V, a convex combination of the
    projected context tokens.
    """

    def __init__(self, query_dim: int, context_dim: int, inner_dim: int):
        super().__init__()
        self.w_q = nn.Linear(query_dim, inner_dim, bias=False)
        self.w_k = nn.Linear(context_dim, inner_dim, bias=False)
        self.w_v = nn.Linear(context_dim, inner_dim, bias=False)
        self.scale = 1.0 / math.sqrt(inner_dim)

    def attention_weights(self, query_grid: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        if query_grid.shape[-1] != self.w_q.in_features:
            raise DimensionError(
                f"query dim {query_grid.shape[-1]} incompatible with W_Q "
                f"({self.w_q.in_features} -> {self.w_q.out_features})"
            )
        if context.shape[-1] != self.w_k.in_features:
            raise DimensionError(
                f"context dim {context.shape[-1]} incompatible with W_K/W_V "
                f"({self.w_k.in_features} -> {self.w_k.out_features})"
            )
        q = self.w_q(query_grid)
        k = self.w_k(context)
        logits = q @ k.transpose(-2, -1) * self.scale
        return torch.softmax(logits, dim=-1)

    def forward(self, query_grid: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        weights = self.attention_weights(query_grid, context)
        return weights @ self.w_v(context)


def cross_attention(
    query_grid: np.ndarray,
    context: ConditioningEmbedding | np.ndarray,
    proj: CrossAttention,
) -> np.ndarray:
    """Apply a cross-attention site to an unbatched (N, d_eps) grid; returns (N, d)."""
    tokens = context.tokens if isinstance(context, ConditioningEmbedding) else np.asarray(context)
    dtype = next(proj.parameters()).dtype
    q = torch.as_tensor(np.asarray(query_grid), dtype=dtype)
    c = torch.as_tensor(tokens, dtype=dtype)
    with torch.no_grad():
        out = proj(q.unsqueeze(0), c.unsqueeze(0))
    return out[0].numpy()


class ConditioningEncoder(nn.Module):
    """Projects a class label (and optional classifier logits) to context tokens.

    Token 0 is a learned per-class embedding; token 1 is a linear projection of
    classifier logits and is zeroed when no logits are supplied.
    """

    def __init__(self, context_dim: int = 64, n_classes: int = N_CLASSES):
        super().__init__()
        self.context_dim = context_dim
        self.class_embed = nn.Embedding(n_classes, context_dim)
        self.logit_proj = nn.Linear(n_classes, context_dim)

    def forward(self, labels: torch.Tensor, logits: torch.Tensor | None = None) -> torch.Tensor:
        tok_class = self.class_embed(labels)
        if logits is None:
            tok_logit = torch.zeros_like(tok_class)
        else:
            tok_logit = self.logit_proj(logits)
        return torch.stack([tok_class, tok_logit], dim=1)  # (B, 2, d_tau)


class ResidualBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(1, in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_channels)
        self.norm2 = nn.GroupNorm(1, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        if in_channels != out_channels:
            self.skip = nn.Conv2d(in_channels, out_channels, 1)
        else:
            self.skip = nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.time_proj(torch.nn.functional.silu(temb))[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttentionBlock(nn.Module):
    """Residual cross-attention over the flattened spatial grid."""

    def __init__(self, channels: int, context_dim: int, inner_dim: int):
        super().__init__()
        self.norm = nn.GroupNorm(1, channels)
        self.attention = CrossAttention(channels, context_dim, inner_dim)
        self.proj_out = nn.Linear(inner_dim, channels)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        grid = self.norm(x).flatten(2).transpose(1, 2)  # (B, N, C)
        attended = self.proj_out(self.attention(grid, context))
        return x + attended.transpose(1, 2).reshape(b, c, h, w)


@dataclass(frozen=True)
class DenoiserConfig:
    channels: int = 16
    time_dim: int = 32
    attn_dim: int = 32
    context_dim: int = 64


class ConditionalDenoiser(nn.Module):
    """Time-conditional U-Net noise predictor with cross-attention conditioning.

    One downsampling level with a skip connection; sinusoidal timestep
    embeddings are added to intermediate features in every residual block, and
    context tokens enter through cross-attention at the bottleneck and again on
    the upsampling path.

    The network itself predicts the denoised latent as a residual,
    x0_hat = z_t + net(z_t, t, ctx); when a schedule is attached the forward
    pass converts that to the equivalent noise prediction
    (z_t - sqrt(abar_t) x0_hat) / sqrt(1 - abar_t), which is what training and
    sampling consume. Without a schedule attached the raw network output is
    returned directly as the noise prediction.
    """

    def __init__(self, latent_channels: int, config: DenoiserConfig | None = None):
        super().__init__()
        self.config = config or DenoiserConfig()
        cfg = self.config
        c, tdim = cfg.channels, cfg.time_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim)
        )
        self.conv_in = nn.Conv2d(latent_channels, c, 3, padding=1)
        self.res_down = ResidualBlock(c, c, tdim)
        self.downsample = nn.Conv2d(c, c, 3, stride=2, padding=1)
        self.res_mid1 = ResidualBlock(c, 2 * c, tdim)
        self.cross_attn = CrossAttentionBlock(2 * c, cfg.context_dim, cfg.attn_dim)
        self.res_mid2 = ResidualBlock(2 * c, 2 * c, tdim)
        self.up_conv = nn.Conv2d(2 * c, c, 3, padding=1)
        self.res_up = ResidualBlock(2 * c, c, tdim)
        self.cross_attn_up = CrossAttentionBlock(c, cfg.context_dim, cfg.attn_dim)
        self.out_norm = nn.GroupNorm(1, c)
        self.conv_out = nn.Conv2d(c, latent_channels, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)
        self.register_buffer("alpha_bar", torch.zeros(0, dtype=torch.float64))

    def set_schedule(self, schedule) -> None:
        """Attach the noise schedule used for the x0-residual parameterization."""
        self.alpha_bar = torch.as_tensor(schedule.alpha_bar, dtype=torch.float64)

    def _net(self, z_t: torch.Tensor, t: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        dtype = z_t.dtype
        temb = self.time_mlp(timestep_embedding(t, self.config.time_dim).to(dtype))
        h0 = self.conv_in(z_t)
        skip = self.res_down(h0, temb)
        h = self.downsample(skip)
        h = self.res_mid1(h, temb)
        h = self.cross_attn(h, context)
        h = self.res_mid2(h, temb)
        h = nn.functional.interpolate(h, size=skip.shape[-2:], mode="nearest")
        h = self.up_conv(h)
        h = self.res_up(torch.cat([h, skip], dim=1), temb)
        h = self.cross_attn_up(h, context)
        return self.conv_out(nn.functional.silu(self.out_norm(h)))

    def forward(self, z_t: torch.Tensor, t: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        if z_t.ndim != 4:
            raise DimensionError(f"latent batch must be 4-D, got {tuple(z_t.shape)}")
        out = self._net(z_t, t, context)
        if self.alpha_bar.numel() == 0:
            return out
        abar = self.alpha_bar.to(z_t.dtype)[t - 1].reshape((-1,) + (1,) * (z_t.ndim - 1))
        x0_hat = z_t + out
        return (z_t - abar.sqrt() * x0_hat) / (1.0 - abar).sqrt()


class LatentEncoder(nn.Module):
    """(B, 1, 90, 80) feature image -> (B, C, 45, 40) latent.

    The output is standardized per sample (affine-free), which pins the latent
    scale at the unit level of the forward-process noise; otherwise joint
    training shrinks the latent until denoising is trivial and sampling
    collapses to a constant network.
    """

    def __init__(self, latent_channels: int = 4, hidden_channels: int = 16):
        super().__init__()
        self.conv1 = nn.Conv2d(1, hidden_channels, 3, padding=1)
        self.norm1 = nn.GroupNorm(1, hidden_channels)
        self.conv2 = nn.Conv2d(hidden_channels, hidden_channels, 3, stride=2, padding=1)
        self.norm2 = nn.GroupNorm(1, hidden_channels)
        self.conv3 = nn.Conv2d(hidden_channels, latent_channels, 3, padding=1)
        self.out_norm = nn.GroupNorm(1, latent_channels, affine=False)

    def forward(self, p: torch.Tensor) -> torch.Tensor:
        if p.ndim != 4 or p.shape[1] != 1 or p.shape[2:] != (N_REGIONS, FEATURE_DIM):
            raise DimensionError(
                f"expected (B, 1, {N_REGIONS}, {FEATURE_DIM}), got {tuple(p.shape)}"
            )
        h = torch.nn.functional.silu(self.norm1(self.conv1(p)))
        h = torch.nn.functional.silu(self.norm2(self.conv2(h)))
        return self.out_norm(self.conv3(h))


class NetworkDecoder(nn.Module):
    """(B, C, 45, 40) latent -> (B, 90, 90) valid networks.

    The raw 90x90 head output is squashed through a sigmoid, symmetrized as
    (R + R.T)/2, and the diagonal is zeroed, so every decoded network satisfies
    the connectivity invariants by construction.
    """

    def __init__(self, latent_channels: int = 4, hidden_channels: int = 16):
        super().__init__()
        self.conv1 = nn.Conv2d(latent_channels, hidden_channels, 3, padding=1)
        self.norm1 = nn.GroupNorm(1, hidden_channels)
        self.conv2 = nn.Conv2d(hidden_channels, hidden_channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(1, hidden_channels)
        self.conv3 = nn.Conv2d(hidden_channels, 1, 3, padding=1)
        self.row_head = nn.Linear(FEATURE_DIM, N_REGIONS)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = torch.nn.functional.silu(self.norm1(self.conv1(z)))
        h = nn.functional.interpolate(h, scale_factor=2, mode="nearest")
        h = torch.nn.functional.silu(self.norm2(self.conv2(h)))
        raw = self.row_head(self.conv3(h).squeeze(1))  # (B, 90, 90)
        squashed = torch.sigmoid(raw)
        sym = (squashed + squashed.transpose(-2, -1)) / 2.0
        mask = 1.0 - torch.eye(N_REGIONS, dtype=z.dtype, device=z.device)
        return sym * mask


def encode(p: "FeatureMatrix | np.ndarray", encoder: LatentEncoder) -> LatentTensor:
    """Encode a single feature matrix to its latent."""
    from .fenet import FeatureMatrix

    values = p.features if isinstance(p, FeatureMatrix) else np.asarray(p)
    dtype = next(encoder.parameters()).dtype
    x = torch.as_tensor(values, dtype=dtype).reshape(1, 1, N_REGIONS, FEATURE_DIM)
    with torch.no_grad():
        z = encoder(x)
    return LatentTensor(z[0].numpy())


def decode(z: LatentTensor | np.ndarray, decoder: NetworkDecoder) -> ConnectivityMatrix:
    """Decode a single latent to a valid connectivity matrix."""
    values = z.values if isinstance(z, LatentTensor) else np.asarray(z)
    dtype = next(decoder.parameters()).dtype
    x = torch.as_tensor(values, dtype=dtype).unsqueeze(0)
    with torch.no_grad():
        net = decoder(x)
    return ConnectivityMatrix(net[0].double().numpy())


def ldm_loss(
    z0: torch.Tensor,
    context: torch.Tensor,
    schedule: NoiseSchedule,
    denoiser,
    generator: torch.Generator,
) -> torch.Tensor:
    """Noise-prediction objective: E ||eps - eps_hat(z_t, t, context)||^2.

    Draws t uniform on {1..T} and eps ~ N(0, I) from the supplied generator and
    returns the per-element mean squared error, differentiable with respect to
    the denoiser and conditioning parameters.
    """
    b = z0.shape[0]
    t = torch.randint(1, schedule.T + 1, (b,), generator=generator)
    eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    abar = torch.as_tensor(schedule.alpha_bar, dtype=z0.dtype)[t - 1]
    shape = (b,) + (1,) * (z0.ndim - 1)
    z_t = abar.sqrt().reshape(shape) * z0 + (1.0 - abar).sqrt().reshape(shape) * eps
    pred = denoiser(z_t, t, context)
    return ((eps - pred) ** 2).mean()


def ddpm_sample(
    denoiser,
    decoder: NetworkDecoder,
    schedule: NoiseSchedule,
    context: torch.Tensor,
    generator: torch.Generator,
    latent_shape: tuple[int, int, int],
    return_latent: bool = False,
):
    """Ancestral sampling from pure noise down to a decoded network.

    z_T ~ N(0, I); for t = T..1,
        z_{t-1} = (z_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t * xi
    with sigma_t^2 = beta_t and xi = 0 at t = 1. The final latent is decoded in
    a single pass.
    """
    if schedule is None:
        raise StateError("sampling requires a configured noise schedule")
    dtype = next(decoder.parameters()).dtype
    z = torch.randn((1, *latent_shape), generator=generator, dtype=dtype)
    with torch.no_grad():
        for t in range(schedule.T, 0, -1):
            t_batch = torch.full((1,), t, dtype=torch.long)
            eps_hat = denoiser(z, t_batch, context)
            alpha_t = float(schedule.alpha[t - 1])
            abar_t = float(schedule.alpha_bar[t - 1])
            beta_t = float(schedule.beta[t - 1])
            z = (z - (beta_t / math.sqrt(1.0 - abar_t)) * eps_hat) / math.sqrt(alpha_t)
            if t > 1:
                xi = torch.randn(z.shape, generator=generator, dtype=dtype)
                z = z + math.sqrt(beta_t) * xi
        net = decoder(z)
    matrix = ConnectivityMatrix(net[0].double().numpy())
    if return_latent:
        return matrix, LatentTensor(z[0].double().numpy())
    return matrix
