"""Feed-forward per-pixel Gaussian prediction.

One network call maps a burst of V posed images to V*H*W Gaussians, one per
input pixel. Each view contributes 9 input channels (sRGB image plus a 6
channel ray encoding), patch tokens from every view attend to each other in
a shared transformer, and a linear head emits 12 raw channels per pixel:

    [distance 1 | log-scale 3 | quaternion 4 | opacity 1 | color 3]

The mean of pixel p's Gaussian is o_p + d_p * dir_p, so the network only
chooses how far along the known ray to place mass. Distance uses a sigmoid
squashed to (near, far), scales are exponentials clamped to a configured
band, opacity and color are sigmoids, and the quaternion is normalized with
an identity bias.

The head weight starts at zero with a structured bias, so an untrained model
emits one well-formed Gaussian per pixel (mid-range distance, small isotropic
footprint) instead of noise. There is no per-view positional term by default,
which makes the predictor equivariant to input view order; a learned view
embedding can be switched on to break that deliberately.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .cameras import RayBundle, RayEncodingKind, encode_rays
from .gaussians import GaussianCloud

RAW_CHANNELS = 12  # distance, 3 log-scales, 4 quaternion, opacity, 3 color


@dataclass(frozen=True)
class ModelConfig:
    image_size: tuple[int, int] = (64, 64)
    patch_size: int = 8
    embed_dim: int = 64
    num_blocks: int = 4
    num_heads: int = 4
    mlp_ratio: float = 4.0
    ray_encoding: RayEncodingKind = RayEncodingKind.CLOSEST_POINT
    near: float = 0.5
    far: float = 10.0
    scale_init: float = 0.06
    scale_min: float = 1e-3
    scale_max: float = 0.5
    use_view_embedding: bool = False
    max_views: int = 8

    def __post_init__(self):
        h, w = self.image_size
        if h % self.patch_size or w % self.patch_size:
            raise ValueError(f"image size {self.image_size} not divisible by patch {self.patch_size}")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.num_blocks < 0:
            raise ValueError("num_blocks must be non-negative")
        if not 0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got ({self.near}, {self.far})")
        if not 0 < self.scale_min <= self.scale_init <= self.scale_max:
            raise ValueError("need 0 < scale_min <= scale_init <= scale_max")
        # kept as a plain string in YAML round trips
        object.__setattr__(self, "ray_encoding", RayEncodingKind(self.ray_encoding))

    @property
    def token_grid(self) -> tuple[int, int]:
        return (self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size)


class _Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: Tensor) -> Tensor:
        y = self.norm1(x)
        x = x + self.attn(y, y, y, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class GaussianRegressor(nn.Module):
    """Burst of posed images -> one Gaussian per input pixel."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        p = config.patch_size
        self.patch_embed = nn.Conv2d(9, config.embed_dim, kernel_size=p, stride=p)
        hp, wp = config.token_grid
        self.pos_embed = nn.Parameter(torch.randn(1, hp * wp, config.embed_dim) * 0.02)
        if config.use_view_embedding:
            self.view_embed = nn.Parameter(torch.randn(config.max_views, 1, config.embed_dim) * 0.02)
        else:
            self.view_embed = None
        self.blocks = nn.ModuleList(
            _Block(config.embed_dim, config.num_heads, config.mlp_ratio)
            for _ in range(config.num_blocks)
        )
        self.norm = nn.LayerNorm(config.embed_dim)
        self.head = nn.Linear(config.embed_dim, p * p * RAW_CHANNELS)
        self._init_head()

    def _init_head(self):
        # Zero weight: the untrained output is exactly the structured bias.
        nn.init.zeros_(self.head.weight)
        p = self.config.patch_size
        bias = torch.zeros(p * p, RAW_CHANNELS)
        bias[:, 1:4] = math.log(self.config.scale_init)
        bias[:, 4] = 1.0  # identity quaternion
        with torch.no_grad():
            self.head.bias.copy_(bias.reshape(-1))

    def _check_inputs(self, images: Tensor, rays: list[RayBundle]):
        h, w = self.config.image_size
        if images.ndim != 4 or images.shape[1:] != (h, w, 3):
            raise ValueError(f"images must be (V, {h}, {w}, 3), got {tuple(images.shape)}")
        if len(rays) != images.shape[0]:
            raise ValueError(f"got {images.shape[0]} images but {len(rays)} ray bundles")
        if self.view_embed is not None and images.shape[0] > self.config.max_views:
            raise ValueError(f"view embedding supports at most {self.config.max_views} views")

    def forward(self, images: Tensor, rays: list[RayBundle]) -> GaussianCloud:
        self._check_inputs(images, rays)
        cfg = self.config
        num_views = images.shape[0]
        h, w = cfg.image_size
        p = cfg.patch_size
        hp, wp = cfg.token_grid
        dtype = self.head.bias.dtype

        origins = torch.stack([r.origins for r in rays]).to(dtype)
        dirs = torch.stack([r.directions for r in rays]).to(dtype)
        enc = torch.stack([encode_rays(r, cfg.ray_encoding).channels for r in rays]).to(dtype)

        x = torch.cat([images.to(dtype), enc], dim=-1)          # (V, H, W, 9)
        x = self.patch_embed(x.permute(0, 3, 1, 2))             # (V, E, hp, wp)
        x = x.flatten(2).transpose(1, 2) + self.pos_embed        # (V, T, E)
        if self.view_embed is not None:
            x = x + self.view_embed[:num_views]
        x = x.reshape(1, num_views * hp * wp, cfg.embed_dim)
        for block in self.blocks:
            x = block(x)
        raw = self.head(self.norm(x))                            # (1, V*T, p*p*12)

        raw = raw.reshape(num_views, hp, wp, p, p, RAW_CHANNELS)
        raw = raw.permute(0, 1, 3, 2, 4, 5).reshape(num_views, h, w, RAW_CHANNELS)

        dist = cfg.near + torch.sigmoid(raw[..., 0]) * (cfg.far - cfg.near)
        log_band = (math.log(cfg.scale_min), math.log(cfg.scale_max))
        scales = torch.exp(raw[..., 1:4].clamp(*log_band))
        quats = raw[..., 4:8]
        quats = quats / quats.norm(dim=-1, keepdim=True).clamp_min(1e-8)
        opacity = torch.sigmoid(raw[..., 8])
        color = torch.sigmoid(raw[..., 9:12])
        means = origins + dist.unsqueeze(-1) * dirs

        n = num_views * h * w
        return GaussianCloud(
            means=means.reshape(n, 3),
            scales=scales.reshape(n, 3),
            rotations=quats.reshape(n, 4),
            opacities=opacity.reshape(n),
            colors=color.reshape(n, 3),
            distances=dist.reshape(n),
            grid_shape=(num_views, h, w),
            validate=False,
        )

    def predict_guidance(self, images: Tensor, rays: list[RayBundle]) -> GaussianCloud:
        """Run the clean branch: no graph, output tagged as guidance."""
        with torch.no_grad():
            cloud = self.forward(images, rays)
        return dataclasses.replace(cloud, from_guidance=True)
