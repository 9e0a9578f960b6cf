"""Gaussian primitive container and rotation utilities.

A cloud is a flat bag of N anisotropic 3D Gaussians. When it was produced by
the per-pixel prediction head, ``grid_shape`` records the (V, H, W) layout the
flat axis was raveled from and ``distances`` keeps the ray-distance
parameterization the means were derived from; both are None for free-form
clouds (synthetic scenes, fixtures).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
from torch import Tensor


def quat_to_rotmat(quats: Tensor) -> Tensor:
    """Unit-quaternion (w, x, y, z) batch to rotation matrices, (N, 4) -> (N, 3, 3).

    Inputs are normalized here, so any nonzero quaternion is accepted and the
    map stays differentiable through the normalization.
    """
    q = quats / quats.norm(dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    row0 = torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=-1)
    row1 = torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=-1)
    row2 = torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], dim=-1)
    return torch.stack([row0, row1, row2], dim=-2)


def covariance_matrices(scales: Tensor, rotations: Tensor) -> Tensor:
    """World-space covariances R diag(s^2) R^T, (N, 3) x (N, 4) -> (N, 3, 3)."""
    rot = quat_to_rotmat(rotations)
    return rot @ torch.diag_embed(scales ** 2) @ rot.transpose(-1, -2)


@dataclass
class GaussianCloud:
    """Flat tensors describing N Gaussians.

    means      (N, 3) world positions
    scales     (N, 3) per-axis standard deviations, positive
    rotations  (N, 4) quaternions (w, x, y, z), nonzero
    opacities  (N,)   in [0, 1]
    colors     (N, 3) linear or sRGB payload, finite
    """

    means: Tensor
    scales: Tensor
    rotations: Tensor
    opacities: Tensor
    colors: Tensor
    distances: Tensor | None = None
    grid_shape: tuple[int, int, int] | None = None
    from_guidance: bool = False
    validate: bool = True

    def __post_init__(self):
        n = self.means.shape[0]
        shapes = {
            "means": (self.means, (n, 3)),
            "scales": (self.scales, (n, 3)),
            "rotations": (self.rotations, (n, 4)),
            "opacities": (self.opacities, (n,)),
            "colors": (self.colors, (n, 3)),
        }
        for name, (t, want) in shapes.items():
            if tuple(t.shape) != want:
                raise ValueError(f"{name} must have shape {want}, got {tuple(t.shape)}")
        if self.distances is not None and tuple(self.distances.shape) != (n,):
            raise ValueError(f"distances must have shape ({n},), got {tuple(self.distances.shape)}")
        if self.grid_shape is not None:
            v, h, w = self.grid_shape
            if v * h * w != n:
                raise ValueError(f"grid_shape {self.grid_shape} does not ravel to {n} Gaussians")
        if not self.validate:
            return
        if n == 0:
            return
        with torch.no_grad():
            for name in ("means", "scales", "rotations", "opacities", "colors"):
                if not torch.isfinite(getattr(self, name)).all():
                    raise ValueError(f"{name} contains non-finite values")
            if (self.scales <= 0).any():
                raise ValueError("scales must be positive")
            if (self.opacities < 0).any() or (self.opacities > 1).any():
                raise ValueError("opacities must lie in [0, 1]")
            if (self.rotations.norm(dim=-1) < 1e-12).any():
                raise ValueError("rotations must be nonzero quaternions")

    def __len__(self) -> int:
        return self.means.shape[0]

    def covariances(self) -> Tensor:
        return covariance_matrices(self.scales, self.rotations)

    def detach(self) -> "GaussianCloud":
        """Copy with every tensor cut from the autograd graph."""
        kw = {}
        for name in ("means", "scales", "rotations", "opacities", "colors"):
            kw[name] = getattr(self, name).detach()
        if self.distances is not None:
            kw["distances"] = self.distances.detach()
        return replace(self, **kw, validate=False)
