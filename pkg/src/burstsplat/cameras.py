"""Pinhole camera geometry: per-pixel rays, ray encodings, center unprojection.

Conventions (documented because depth supervision depends on them):
  * pixel centers sit at (u + 0.5, v + 0.5) with u the column and v the row;
  * ray directions are normalized to unit length, so a per-pixel depth is a
    Euclidean distance along the ray;
  * poses are stored camera-to-world; world-to-camera is derived on demand.

All functions are pure and hold no mutable state, so they are safe to call
from multiple threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from torch import Tensor


class InvalidCameraError(ValueError):
    """Raised for camera parameters that violate the pinhole model."""


class InvalidDepthError(ValueError):
    """Raised when an unprojection receives non-positive depths."""


class RayEncodingKind(str, Enum):
    PLUCKER = "plucker"
    CLOSEST_POINT = "closest_point"


def _as_f64(x) -> Tensor:
    if isinstance(x, Tensor):
        return x.to(torch.float64)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class CameraView:
    """One pinhole view: intrinsics, camera-to-world pose, image size.

    ``intrinsics`` is the usual upper-triangular 3x3 (fx, fy on the diagonal,
    principal point in the last column). ``rotation``/``translation`` map
    camera coordinates to world coordinates (x right, y down, z forward).
    """

    intrinsics: Tensor      # (3, 3) float64
    rotation: Tensor        # (3, 3) float64, camera-to-world
    translation: Tensor     # (3,)   float64, camera center in world units
    width: int
    height: int
    validate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "intrinsics", _as_f64(self.intrinsics).reshape(3, 3))
        object.__setattr__(self, "rotation", _as_f64(self.rotation).reshape(3, 3))
        object.__setattr__(self, "translation", _as_f64(self.translation).reshape(3))
        if self.validate:
            self._check()

    def _check(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise InvalidCameraError(f"image size must be positive, got {self.width}x{self.height}")
        K = self.intrinsics
        lower = torch.tensor([K[1, 0], K[2, 0], K[2, 1], K[0, 1]])
        if lower.abs().max() > 1e-9 or abs(float(K[2, 2]) - 1.0) > 1e-9:
            raise InvalidCameraError("intrinsics must be an axis-aligned pinhole matrix")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidCameraError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0.0 <= self.cx <= self.width and 0.0 <= self.cy <= self.height):
            raise InvalidCameraError(
                f"principal point ({self.cx}, {self.cy}) outside [0,{self.width}]x[0,{self.height}]"
            )
        R = self.rotation
        eye_err = (R @ R.T - torch.eye(3, dtype=torch.float64)).abs().max()
        if float(eye_err) > 1e-6:
            raise InvalidCameraError(f"rotation not orthonormal (max error {float(eye_err):.2e})")
        if abs(float(torch.linalg.det(R)) - 1.0) > 1e-6:
            raise InvalidCameraError("rotation determinant must be +1")

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    def world_to_camera(self) -> tuple[Tensor, Tensor]:
        """Return (R, t) with p_cam = R @ p_world + t."""
        R = self.rotation.T
        return R, -R @ self.translation

    @classmethod
    def from_matrices(cls, intrinsics, camera_to_world, width: int, height: int) -> "CameraView":
        """Build from a 3x3 intrinsics and a 3x4 camera-to-world matrix."""
        m = _as_f64(camera_to_world).reshape(3, 4)
        return cls(intrinsics=_as_f64(intrinsics), rotation=m[:, :3], translation=m[:, 3],
                   width=int(width), height=int(height))

    def camera_to_world_matrix(self) -> Tensor:
        return torch.cat([self.rotation, self.translation.reshape(3, 1)], dim=1)

    def to_dict(self) -> dict:
        return {
            "intrinsics": self.intrinsics.tolist(),
            "camera_to_world": self.camera_to_world_matrix().tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraView":
        return cls.from_matrices(d["intrinsics"], d["camera_to_world"], d["width"], d["height"])


@dataclass(frozen=True)
class RayBundle:
    """Per-pixel rays of one view: origins and unit directions, (H, W, 3)."""

    origins: Tensor
    directions: Tensor

    @property
    def shape(self) -> tuple[int, int]:
        return self.origins.shape[0], self.origins.shape[1]


@dataclass(frozen=True)
class RayEncoding:
    """Six-channel ray conditioning map, (H, W, 6); first 3 channels are the
    moment (plucker) or the closest point to the world origin (closest_point), last 3
    are the unit direction."""

    channels: Tensor
    kind: RayEncodingKind

    def check_invariants(self, tol: float = 1e-6) -> None:
        d = self.channels[..., 3:]
        norm_err = (d.norm(dim=-1) - 1.0).abs().max()
        if float(norm_err) > tol:
            raise ValueError(f"direction channels not unit norm (max error {float(norm_err):.2e})")
        if self.kind == RayEncodingKind.CLOSEST_POINT:
            dot = (self.channels[..., :3] * d).sum(-1).abs().max()
            if float(dot) > tol:
                raise ValueError(f"closest-point reference not orthogonal to direction ({float(dot):.2e})")


def rays_for_view(view: CameraView) -> RayBundle:
    """Generate the pixel-aligned ray bundle of a view.

    Direction at pixel (v, u) is the normalized camera-to-world image of
    ((u + 0.5 - cx)/fx, (v + 0.5 - cy)/fy, 1); all origins equal the camera
    center.
    """
    if abs(float(torch.linalg.det(view.intrinsics))) < 1e-12:
        raise InvalidCameraError("intrinsics matrix is not invertible")
    H, W = view.height, view.width
    u = torch.arange(W, dtype=torch.float64) + 0.5
    v = torch.arange(H, dtype=torch.float64) + 0.5
    x = (u - view.cx) / view.fx
    y = (v - view.cy) / view.fy
    dirs_cam = torch.stack(
        [x.unsqueeze(0).expand(H, W),
         y.unsqueeze(1).expand(H, W),
         torch.ones(H, W, dtype=torch.float64)],
        dim=-1,
    )
    dirs_world = dirs_cam @ view.rotation.T
    dirs_world = dirs_world / dirs_world.norm(dim=-1, keepdim=True)
    origins = view.translation.expand(H, W, 3).clone()
    return RayBundle(origins=origins, directions=dirs_world)


def plucker_encode(rays: RayBundle) -> RayEncoding:
    """Classic pixel-aligned line coordinates r = (o x d, d)."""
    moment = torch.cross(rays.origins, rays.directions, dim=-1)
    return RayEncoding(channels=torch.cat([moment, rays.directions], dim=-1),
                       kind=RayEncodingKind.PLUCKER)


def closest_point_encode(rays: RayBundle) -> RayEncoding:
    """Reference-point coordinates r = (o - (o.d) d, d).

    The first three channels are the ray's closest approach to the world
    origin, which carries translational (and hence relative-depth) information
    that the plucker moment vector lacks. Channels are fed raw, with no extra
    normalization.
    """
    o, d = rays.origins, rays.directions
    ref = o - (o * d).sum(-1, keepdim=True) * d
    return RayEncoding(channels=torch.cat([ref, d], dim=-1), kind=RayEncodingKind.CLOSEST_POINT)


def encode_rays(rays: RayBundle, kind: RayEncodingKind | str) -> RayEncoding:
    kind = RayEncodingKind(kind)
    if kind == RayEncodingKind.PLUCKER:
        return plucker_encode(rays)
    return closest_point_encode(rays)


def unproject_center(rays: RayBundle, depth: Tensor) -> Tensor:
    """Place a point on each pixel ray: mu = o + depth * d.

    ``depth`` may carry leading batch dimensions; it broadcasts against the
    (H, W) ray grid. Differentiable in ``depth``.
    """
    if bool((depth <= 0).any()):
        raise InvalidDepthError("depths must be strictly positive")
    d = depth.unsqueeze(-1)
    return rays.origins.to(depth.dtype) + d * rays.directions.to(depth.dtype)


def closest_point_to_origin(encoding: RayEncoding) -> Tensor:
    """Recover the line's closest point to the world origin from an encoding.

    For closest_point the first three channels already are that point; for plucker it
    is d x m. Used to check that both encodings identify the same line.
    """
    first, d = encoding.channels[..., :3], encoding.channels[..., 3:]
    if encoding.kind == RayEncodingKind.CLOSEST_POINT:
        return first
    return torch.cross(d, first, dim=-1)


def save_cameras(path, views: list[CameraView]) -> None:
    """Write the per-scene camera file (one JSON document for all views)."""
    doc = {"views": [v.to_dict() for v in views]}
    Path(path).write_text(json.dumps(doc, indent=2))


def load_cameras(path) -> list[CameraView]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"camera file not found: {p}")
    doc = json.loads(p.read_text())
    try:
        views = [CameraView.from_dict(d) for d in doc["views"]]
    except (KeyError, TypeError) as e:
        raise InvalidCameraError(f"malformed camera file {p}: {e}") from e
    return views
