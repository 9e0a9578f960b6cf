"""Differentiable Gaussian splatting renderer.

Pipeline per view: project each 3D Gaussian to an image-plane mean, a 2x2
covariance (local affine approximation of the perspective map, dilated by an
isotropic eps so the conic stays invertible), and a camera depth; z-sort;
expand each Gaussian into (gaussian, pixel) pairs over its conservative
bounding box; drop pairs outside the cutoff ellipse; sort pairs by
pixel-major, depth-rank-minor key; composite front to back.

Transmittance is accumulated in log space: with l = log(1 - alpha) the
product of (1 - alpha_j) over predecessors inside a pixel segment becomes a
cumsum, and the total per-pixel transmittance is a plain scatter-add of l.
That keeps one sort plus a handful of vectorized passes, no Python loop over
pixels, and exact conservation sum(w) + T_final = 1 up to rounding.

Everything runs in the dtype of the cloud, so float64 clouds give
finite-difference-grade gradients and float32 is the training path.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .cameras import CameraView
from .gaussians import GaussianCloud


@dataclass(frozen=True)
class RenderConfig:
    """Rasterization knobs.

    eps_2d dilates every projected covariance by eps * I (pixel^2), the
    classic anti-aliasing floor that also guarantees invertibility.
    cutoff_sigma bounds the rendered footprint in Mahalanobis units; pairs
    with q > cutoff^2 / 2 are dropped regardless of opacity, so the mask
    never gates opacity gradients. max_radius_px caps the bounding-box
    radius to bound pair count. alpha_max keeps log(1 - alpha) finite.
    Gaussians with camera depth <= z_cull are culled.
    """

    eps_2d: float = 0.1
    cutoff_sigma: float = 3.0
    max_radius_px: int = 32
    alpha_max: float = 1.0 - 1e-7
    alpha_valid: float = 0.01
    z_cull: float = 1e-3
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.eps_2d < 0:
            raise ValueError("eps_2d must be non-negative")
        if self.cutoff_sigma <= 0:
            raise ValueError("cutoff_sigma must be positive")
        if self.max_radius_px < 1:
            raise ValueError("max_radius_px must be at least 1")
        if not 0 < self.alpha_max < 1:
            raise ValueError("alpha_max must lie in (0, 1)")
        if self.z_cull <= 0:
            raise ValueError("z_cull must be positive")


@dataclass
class RenderOutput:
    """Per-pixel composited buffers for one view.

    depth is the alpha-weight-normalized expected camera depth; it is zero
    where nothing rendered, and only trustworthy where ``valid`` (alpha above
    the config floor). weight_sum + (1 - alpha) == 1 up to rounding.
    """

    color: Tensor       # (H, W, 3)
    depth: Tensor       # (H, W)
    alpha: Tensor       # (H, W)
    weight_sum: Tensor  # (H, W)
    valid: Tensor       # (H, W) bool
    num_pairs: int


def _camera_terms(view: CameraView, dtype):
    rot, trans = view.world_to_camera()
    return rot.to(dtype), trans.to(dtype), view.fx, view.fy, view.cx, view.cy


def _project_terms(p_cam: Tensor, covs_world: Tensor, rot: Tensor,
                   fx: float, fy: float, cx: float, cy: float, eps_2d: float):
    """Image-plane means and dilated 2x2 covariances for camera points with z > 0."""
    x, y, z = p_cam.unbind(-1)
    inv_z = 1.0 / z
    u = fx * x * inv_z + cx
    v = fy * y * inv_z + cy
    zero = torch.zeros_like(z)
    jac = torch.stack(
        [
            torch.stack([fx * inv_z, zero, -fx * x * inv_z * inv_z], dim=-1),
            torch.stack([zero, fy * inv_z, -fy * y * inv_z * inv_z], dim=-1),
        ],
        dim=-2,
    )
    cov_cam = torch.einsum("ij,njk,lk->nil", rot, covs_world, rot)
    cov2d = jac @ cov_cam @ jac.transpose(-1, -2)
    eye = torch.eye(2, dtype=cov2d.dtype)
    return torch.stack([u, v], dim=-1), cov2d + eps_2d * eye, z


def project_gaussian(mean: Tensor, cov3d: Tensor, view: CameraView,
                     eps_2d: float = 0.1):
    """Project a single Gaussian: (3,), (3, 3) -> mean2d (2,), cov2d (2, 2), z.

    Raises ValueError when the mean sits at or behind the camera plane.
    """
    rot, trans, fx, fy, cx, cy = _camera_terms(view, mean.dtype)
    p_cam = (rot @ mean + trans).unsqueeze(0)
    if p_cam[0, 2] <= 0:
        raise ValueError(f"gaussian is behind the camera (z = {float(p_cam[0, 2]):g})")
    mean2d, cov2d, z = _project_terms(p_cam, cov3d.unsqueeze(0), rot, fx, fy, cx, cy, eps_2d)
    return mean2d[0], cov2d[0], z[0]


def _blank_output(height: int, width: int, dtype, background) -> RenderOutput:
    bg = torch.tensor(background, dtype=dtype)
    return RenderOutput(
        color=bg.expand(height, width, 3).clone(),
        depth=torch.zeros(height, width, dtype=dtype),
        alpha=torch.zeros(height, width, dtype=dtype),
        weight_sum=torch.zeros(height, width, dtype=dtype),
        valid=torch.zeros(height, width, dtype=torch.bool),
        num_pairs=0,
    )


def render(cloud: GaussianCloud, view: CameraView, config: RenderConfig = RenderConfig()) -> RenderOutput:
    """Composite a cloud into color, expected depth, and alpha for one view."""
    height, width = view.height, view.width
    dtype = cloud.means.dtype
    if len(cloud) == 0:
        return _blank_output(height, width, dtype, config.background)

    rot, trans, fx, fy, cx, cy = _camera_terms(view, dtype)
    p_cam = cloud.means @ rot.T + trans
    front = p_cam[:, 2] > config.z_cull
    if not front.any():
        return _blank_output(height, width, dtype, config.background)

    covs = cloud.covariances()[front]
    mean2d, cov2d, z = _project_terms(p_cam[front], covs, rot, fx, fy, cx, cy, config.eps_2d)
    opacities = cloud.opacities[front]
    colors = cloud.colors[front]

    order = torch.argsort(z, stable=True)
    mean2d, cov2d, z = mean2d[order], cov2d[order], z[order]
    opacities, colors = opacities[order], colors[order]

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    if (det <= 0).any():
        raise ValueError("degenerate projected covariance; increase eps_2d")
    inv_a = c / det
    inv_b = -b / det
    inv_c = a / det

    # Bounding boxes are integer bookkeeping, not part of the derivative.
    with torch.no_grad():
        mid = 0.5 * (a + c)
        lam_max = mid + torch.sqrt(((a - c) * 0.5) ** 2 + b * b)
        radius = torch.ceil(config.cutoff_sigma * torch.sqrt(lam_max))
        radius = radius.clamp(min=1, max=config.max_radius_px)
        u, v = mean2d[:, 0], mean2d[:, 1]
        # Pixel (i, j) has center (j + 0.5, i + 0.5); clamp lo from below and
        # hi from above only, so off-image boxes collapse to zero width.
        col_lo = torch.ceil(u - radius - 0.5).long().clamp(min=0)
        col_hi = torch.floor(u + radius - 0.5).long().clamp(max=width - 1)
        row_lo = torch.ceil(v - radius - 0.5).long().clamp(min=0)
        row_hi = torch.floor(v + radius - 0.5).long().clamp(max=height - 1)
        box_w = (col_hi - col_lo + 1).clamp(min=0)
        box_h = (row_hi - row_lo + 1).clamp(min=0)
        counts = box_w * box_h

    touching = counts > 0
    if not touching.any():
        return _blank_output(height, width, dtype, config.background)
    mean2d, z = mean2d[touching], z[touching]
    opacities, colors = opacities[touching], colors[touching]
    inv_a, inv_b, inv_c = inv_a[touching], inv_b[touching], inv_c[touching]
    counts = counts[touching]
    col_lo, row_lo, box_w = col_lo[touching], row_lo[touching], box_w[touching]
    num_g = counts.shape[0]

    gid = torch.repeat_interleave(torch.arange(num_g), counts)
    start = torch.cumsum(counts, 0) - counts
    local = torch.arange(int(counts.sum())) - start[gid]
    col = col_lo[gid] + local % box_w[gid]
    row = row_lo[gid] + local // box_w[gid]
    pix = row * width + col

    du = mean2d[gid, 0] - (col.to(dtype) + 0.5)
    dv = mean2d[gid, 1] - (row.to(dtype) + 0.5)
    q = 0.5 * (inv_a[gid] * du * du + 2 * inv_b[gid] * du * dv + inv_c[gid] * dv * dv)
    inside = q <= 0.5 * config.cutoff_sigma ** 2
    if not inside.any():
        return _blank_output(height, width, dtype, config.background)
    gid, pix, q = gid[inside], pix[inside], q[inside]

    alpha = (opacities[gid] * torch.exp(-q)).clamp(max=config.alpha_max)

    # Pixel-major, depth-rank-minor order; gid is already the z rank.
    key = pix * num_g + gid
    perm = torch.argsort(key)
    gid, pix, alpha = gid[perm], pix[perm], alpha[perm]

    log_t = torch.log1p(-alpha)
    run = torch.cumsum(log_t, 0)
    before = run - log_t
    head = torch.ones_like(pix, dtype=torch.bool)
    head[1:] = pix[1:] != pix[:-1]
    seg = torch.cumsum(head.long(), 0) - 1
    trans_before = torch.exp(before - before[head][seg])
    weight = alpha * trans_before

    n_px = height * width
    zeros_px = torch.zeros(n_px, dtype=dtype)
    color_acc = torch.zeros(n_px, 3, dtype=dtype).index_add(0, pix, weight.unsqueeze(-1) * colors[gid])
    depth_acc = zeros_px.index_add(0, pix, weight * z[gid])
    weight_sum = zeros_px.index_add(0, pix, weight)
    log_t_total = zeros_px.index_add(0, pix, log_t)
    t_final = torch.exp(log_t_total)

    bg = torch.tensor(config.background, dtype=dtype)
    color = color_acc + t_final.unsqueeze(-1) * bg
    depth = torch.where(weight_sum > 0, depth_acc / weight_sum.clamp_min(torch.finfo(dtype).tiny), zeros_px)
    alpha_img = 1.0 - t_final

    return RenderOutput(
        color=color.view(height, width, 3),
        depth=depth.view(height, width),
        alpha=alpha_img.view(height, width),
        weight_sum=weight_sum.view(height, width),
        valid=(alpha_img > config.alpha_valid).view(height, width),
        num_pairs=int(pix.shape[0]),
    )
