"""Training objectives.

Four terms combine into the total:

  mse          pixel MSE between rendered and target color
  perceptual   multi-scale gradient-feature distance (structure-sensitive,
               blind to constant offsets); fixed filters, no learned weights
  freq         frequency-domain distance where each spectral bin is weighted
               by the log of its own error magnitude, so large structured
               residuals dominate and near-zero bins contribute nothing
  consistency  squared distance between the per-pixel ray distances predicted
               from noisy inputs and those predicted from clean inputs, with
               the clean branch treated as a constant (stop-gradient)

The consistency term only applies after a warm-up phase; the trainer passes
``consistency_active`` and this module excludes the term entirely when it is
off, so an inactive term leaves the total bit-identical to a run that never
computed it.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .gaussians import GaussianCloud

# keeps sqrt differentiable at exactly zero spectral error; two orders below
# float64 resolution of the hand-checked loss values
_FREQ_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    mse: float = 1.0
    perceptual: float = 0.5
    consistency: float = 0.06
    freq: float = 1.75

    def __post_init__(self):
        for name in ("mse", "perceptual", "consistency", "freq"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


@dataclass
class LossReport:
    """Scalar (0-dim) tensors for each term plus the combined total.

    ``consistency`` is a detached zero when the term was inactive, so logs
    always have the field.
    """

    total: Tensor
    mse: Tensor
    perceptual: Tensor
    freq: Tensor
    consistency: Tensor
    consistency_active: bool

    def scalars(self) -> dict:
        return {
            "total": float(self.total.detach()),
            "mse": float(self.mse.detach()),
            "perceptual": float(self.perceptual.detach()),
            "freq": float(self.freq.detach()),
            "consistency": float(self.consistency.detach()),
            "consistency_active": self.consistency_active,
        }


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


def gradient_pyramid(image: Tensor, levels: int = 3) -> list[Tensor]:
    """Horizontal and vertical finite differences at ``levels`` dyadic scales.

    image is (H, W, C). Levels too small to difference are skipped.
    """
    x = image.permute(2, 0, 1).unsqueeze(0)
    feats = []
    for _ in range(levels):
        if x.shape[-1] >= 2:
            feats.append(x[..., :, 1:] - x[..., :, :-1])
        if x.shape[-2] >= 2:
            feats.append(x[..., 1:, :] - x[..., :-1, :])
        if min(x.shape[-2:]) < 2:
            break
        x = F.avg_pool2d(x, 2)
    return feats


def perceptual_loss(pred: Tensor, target: Tensor, levels: int = 3) -> Tensor:
    """Mean squared gradient-feature distance, averaged over pyramid levels."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    fp = gradient_pyramid(pred, levels)
    ft = gradient_pyramid(target, levels)
    if not fp:
        return torch.zeros((), dtype=pred.dtype)
    terms = [((a - b) ** 2).mean() for a, b in zip(fp, ft)]
    return torch.stack(terms).mean()


def dft2(image: Tensor) -> Tensor:
    """Unnormalized 2D DFT over the spatial axes of an (H, W, C) tensor."""
    if image.ndim != 3:
        raise ValueError(f"expected (H, W, C), got {tuple(image.shape)}")
    return torch.fft.fft2(image, dim=(0, 1), norm=None)


def freq_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Log-weighted spectral distance.

    Per frequency bin: d = sqrt(sum_c |F_target - F_pred|^2), weighted by
    omega = log(sqrt(d) + 1) taken as a constant (no gradient through the
    weight), averaged over the H*W bins.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = dft2(target) - dft2(pred)
    d = torch.sqrt((diff.real ** 2 + diff.imag ** 2).sum(dim=-1) + _FREQ_EPS ** 2)
    omega = torch.log(torch.sqrt(d) + 1.0).detach()
    return (omega * d).mean()


def consistency_loss(pred: GaussianCloud, guidance: GaussianCloud) -> Tensor:
    """Mean squared difference of per-pixel ray distances against guidance.

    The guidance cloud must come from the clean branch and is treated as a
    constant; only the noisy branch receives gradient.
    """
    if not guidance.from_guidance:
        raise ValueError("guidance cloud must be tagged from_guidance")
    if pred.from_guidance:
        raise ValueError("prediction and guidance clouds are swapped")
    if pred.distances is None or guidance.distances is None:
        raise ValueError("both clouds need per-pixel distances")
    if len(pred) != len(guidance):
        raise ValueError(f"cloud sizes differ: {len(pred)} vs {len(guidance)}")
    if pred.grid_shape != guidance.grid_shape:
        raise ValueError(f"grid shapes differ: {pred.grid_shape} vs {guidance.grid_shape}")
    return ((pred.distances - guidance.distances.detach()) ** 2).mean()


def total_loss(pred_color: Tensor, target_color: Tensor, *,
               pred_cloud: GaussianCloud | None = None,
               guidance_cloud: GaussianCloud | None = None,
               weights: LossWeights = LossWeights(),
               consistency_active: bool = False) -> LossReport:
    """Combine the terms; the consistency term participates only when active."""
    mse = mse_loss(pred_color, target_color)
    percep = perceptual_loss(pred_color, target_color)
    freq = freq_loss(pred_color, target_color)
    total = weights.mse * mse + weights.perceptual * percep + weights.freq * freq
    if consistency_active:
        if pred_cloud is None or guidance_cloud is None:
            raise ValueError("consistency term is active but clouds are missing")
        consistency = consistency_loss(pred_cloud, guidance_cloud)
        total = total + weights.consistency * consistency
    else:
        consistency = torch.zeros((), dtype=pred_color.dtype)
    return LossReport(total=total, mse=mse, perceptual=percep, freq=freq,
                      consistency=consistency, consistency_active=consistency_active)
