"""Synthetic burst noise: heteroscedastic shot/read model, gain curve,
training-window sampling, and the linearize/delinearize protocol.

The noisy intensity at a pixel is drawn from a Gaussian centered on the clean
linear intensity with variance sigma_r^2 + sigma_s^2 * I. Noise is applied in
linear space; the model consumes images mapped back to sRGB, so delinearize
after adding noise and before feeding the network.

A pure 2.2 power law stands in for the sRGB curve, which keeps the
linearize/delinearize round trip exactly invertible. The gain curve anchors
and the training window are configuration placeholders calibrated for this
artifact, not sensor ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GAMMA = 2.2


@dataclass(frozen=True)
class NoiseParams:
    """A (sigma_r, sigma_s) pair, optionally tagged with its gain level.

    sigma_r is the read-noise std in linear intensity units; sigma_s scales
    the signal-dependent shot variance.
    """

    sigma_r: float
    sigma_s: float
    gain: float | None = None

    def __post_init__(self):
        if self.sigma_r < 0 or self.sigma_s < 0:
            raise ValueError(f"noise stds must be non-negative, got ({self.sigma_r}, {self.sigma_s})")
        if not math.isfinite(self.sigma_max):
            raise ValueError("sigma_max must be finite")

    @property
    def sigma_max(self) -> float:
        """Worst-case per-pixel std, sqrt(sigma_r^2 + sigma_s^2)."""
        return math.hypot(self.sigma_r, self.sigma_s)


@dataclass(frozen=True)
class NoiseWindow:
    """Axis-aligned rectangle in (log10 sigma_r, log10 sigma_s) used to draw
    training noise levels."""

    log10_sigma_r: tuple[float, float] = (-1.6, -0.9)
    log10_sigma_s: tuple[float, float] = (-2.0, -1.3)

    def __post_init__(self):
        for lo, hi in (self.log10_sigma_r, self.log10_sigma_s):
            if lo > hi:
                raise ValueError(f"window bounds must satisfy lo <= hi, got ({lo}, {hi})")


@dataclass(frozen=True)
class GainCurve:
    """Log-log linear map from a sensor gain level to noise parameters.

    Anchored at gain 1; the defaults visually mimic a consumer sensor's
    ISO ladder and are meant to be recalibrated per experiment.
    """

    sigma_r_1: float = 10.0 ** -2.2
    sigma_s_1: float = 10.0 ** -2.6
    slope_r: float = 1.0
    slope_s: float = 1.0

    def __post_init__(self):
        if self.sigma_r_1 <= 0 or self.sigma_s_1 <= 0:
            raise ValueError("gain curve anchors must be positive")


def gain_to_sigmas(curve: GainCurve, gain: float) -> NoiseParams:
    """Evaluate the gain curve: sigma = anchor * gain^slope per axis."""
    if gain <= 0:
        raise ValueError(f"gain must be positive, got {gain}")
    return NoiseParams(
        sigma_r=curve.sigma_r_1 * gain ** curve.slope_r,
        sigma_s=curve.sigma_s_1 * gain ** curve.slope_s,
        gain=float(gain),
    )


def apply_noise(clean: np.ndarray, params: NoiseParams, rng_seed: int,
                clip: bool = False) -> np.ndarray:
    """Draw a noisy image around a clean linear image.

    Each pixel is sampled independently from
    N(clean, sigma_r^2 + sigma_s^2 * clean). The output is not clipped unless
    ``clip`` is set (clipping biases the mean, so it is off by default).
    Deterministic for a fixed seed.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if clean.min() < 0 or clean.max() > 1:
        raise ValueError("clean linear image must lie in [0, 1]")
    var = params.sigma_r ** 2 + params.sigma_s ** 2 * clean
    rng = np.random.default_rng(rng_seed)
    noisy = clean + rng.standard_normal(clean.shape) * np.sqrt(var)
    if clip:
        noisy = np.clip(noisy, 0.0, 1.0)
    return noisy


def sample_train_noise(window: NoiseWindow, rng_seed: int) -> NoiseParams:
    """Draw (sigma_r, sigma_s) log10-uniformly over the training rectangle."""
    rng = np.random.default_rng(rng_seed)
    lr = rng.uniform(*window.log10_sigma_r)
    ls = rng.uniform(*window.log10_sigma_s)
    return NoiseParams(sigma_r=10.0 ** lr, sigma_s=10.0 ** ls)


def _check_wb(wb_gains) -> np.ndarray:
    wb = np.asarray(wb_gains, dtype=np.float64).reshape(-1)
    if wb.size != 3:
        raise ValueError("white balance gains must be a 3-vector")
    if (wb <= 0).any():
        raise ValueError(f"white balance gains must be positive, got {wb.tolist()}")
    return wb


def linearize(srgb: np.ndarray, wb_gains=(1.0, 1.0, 1.0)) -> np.ndarray:
    """sRGB -> linear: per channel x^gamma, then divide by the channel gain."""
    srgb = np.asarray(srgb, dtype=np.float64)
    if srgb.min() < 0 or srgb.max() > 1:
        raise ValueError("sRGB input must lie in [0, 1]")
    wb = _check_wb(wb_gains)
    return (srgb ** GAMMA) / wb


def delinearize(linear: np.ndarray, wb_gains=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Linear -> sRGB: multiply by gains, clamp at 0, apply x^(1/gamma), clamp to [0,1].

    Tolerates out-of-range inputs since noise can undershoot/overshoot.
    """
    wb = _check_wb(wb_gains)
    x = np.asarray(linear, dtype=np.float64) * wb
    x = np.clip(x, 0.0, None)
    return np.clip(x ** (1.0 / GAMMA), 0.0, 1.0)
