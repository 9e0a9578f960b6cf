"""Image and depth metrics, held-out evaluation, gain sweeps, and report IO.

PSNR and depth error are straightforward; SSIM is implemented here rather
than imported so the package has no runtime dependency on scikit-image (the
test suite uses scikit-image as an independent oracle). Evaluation bursts are
seeded from (eval seed, scene index) only, never from the gain, so a gain
sweep reuses the same underlying noise field at every level.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from numpy.lib.stride_tricks import sliding_window_view

from .cameras import rays_for_view
from .config import ExperimentConfig
from .model import GaussianRegressor
from .noise import NoiseParams, gain_to_sigmas
from .renderer import render
from .scenes import BurstSample, Scene, generate_synthetic_scene, make_burst
from .seeding import derive_seed

SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(pred: np.ndarray, target: np.ndarray, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def _ssim_kernel() -> np.ndarray:
    radius = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def _window_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    windows = sliding_window_view(img, kernel.shape)
    return np.einsum("ijkl,kl->ij", windows, kernel)


def ssim(pred: np.ndarray, target: np.ndarray, data_range: float = 1.0) -> float:
    """Mean structural similarity with an 11-tap Gaussian window.

    Local moments use population (not sample) covariance, and the mean is
    taken over windows that fit entirely inside the image, so border pixels
    never mix with padding.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.ndim == 2:
        pred = pred[..., None]
        target = target[..., None]
    if pred.ndim != 3:
        raise ValueError("expected a (H, W) or (H, W, C) image")
    kernel = _ssim_kernel()
    if pred.shape[0] < kernel.shape[0] or pred.shape[1] < kernel.shape[1]:
        raise ValueError(f"image smaller than the {kernel.shape[0]}-tap ssim window")

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    values = []
    for c in range(pred.shape[2]):
        x, y = pred[..., c], target[..., c]
        mx = _window_mean(x, kernel)
        my = _window_mean(y, kernel)
        vx = _window_mean(x * x, kernel) - mx * mx
        vy = _window_mean(y * y, kernel) - my * my
        vxy = _window_mean(x * y, kernel) - mx * my
        s = ((2 * mx * my + c1) * (2 * vxy + c2)) / \
            ((mx * mx + my * my + c1) * (vx + vy + c2))
        values.append(float(s.mean()))
    return float(np.mean(values))


def depth_abs_rel(pred: np.ndarray, target: np.ndarray,
                  valid: np.ndarray | None = None) -> float:
    """Mean of |pred - target| / target over valid pixels (target > 0)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    mask = target > 0
    if valid is not None:
        mask &= np.asarray(valid, dtype=bool)
    if not mask.any():
        raise ValueError("no valid pixels for depth error")
    return float(np.mean(np.abs(pred[mask] - target[mask]) / target[mask]))


@dataclass
class SceneMetrics:
    scene: str
    task: str
    gain: float
    psnr: float
    ssim: float
    depth_abs_rel: float


@dataclass
class EvalReport:
    task: str
    gain: float
    num_inputs: int
    num_scenes: int
    seed: int
    psnr: float
    ssim: float
    depth_abs_rel: float
    fps: float | None = None
    per_scene: list[SceneMetrics] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        data = asdict(self)
        # json has no inf; store null plus an explicit flag
        data["psnr_infinite"] = math.isinf(self.psnr)
        data["psnr"] = None if math.isinf(self.psnr) else self.psnr
        for row in data["per_scene"]:
            row["psnr_infinite"] = math.isinf(row["psnr"])
            if row["psnr_infinite"]:
                row["psnr"] = None
        return data


def write_report_json(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_json_dict(), indent=2,
                                     sort_keys=True) + "\n")


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene", "task", "gain", "psnr", "ssim", "depth_abs_rel"])
        for row in report.per_scene:
            writer.writerow([row.scene, row.task, row.gain, row.psnr,
                             row.ssim, row.depth_abs_rel])


def eval_scenes(config: ExperimentConfig) -> list[Scene]:
    """The frozen evaluation pool; disjoint seed stream from training."""
    return [
        generate_synthetic_scene(config.scene,
                                 derive_seed(config.eval.seed, "eval-scene", i))
        for i in range(config.eval.num_scenes)
    ]


def eval_burst(scene: Scene, scene_index: int, config: ExperimentConfig,
               gain: float, task: str) -> BurstSample:
    """Build the evaluation burst for one scene at one gain level.

    The seed depends on the evaluation seed and scene index only, so bursts
    at different gains share their view permutation and, because the noise
    field is drawn before scaling, the same per-pixel standard normals.
    """
    if gain == 0:
        params = NoiseParams(0.0, 0.0, gain=0.0)
    else:
        params = gain_to_sigmas(config.gain_curve, gain)
    seed = derive_seed(config.eval.seed, "eval-burst", scene_index)
    return make_burst(scene, config.eval.num_inputs, params, seed, task)


def _predict_and_render(model: GaussianRegressor, images_np: np.ndarray,
                        burst: BurstSample, config: ExperimentConfig):
    images = torch.tensor(images_np, dtype=torch.float32)
    rays = [rays_for_view(v) for v in burst.input_views]
    with torch.no_grad():
        cloud = model(images, rays)
        out = render(cloud, burst.target_view, config.render)
    return out


def evaluate(model: GaussianRegressor, config: ExperimentConfig, *,
             gain: float | None = None, task: str | None = None,
             scenes: list[Scene] | None = None) -> EvalReport:
    """Mean metrics over the evaluation pool at one gain level.

    Color metrics compare the noisy-input rendering against the clean target
    image. The depth error compares the noisy-input depth rendering against
    the same model's clean-input depth rendering: depth is measured as
    self-consistency under noise, not against the generator's geometry.
    """
    gain = config.eval.gain if gain is None else gain
    task = config.eval.task if task is None else task
    if scenes is None:
        scenes = eval_scenes(config)

    per_scene = []
    for i, scene in enumerate(scenes):
        burst = eval_burst(scene, i, config, gain, task)
        noisy_out = _predict_and_render(model, burst.noisy_images, burst, config)
        clean_out = _predict_and_render(model, burst.clean_images, burst, config)
        color = noisy_out.color.double().numpy()
        depth = noisy_out.depth.double().numpy()
        depth_ref = clean_out.depth.double().numpy()
        # depth is only trustworthy where both renders accumulated real alpha
        depth_valid = (noisy_out.valid & clean_out.valid).numpy()
        per_scene.append(SceneMetrics(
            scene=scene.name,
            task=task,
            gain=gain,
            psnr=psnr(color, burst.target_image),
            ssim=ssim(color, burst.target_image),
            depth_abs_rel=depth_abs_rel(depth, depth_ref, valid=depth_valid),
        ))

    return EvalReport(
        task=task,
        gain=gain,
        num_inputs=config.eval.num_inputs,
        num_scenes=len(scenes),
        seed=config.eval.seed,
        psnr=float(np.mean([m.psnr for m in per_scene])),
        ssim=float(np.mean([m.ssim for m in per_scene])),
        depth_abs_rel=float(np.mean([m.depth_abs_rel for m in per_scene])),
        per_scene=per_scene,
    )


@dataclass
class SweepReport:
    task: str
    gains: tuple[float, ...]
    num_inputs: int
    num_scenes: int
    seed: int
    reports: list[EvalReport]

    def to_json_dict(self) -> dict:
        return {
            "task": self.task,
            "gains": list(self.gains),
            "num_inputs": self.num_inputs,
            "num_scenes": self.num_scenes,
            "seed": self.seed,
            "reports": [r.to_json_dict() for r in self.reports],
        }


def write_sweep_json(report: SweepReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_json_dict(), indent=2,
                                     sort_keys=True) + "\n")


def write_sweep_csv(report: SweepReport, path) -> None:
    """Per-scene rows for every gain in one file."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene", "task", "gain", "psnr", "ssim", "depth_abs_rel"])
        for rep in report.reports:
            for row in rep.per_scene:
                writer.writerow([row.scene, row.task, row.gain, row.psnr,
                                 row.ssim, row.depth_abs_rel])


def gain_sweep(model: GaussianRegressor, config: ExperimentConfig, *,
               gains: tuple[float, ...] | None = None,
               task: str | None = None) -> SweepReport:
    """Evaluate the same scene pool at each gain; noise fields pair up."""
    gains = tuple(config.eval.gains if gains is None else gains)
    task = config.eval.task if task is None else task
    scenes = eval_scenes(config)
    reports = [evaluate(model, config, gain=g, task=task, scenes=scenes)
               for g in gains]
    return SweepReport(task=task, gains=gains, num_inputs=config.eval.num_inputs,
                       num_scenes=len(scenes), seed=config.eval.seed,
                       reports=reports)


def bench_fps(model: GaussianRegressor, config: ExperimentConfig, *,
              iters: int = 10, gain: float | None = None) -> dict:
    """Median wall-clock rate of predict+render for one burst.

    Timing is hardware-bound and excluded from metric reports unless a
    report's fps field is filled in explicitly from this result.
    """
    if iters < 1:
        raise ValueError("iters must be positive")
    scene = generate_synthetic_scene(config.scene,
                                     derive_seed(config.eval.seed, "bench-scene"))
    burst = eval_burst(scene, 0, config,
                       config.eval.gain if gain is None else gain,
                       config.eval.task)
    _predict_and_render(model, burst.noisy_images, burst, config)  # warm-up

    times = []
    for _ in range(iters):
        start = time.perf_counter()
        _predict_and_render(model, burst.noisy_images, burst, config)
        times.append(time.perf_counter() - start)
    median = float(np.median(times))
    return {
        "fps": 1.0 / median,
        "median_seconds": median,
        "iters": iters,
        "num_inputs": config.eval.num_inputs,
        "image_size": list(config.model.image_size),
        "hardware": f"{platform.machine()} cpu, {torch.get_num_threads()} torch threads",
    }


def spectrum_magnitude(image: np.ndarray, channel: int | None = None) -> np.ndarray:
    """Centered log-magnitude spectrum of one channel (or the channel mean)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        if channel is None:
            image = image.mean(axis=2)
        elif 0 <= channel < image.shape[2]:
            image = image[..., channel]
        else:
            raise ValueError(f"channel {channel} out of range for {image.shape}")
    if image.ndim != 2:
        raise ValueError("expected a (H, W) or (H, W, C) image")
    mag = np.abs(np.fft.fftshift(np.fft.fft2(image)))
    return np.log1p(mag)


def export_spectrum(image: np.ndarray, channel: int | None = None) -> np.ndarray:
    """uint8 visualization of the log-magnitude spectrum, scaled to [0, 255]."""
    spec = spectrum_magnitude(image, channel)
    peak = spec.max()
    if peak > 0:
        spec = spec / peak
    return np.round(spec * 255.0).astype(np.uint8)
