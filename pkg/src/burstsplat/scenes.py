"""Synthetic scenes, burst assembly, and on-disk formats.

A scene is a set of posed views of a procedurally built Gaussian world: a
color-textured wall behind a handful of anisotropic blobs. Ground-truth
images and depths come from the package's own renderer, so the prediction
target is exactly representable and depth shares the renderer's camera-z
convention.

Images are quantized to the 8-bit grid at generation time (round(255 x) /
255), which makes save -> load an exact identity and keeps every consumer
bit-reproducible whether it reads from memory or from disk.

Disk layout per scene:

    scene_dir/
      cameras.json     all views, intrinsics + camera-to-world
      images/000.png   8-bit sRGB
      depth/000.pfm    float32 camera-z, grayscale PFM

A burst draws a view subset from one permutation of the scene's views, so
smaller bursts are always prefixes of larger ones under the same seed, adds
heteroscedastic noise per frame in linear space, and picks a target view
inside the input set (denoising) or outside it (novel view synthesis).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .cameras import CameraView, load_cameras, save_cameras
from .gaussians import GaussianCloud
from .noise import NoiseParams, apply_noise, delinearize, linearize
from .renderer import RenderConfig, render
from .seeding import derive_rng, derive_seed


@dataclass
class Scene:
    """Posed views with quantized sRGB images and float32 depth maps."""

    views: list[CameraView]
    images: list[np.ndarray]   # (H, W, 3) float64 in [0, 1], on the 8-bit grid
    depths: list[np.ndarray]   # (H, W) float32 camera-z, 0 where nothing rendered
    name: str = "scene"

    def __post_init__(self):
        if not (len(self.views) == len(self.images) == len(self.depths)):
            raise ValueError("views, images, and depths must have equal length")

    def __len__(self) -> int:
        return len(self.views)


@dataclass(frozen=True)
class SceneGenConfig:
    image_size: tuple[int, int] = (64, 64)
    num_views: int = 8
    fov_deg: float = 60.0
    camera_distance: float = 3.5
    azimuth_deg: float = 25.0
    elevation_deg: float = 12.0
    look_jitter: float = 0.15
    wall_z: float = 1.2
    wall_half_extent: float = 4.5
    wall_grid: int = 26
    wall_scale: float = 0.25
    wall_opacity: float = 0.95
    wall_relief: float = 0.12
    num_blobs: tuple[int, int] = (3, 8)
    blob_radius: float = 0.9
    blob_scale: tuple[float, float] = (0.08, 0.3)
    blob_opacity: tuple[float, float] = (0.5, 0.95)
    render: RenderConfig = field(default_factory=RenderConfig)

    def __post_init__(self):
        if self.num_views < 2:
            raise ValueError("need at least 2 views")
        if self.wall_grid < 2 or self.num_blobs[0] < 0 or self.num_blobs[0] > self.num_blobs[1]:
            raise ValueError("bad scene population bounds")


def look_at_view(position, target, size: tuple[int, int], fov_deg: float) -> CameraView:
    """Camera at ``position`` looking at ``target``, y-up."""
    pos = torch.as_tensor(position, dtype=torch.float64)
    tgt = torch.as_tensor(target, dtype=torch.float64)
    fwd = tgt - pos
    fwd = fwd / fwd.norm()
    up = torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64)
    right = torch.linalg.cross(up, fwd)
    right = right / right.norm()
    true_up = torch.linalg.cross(fwd, right)
    rot = torch.stack([right, true_up, fwd], dim=1)
    h, w = size
    f = (w / 2) / math.tan(math.radians(fov_deg) / 2)
    intr = torch.tensor([[f, 0.0, w / 2], [0.0, f, h / 2], [0.0, 0.0, 1.0]],
                        dtype=torch.float64)
    return CameraView(intrinsics=intr, rotation=rot, translation=pos, width=w, height=h)


def quantize_to_8bit(image: np.ndarray) -> np.ndarray:
    """Snap a [0, 1] float image onto the 8-bit grid."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def _scene_cloud(cfg: SceneGenConfig, rng: np.random.Generator) -> GaussianCloud:
    half = cfg.wall_half_extent
    lin = np.linspace(-half, half, cfg.wall_grid)
    gx, gy = np.meshgrid(lin, lin, indexing="xy")
    n_wall = cfg.wall_grid ** 2
    wall_means = np.column_stack([
        gx.ravel() + rng.uniform(-0.05, 0.05, n_wall),
        gy.ravel() + rng.uniform(-0.05, 0.05, n_wall),
        np.full(n_wall, cfg.wall_z) + rng.uniform(-cfg.wall_relief, cfg.wall_relief, n_wall),
    ])
    wall_scales = np.full((n_wall, 3), cfg.wall_scale) * rng.uniform(0.8, 1.2, (n_wall, 1))
    wall_colors = rng.uniform(0.05, 0.95, (n_wall, 3))

    k = int(rng.integers(cfg.num_blobs[0], cfg.num_blobs[1] + 1))
    blob_dirs = rng.normal(size=(k, 3))
    blob_dirs /= np.linalg.norm(blob_dirs, axis=1, keepdims=True)
    blob_means = blob_dirs * rng.uniform(0, cfg.blob_radius, (k, 1))
    blob_scales = rng.uniform(*cfg.blob_scale, (k, 3))
    blob_colors = rng.uniform(0.05, 0.95, (k, 3))
    blob_opac = rng.uniform(*cfg.blob_opacity, k)

    n = n_wall + k
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return GaussianCloud(
        means=torch.tensor(np.vstack([wall_means, blob_means])),
        scales=torch.tensor(np.vstack([wall_scales, blob_scales])),
        rotations=torch.tensor(quats),
        opacities=torch.tensor(np.concatenate([np.full(n_wall, cfg.wall_opacity), blob_opac])),
        colors=torch.tensor(np.vstack([wall_colors, blob_colors])),
    )


def generate_synthetic_scene(cfg: SceneGenConfig, seed: int, name: str | None = None) -> Scene:
    """Build a random Gaussian world and render ground truth for every view."""
    rng = derive_rng(seed, "scene")
    cloud = _scene_cloud(cfg, rng)

    views = []
    for _ in range(cfg.num_views):
        azim = math.radians(rng.uniform(-cfg.azimuth_deg, cfg.azimuth_deg))
        elev = math.radians(rng.uniform(-cfg.elevation_deg, cfg.elevation_deg))
        pos = cfg.camera_distance * np.array([
            math.sin(azim) * math.cos(elev),
            math.sin(elev),
            -math.cos(azim) * math.cos(elev),
        ])
        target = rng.uniform(-cfg.look_jitter, cfg.look_jitter, 3)
        views.append(look_at_view(pos, target, cfg.image_size, cfg.fov_deg))

    images, depths = [], []
    for view in views:
        out = render(cloud, view, cfg.render)
        images.append(quantize_to_8bit(out.color.numpy()))
        depths.append(out.depth.numpy().astype(np.float32))
    return Scene(views=views, images=images, depths=depths,
                 name=name if name is not None else f"scene{seed:05d}")


def write_pfm(path, data: np.ndarray):
    """Grayscale little-endian PFM, rows stored bottom-to-top."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError("pfm writer takes a single-channel (H, W) array")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{data.shape[1]} {data.shape[0]}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.flipud(data).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ValueError(f"{path} is not a grayscale PFM file")
        width, height = map(int, fh.readline().split())
        scale = float(fh.readline())
        buf = fh.read(width * height * 4)
    data = np.frombuffer(buf, dtype="<f4" if scale < 0 else ">f4")
    if data.size != width * height:
        raise ValueError(f"{path} is truncated")
    return np.flipud(data.reshape(height, width)).copy()


def save_scene(scene: Scene, path):
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    (path / "depth").mkdir(exist_ok=True)
    save_cameras(path / "cameras.json", scene.views)
    for i, (img, dep) in enumerate(zip(scene.images, scene.depths)):
        Image.fromarray(np.round(img * 255.0).astype(np.uint8)).save(path / "images" / f"{i:03d}.png")
        write_pfm(path / "depth" / f"{i:03d}.pfm", dep)


def load_scene(path) -> Scene:
    path = Path(path)
    views = load_cameras(path / "cameras.json")
    images, depths = [], []
    for i in range(len(views)):
        img_path = path / "images" / f"{i:03d}.png"
        if not img_path.exists():
            raise FileNotFoundError(f"scene at {path} is missing {img_path.name}")
        images.append(np.asarray(Image.open(img_path), dtype=np.float64) / 255.0)
        depths.append(read_pfm(path / "depth" / f"{i:03d}.pfm"))
    return Scene(views=views, images=images, depths=depths, name=path.name)


@dataclass
class BurstSample:
    """One training or evaluation example assembled from a scene.

    For the denoising task the target view is one of the noisy inputs; for
    novel view synthesis it is a held-out view. The target image is always
    clean.
    """

    task: str
    input_views: list[CameraView]
    noisy_images: np.ndarray   # (V, H, W, 3) sRGB in [0, 1]
    clean_images: np.ndarray   # (V, H, W, 3)
    target_view: CameraView
    target_image: np.ndarray   # (H, W, 3)
    target_depth: np.ndarray   # (H, W) float32
    noise: NoiseParams
    input_indices: list[int]
    target_index: int

    def __post_init__(self):
        if self.task not in ("denoise", "nvs"):
            raise ValueError(f"unknown task {self.task!r}")
        inside = self.target_index in self.input_indices
        if self.task == "denoise" and not inside:
            raise ValueError("denoise target must be one of the input views")
        if self.task == "nvs" and inside:
            raise ValueError("nvs target must be a held-out view")
        if self.noisy_images.shape != self.clean_images.shape:
            raise ValueError("noisy and clean stacks must match")
        if self.noisy_images.shape[0] != len(self.input_views):
            raise ValueError("one image per input view required")

    @property
    def num_inputs(self) -> int:
        return len(self.input_views)


def make_burst(scene: Scene, num_inputs: int, noise: NoiseParams, seed: int,
               task: str = "denoise", wb_gains=(1.0, 1.0, 1.0),
               min_baseline: float = 0.0,
               max_baseline: float = math.inf) -> BurstSample:
    """Draw an input subset, add per-frame noise, and pick a target view.

    The subset is a prefix of one seed-determined permutation, so bursts with
    smaller num_inputs are nested inside larger ones for the same seed.

    ``min_baseline``/``max_baseline`` bound the camera-center distance
    between any pair of selected views (inputs and target alike), skipping
    permutation entries that would violate the bound. The defaults accept
    everything, which keeps the selection exactly the permutation prefix.
    """
    if task not in ("denoise", "nvs"):
        raise ValueError(f"unknown task {task!r}")
    if num_inputs < 1 or num_inputs > len(scene):
        raise ValueError(f"num_inputs {num_inputs} out of range for {len(scene)} views")
    if task == "nvs" and num_inputs >= len(scene):
        raise ValueError("nvs needs at least one held-out view")

    rng = derive_rng(seed, "burst")
    perm = rng.permutation(len(scene))
    needed = num_inputs + (1 if task == "nvs" else 0)
    if min_baseline > 0.0 or math.isfinite(max_baseline):
        centers = [v.translation.numpy() for v in scene.views]
        accepted: list[int] = []
        for idx in (int(i) for i in perm):
            gaps = [float(np.linalg.norm(centers[idx] - centers[j]))
                    for j in accepted]
            if all(min_baseline <= g <= max_baseline for g in gaps):
                accepted.append(idx)
        if len(accepted) < needed:
            raise ValueError(
                f"baseline filter [{min_baseline}, {max_baseline}] leaves "
                f"{len(accepted)} views, need {needed}")
    else:
        accepted = [int(i) for i in perm]

    input_indices = accepted[:num_inputs]
    if task == "denoise":
        target_index = input_indices[int(rng.integers(num_inputs))]
    else:
        target_index = accepted[num_inputs]

    clean = np.stack([scene.images[i] for i in input_indices])
    noisy = np.empty_like(clean)
    for k in range(num_inputs):
        lin = linearize(clean[k], wb_gains)
        noisy_lin = apply_noise(lin, noise, derive_seed(seed, "noise", k))
        noisy[k] = delinearize(noisy_lin, wb_gains)

    return BurstSample(
        task=task,
        input_views=[scene.views[i] for i in input_indices],
        noisy_images=noisy,
        clean_images=clean,
        target_view=scene.views[target_index],
        target_image=scene.images[target_index],
        target_depth=scene.depths[target_index],
        noise=noise,
        input_indices=input_indices,
        target_index=target_index,
    )
