"""Training loop: deterministic data draws, warm-up gated consistency, and
bit-exact resumable state.

Determinism contract: every batch is a pure function of (seed, iteration),
the model consumes no RNG after construction, and Adam is stateful but
RNG-free. Two runs with the same config produce byte-identical metric logs,
and a run resumed from any checkpoint continues exactly as the uninterrupted
run would have. Metric rows carry no timestamps for that reason.

The consistency term activates at iteration ceil(fraction * total): before
that boundary the clean branch never executes, so a run with the term
enabled is bit-identical to one with it disabled up to the boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .cameras import rays_for_view
from .config import ExperimentConfig, config_from_dict, config_to_dict, save_config
from .losses import total_loss
from .model import GaussianRegressor
from .noise import sample_train_noise
from .renderer import render
from .scenes import BurstSample, Scene, generate_synthetic_scene, make_burst
from .seeding import derive_rng, derive_seed


class TrainingDiverged(RuntimeError):
    """Raised before the optimizer step when the loss stops being finite."""


def consistency_boundary(total_iters: int, warmup_fraction: float) -> int:
    # 0.28 * 5000 is 1400.0000000000002 in float64; the epsilon keeps exact
    # products from ceiling up to the next integer.
    return math.ceil(warmup_fraction * total_iters - 1e-6)


def lr_at(iteration: int, cfg) -> float:
    """Linear warmup then cosine decay to lr * lr_final_fraction."""
    warm = min(cfg.lr_warmup_iters, cfg.total_iters)
    if warm > 0 and iteration < warm:
        return cfg.lr * (iteration + 1) / warm
    lo = cfg.lr * cfg.lr_final_fraction
    span = max(cfg.total_iters - warm, 1)
    t = (iteration - warm) / span
    return lo + 0.5 * (cfg.lr - lo) * (1 + math.cos(math.pi * t))


class SyntheticBurstSource:
    """Iteration-indexed burst sampler over a fixed pool of scenes."""

    def __init__(self, config: ExperimentConfig):
        cfg = config.train
        self.config = config
        self.scenes: list[Scene] = [
            generate_synthetic_scene(config.scene, derive_seed(cfg.seed, "train-scene", i))
            for i in range(cfg.num_train_scenes)
        ]

    def sample(self, iteration: int) -> BurstSample:
        cfg = self.config.train
        rng = derive_rng(cfg.seed, "step", iteration)
        scene = self.scenes[int(rng.integers(len(self.scenes)))]
        task = "denoise" if rng.uniform() < cfg.task_mix else "nvs"
        noise = sample_train_noise(self.config.noise_window,
                                   derive_seed(cfg.seed, "noise-level", iteration))
        return make_burst(scene, cfg.num_inputs, noise,
                          derive_seed(cfg.seed, "burst", iteration), task)


@dataclass
class TrainState:
    config: ExperimentConfig
    model: GaussianRegressor
    optimizer: torch.optim.Adam
    iteration: int = 0
    clean_branch_calls: int = 0
    history: list[dict] = field(default_factory=list)

    @property
    def consistency_boundary(self) -> int:
        cfg = self.config.train
        return consistency_boundary(cfg.total_iters, cfg.consistency_warmup_fraction)

    def consistency_active(self, iteration: int) -> bool:
        return self.config.train.consistency_enabled and iteration >= self.consistency_boundary


def init_state(config: ExperimentConfig) -> TrainState:
    torch.manual_seed(derive_seed(config.train.seed, "model-init"))
    model = GaussianRegressor(config.model)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.train.lr,
                                 betas=config.train.betas, eps=config.train.adam_eps)
    return TrainState(config=config, model=model, optimizer=optimizer)


def _burst_tensors(burst: BurstSample, noisy: bool):
    images = burst.noisy_images if noisy else burst.clean_images
    rays = [rays_for_view(v) for v in burst.input_views]
    return torch.tensor(images, dtype=torch.float32), rays


def train_step(state: TrainState, burst: BurstSample) -> dict:
    """One optimization step; returns the metric row for the log."""
    cfg = state.config
    it = state.iteration
    lr = lr_at(it, cfg.train)
    for group in state.optimizer.param_groups:
        group["lr"] = lr

    images, rays = _burst_tensors(burst, noisy=True)
    cloud = state.model(images, rays)
    out = render(cloud, burst.target_view, cfg.render)
    target = torch.tensor(burst.target_image, dtype=torch.float32)

    active = state.consistency_active(it)
    guidance = None
    if active:
        clean_images, clean_rays = _burst_tensors(burst, noisy=False)
        guidance = state.model.predict_guidance(clean_images, clean_rays)
        state.clean_branch_calls += 1

    report = total_loss(out.color, target, pred_cloud=cloud, guidance_cloud=guidance,
                        weights=cfg.loss_weights, consistency_active=active)
    if not torch.isfinite(report.total):
        raise TrainingDiverged(
            f"non-finite loss at iteration {it}: {report.scalars()} "
            f"(task {burst.task}, noise {burst.noise}); state left unstepped")

    state.optimizer.zero_grad()
    report.total.backward()
    if cfg.train.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(state.model.parameters(), cfg.train.grad_clip)
    state.optimizer.step()
    state.iteration = it + 1

    row = {"iteration": it, "lr": lr, "task": burst.task, "num_pairs": out.num_pairs}
    row.update(report.scalars())
    return row


def save_checkpoint(state: TrainState, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "config": config_to_dict(state.config),
        "model": state.model.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "iteration": state.iteration,
        "clean_branch_calls": state.clean_branch_calls,
    }, path)


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = torch.load(path, weights_only=False)
    config = config_from_dict(blob["config"])
    state = init_state(config)
    state.model.load_state_dict(blob["model"])
    state.optimizer.load_state_dict(blob["optimizer"])
    state.iteration = blob["iteration"]
    state.clean_branch_calls = blob["clean_branch_calls"]
    return state


def train(config: ExperimentConfig, out_dir, *, state: TrainState | None = None,
          source: SyntheticBurstSource | None = None) -> TrainState:
    """Run (or continue) training to total_iters, logging and checkpointing.

    Pass a state loaded from a checkpoint to resume; the log file is appended
    and the combined rows match an uninterrupted run exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if state is None:
        state = init_state(config)
    if source is None:
        source = SyntheticBurstSource(config)

    save_config(config, out_dir / "config.yaml")

    cfg = config.train
    log_path = out_dir / "metrics.jsonl"
    with open(log_path, "a") as log:
        while state.iteration < cfg.total_iters:
            it = state.iteration
            burst = source.sample(it)
            row = train_step(state, burst)
            if it % cfg.log_every == 0 or it == cfg.total_iters - 1:
                state.history.append(row)
                log.write(json.dumps(row, sort_keys=True) + "\n")
                log.flush()
            if cfg.checkpoint_every > 0 and state.iteration % cfg.checkpoint_every == 0 \
                    and state.iteration < cfg.total_iters:
                save_checkpoint(state, out_dir / f"checkpoint_{state.iteration:07d}.pt")
    save_checkpoint(state, out_dir / "checkpoint_final.pt")
    return state
