"""Command-line surface over the pipeline: scene generation, noise
synthesis, training, inference, evaluation, benchmarking, spectrum export.

Exit codes: 0 success, 1 usage error, 2 config or input validation (missing
files included), 3 runtime failure. Every failure prints a one-line
diagnostic to stderr. All commands are deterministic under fixed --seed and
config.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .cameras import load_cameras, rays_for_view, save_cameras
from .config import ExperimentConfig, apply_overrides, desk_config, load_config
from .evaluation import (
    bench_fps,
    export_spectrum,
    gain_sweep,
    write_sweep_csv,
    write_sweep_json,
)
from .noise import NoiseParams, apply_noise, delinearize, gain_to_sigmas, linearize
from .renderer import render
from .scenes import generate_synthetic_scene, save_scene, write_pfm
from .seeding import derive_seed
from .training import load_checkpoint, train


def _save_png(path, image: np.ndarray) -> None:
    arr = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _load_burst_dir(path) -> tuple[list, np.ndarray]:
    """Read a burst (or scene) directory: cameras.json + images/NNN.png."""
    path = Path(path)
    cams = path / "cameras.json"
    if not cams.exists():
        raise FileNotFoundError(f"burst directory {path} is missing cameras.json")
    views = load_cameras(cams)
    images = []
    for i in range(len(views)):
        img_path = path / "images" / f"{i:03d}.png"
        if not img_path.exists():
            raise FileNotFoundError(f"burst at {path} is missing {img_path.name}")
        images.append(np.asarray(Image.open(img_path), dtype=np.float64) / 255.0)
    return views, np.stack(images)


def _resolve_config(args, base: ExperimentConfig) -> ExperimentConfig:
    """--config replaces the base; --seed and --set are applied on top."""
    cfg = load_config(args.config) if args.config else base
    if getattr(args, "seed", None) is not None:
        cfg = apply_overrides(cfg, [f"train.seed={args.seed}",
                                    f"eval.seed={args.seed}"])
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    return cfg


def _noise_for_gain(cfg: ExperimentConfig, gain: float) -> NoiseParams:
    if gain == 0:
        return NoiseParams(0.0, 0.0, gain=0.0)
    return gain_to_sigmas(cfg.gain_curve, gain)


def cmd_gen_scenes(args) -> int:
    cfg = _resolve_config(args, desk_config())
    seed = args.seed if args.seed is not None else cfg.train.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(args.count):
        scene = generate_synthetic_scene(cfg.scene, derive_seed(seed, "cli-scene", i),
                                         name=f"scene_{i:03d}")
        save_scene(scene, out / scene.name)
        names.append(scene.name)
    print(f"wrote {len(names)} scenes under {out}")
    return 0


def cmd_add_noise(args) -> int:
    cfg = _resolve_config(args, desk_config())
    seed = args.seed if args.seed is not None else cfg.train.seed
    views, images = _load_burst_dir(args.scene)
    params = _noise_for_gain(cfg, args.gain)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    save_cameras(out / "cameras.json", views)
    for k, img in enumerate(images):
        noisy = delinearize(apply_noise(linearize(img), params,
                                        derive_seed(seed, "noise", k)))
        _save_png(out / "images" / f"{k:03d}.png", noisy)
    print(f"wrote {len(views)} noisy frames at gain {args.gain:g} to {out}")
    return 0


def cmd_train(args) -> int:
    if args.resume:
        state = load_checkpoint(args.resume)
        cfg = state.config
    else:
        state = None
        cfg = _resolve_config(args, desk_config())
    state = train(cfg, args.out, state=state)
    last = state.history[-1] if state.history else {}
    print(f"trained to iteration {state.iteration}"
          f" (total loss {last.get('total', float('nan')):.5f});"
          f" artifacts in {args.out}")
    return 0


def _infer(args, task: str) -> int:
    state = load_checkpoint(args.ckpt)
    cfg = _resolve_config(args, state.config)
    views, images = _load_burst_dir(args.burst)

    default_target = 0 if task == "denoise" else len(views) - 1
    target = args.target if args.target is not None else default_target
    if not 0 <= target < len(views):
        raise ValueError(f"target view {target} out of range for {len(views)} views")
    if task == "denoise":
        input_views, input_images = views, images
    else:
        input_views = [v for i, v in enumerate(views) if i != target]
        input_images = np.stack([im for i, im in enumerate(images) if i != target])
        if not input_views:
            raise ValueError("novel view synthesis needs at least two views")

    tensor = torch.tensor(input_images, dtype=torch.float32)
    rays = [rays_for_view(v) for v in input_views]
    with torch.no_grad():
        cloud = state.model(tensor, rays)
        out = render(cloud, views[target], cfg.render)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = "denoised.png" if task == "denoise" else "nvs.png"
    _save_png(out_dir / name, out.color.numpy())
    write_pfm(out_dir / "depth.pfm", out.depth.numpy().astype(np.float32))
    print(f"wrote {out_dir / name} and depth.pfm (target view {target})")
    return 0


def cmd_denoise(args) -> int:
    return _infer(args, "denoise")


def cmd_nvs(args) -> int:
    return _infer(args, "nvs")


def cmd_evaluate(args) -> int:
    state = load_checkpoint(args.ckpt)
    cfg = _resolve_config(args, state.config)
    sweep = gain_sweep(state.model, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_json(sweep, out / "report.json")
    write_sweep_csv(sweep, out / "per_scene.csv")
    for rep in sweep.reports:
        print(f"gain {rep.gain:g}: psnr {rep.psnr:.3f} ssim {rep.ssim:.4f}"
              f" depth_abs_rel {rep.depth_abs_rel:.4f}")
    return 0


def cmd_bench(args) -> int:
    state = load_checkpoint(args.ckpt)
    cfg = _resolve_config(args, state.config)
    result = bench_fps(state.model, cfg, iters=args.iters)
    line = json.dumps(result, sort_keys=True)
    print(line)
    if args.out:
        Path(args.out).write_text(line + "\n")
    return 0


def cmd_spectra(args) -> int:
    path = Path(args.image)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    image = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    spec = export_spectrum(image, args.channel)
    Image.fromarray(spec, mode="L").save(args.out)
    print(f"wrote {args.out}")
    return 0


def _add_common(sub, out_help: str):
    sub.add_argument("--config", default=None, help="yaml config file")
    sub.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                     help="dotted-path config override, repeatable")
    sub.add_argument("--seed", type=int, default=None,
                     help="override train and eval seeds")
    sub.add_argument("--out", required=True, help=out_help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="burstsplat",
        description="burst denoising and novel view synthesis with "
                    "per-pixel Gaussians")
    commands = parser.add_subparsers(dest="command", metavar="command")
    fmt = argparse.ArgumentDefaultsHelpFormatter

    sub = commands.add_parser("gen-scenes", formatter_class=fmt,
                              help="write synthetic scene directories")
    sub.add_argument("--count", type=int, default=4, help="number of scenes")
    _add_common(sub, "output directory for scene folders")
    sub.set_defaults(func=cmd_gen_scenes)

    sub = commands.add_parser("add-noise", formatter_class=fmt,
                              help="write a noisy burst for a scene")
    sub.add_argument("--scene", required=True, help="scene directory")
    sub.add_argument("--gain", type=float, default=8.0, help="gain level")
    _add_common(sub, "output burst directory")
    sub.set_defaults(func=cmd_add_noise)

    sub = commands.add_parser("train", formatter_class=fmt,
                              help="train a model")
    sub.add_argument("--resume", default=None,
                     help="checkpoint to continue from (uses its config)")
    _add_common(sub, "run directory for logs and checkpoints")
    sub.set_defaults(func=cmd_train)

    for name, help_text in (("denoise", "render a denoised input view"),
                            ("nvs", "render a held-out view")):
        sub = commands.add_parser(name, formatter_class=fmt, help=help_text)
        sub.add_argument("--ckpt", required=True, help="model checkpoint")
        sub.add_argument("--burst", required=True, help="burst directory")
        sub.add_argument("--target", type=int, default=None,
                         help="target view index (default: first for denoise,"
                              " last for nvs)")
        _add_common(sub, "output directory")
        sub.set_defaults(func=cmd_denoise if name == "denoise" else cmd_nvs)

    sub = commands.add_parser("evaluate", formatter_class=fmt,
                              help="run the gain sweep on held-out scenes")
    sub.add_argument("--ckpt", required=True, help="model checkpoint")
    _add_common(sub, "output directory for report.json and per_scene.csv")
    sub.set_defaults(func=cmd_evaluate)

    sub = commands.add_parser("bench", formatter_class=fmt,
                              help="measure predict+render throughput")
    sub.add_argument("--ckpt", required=True, help="model checkpoint")
    sub.add_argument("--iters", type=int, default=10, help="timing repeats")
    sub.add_argument("--config", default=None, help="yaml config file")
    sub.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                     help="dotted-path config override, repeatable")
    sub.add_argument("--seed", type=int, default=None,
                     help="override train and eval seeds")
    sub.add_argument("--out", default=None, help="optional json output file")
    sub.set_defaults(func=cmd_bench)

    sub = commands.add_parser("spectra", formatter_class=fmt,
                              help="export a log-magnitude spectrum image")
    sub.add_argument("--image", required=True, help="input png")
    sub.add_argument("--channel", type=int, default=None,
                     help="channel index (default: channel mean)")
    sub.add_argument("--out", required=True, help="output grayscale png")
    sub.set_defaults(func=cmd_spectra)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
