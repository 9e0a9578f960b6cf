#!/usr/bin/env python3
"""Train full and baseline desk-recipe models over several seeds, evaluate
both at one gain, and print the ablation table.

The full model trains every loss term; the baseline keeps only the
photometric and perceptual terms. Runs land in --out/<variant>_s<seed>/ and
are reused if a finished checkpoint is already there.
"""

import argparse
import json
from pathlib import Path

import numpy as np
import torch

from burstsplat.config import apply_overrides, desk_config
from burstsplat.evaluation import eval_scenes, evaluate
from burstsplat.training import load_checkpoint, train


def run_one(variant: str, seed: int, args) -> Path:
    out = Path(args.out) / f"{variant}_s{seed}"
    final = out / "checkpoint_final.pt"
    if final.exists():
        print(f"{out}: reusing finished run")
        return final
    cfg = desk_config(full=variant == "full", seed=seed)
    if args.iters:
        cfg = apply_overrides(cfg, [f"train.total_iters={args.iters}"])
    print(f"{out}: training {cfg.train.total_iters} iterations")
    train(cfg, out)
    return final


def main():
    parser = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", default="runs/ablation", help="run directory root")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--gain", type=float, default=8.0)
    parser.add_argument("--iters", type=int, default=None,
                        help="override total iterations (default: recipe value)")
    args = parser.parse_args()

    torch.set_num_threads(max(1, torch.get_num_threads()))
    scenes = eval_scenes(desk_config())
    table = {}
    for variant in ("full", "base"):
        rows = []
        for seed in args.seeds:
            ckpt = run_one(variant, seed, args)
            state = load_checkpoint(ckpt)
            report = evaluate(state.model, state.config, gain=args.gain,
                              scenes=scenes)
            rows.append(report)
            print(f"  {variant} s{seed}: psnr {report.psnr:.3f}"
                  f" ssim {report.ssim:.4f} depth {report.depth_abs_rel:.4f}")
        table[variant] = {
            "psnr": float(np.mean([r.psnr for r in rows])),
            "ssim": float(np.mean([r.ssim for r in rows])),
            "depth_abs_rel": float(np.mean([r.depth_abs_rel for r in rows])),
        }

    full, base = table["full"], table["base"]
    summary = {
        "gain": args.gain,
        "seeds": args.seeds,
        "full": full,
        "base": base,
        "psnr_delta_db": full["psnr"] - base["psnr"],
        "depth_reduction": 1.0 - full["depth_abs_rel"] / base["depth_abs_rel"],
    }
    out_path = Path(args.out) / "ablation.json"
    out_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"\nmean over seeds {args.seeds} at gain {args.gain:g}:")
    print(f"  full: psnr {full['psnr']:.3f} ssim {full['ssim']:.4f}"
          f" depth {full['depth_abs_rel']:.4f}")
    print(f"  base: psnr {base['psnr']:.3f} ssim {base['ssim']:.4f}"
          f" depth {base['depth_abs_rel']:.4f}")
    print(f"  psnr delta {summary['psnr_delta_db']:+.3f} dB,"
          f" depth reduction {summary['depth_reduction']*100:+.1f}%")
    print(f"wrote {out_path}")


if __name__ == "__main__":
    main()
