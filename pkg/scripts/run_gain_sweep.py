#!/usr/bin/env python3
"""Sweep a trained checkpoint across gain levels and write the report.

Prints one line per gain and writes report.json plus per_scene.csv next to
the checkpoint (or under --out).
"""

import argparse
from pathlib import Path

from burstsplat.evaluation import gain_sweep, write_sweep_csv, write_sweep_json
from burstsplat.training import load_checkpoint


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("ckpt", help="model checkpoint")
    parser.add_argument("--out", default=None,
                        help="output directory (default: checkpoint's)")
    parser.add_argument("--task", default=None, choices=["denoise", "nvs"],
                        help="override the configured evaluation task")
    args = parser.parse_args()

    state = load_checkpoint(args.ckpt)
    out = Path(args.out) if args.out else Path(args.ckpt).parent
    out.mkdir(parents=True, exist_ok=True)

    sweep = gain_sweep(state.model, state.config, task=args.task)
    write_sweep_json(sweep, out / "report.json")
    write_sweep_csv(sweep, out / "per_scene.csv")
    for rep in sweep.reports:
        print(f"gain {rep.gain:6g}: psnr {rep.psnr:7.3f} ssim {rep.ssim:.4f}"
              f" depth_abs_rel {rep.depth_abs_rel:.4f}")
    print(f"wrote {out / 'report.json'} and {out / 'per_scene.csv'}")


if __name__ == "__main__":
    main()
