"""Evaluate one checkpoint under each input mode.

The three modes bound each other: gt3d skips the lifter entirely (mesh
regressor ceiling), gt2d runs the real pipeline on clean detections, and
synth corrupts the 2D inputs the way training-time error synthesis does.
A healthy model shows gt3d <= gt2d <= synth.

Usage:
    python scripts/input_mode_sweep.py --checkpoint run/full.ckpt \
        --dataset run/dataset.jsonl [--seed 7]
"""

import argparse

from meshlift.config import load_config_file, resolve_config
from meshlift.evaluate import run_evaluation
from meshlift.io import load_dataset
from meshlift.train import load_models

MODES = ("gt3d", "gt2d", "synth")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--dataset", required=True)
    ap.add_argument("--config", help="config file matching the checkpoint")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--profile", default="desk", choices=("desk", "paper"))
    args = ap.parse_args()

    file_dict = load_config_file(args.config) if args.config else None
    cfg = resolve_config(args.profile, file_dict,
                         overrides={"seed": args.seed})
    template, _, _, posenet, meshnet = load_models(args.checkpoint, cfg)
    samples = load_dataset(args.dataset)

    print(f"{'input':8s} {'mpjpe_mm':>10s} {'pa_mpjpe_mm':>12s} {'mpvpe_mm':>10s}")
    for mode in MODES:
        r = run_evaluation(cfg, template, posenet, meshnet, samples,
                           input_mode=mode)
        mpvpe = f"{r['mpvpe_mm']:10.2f}" if r["mpvpe_mm"] is not None else "         -"
        print(f"{mode:8s} {r['mpjpe_mm']:10.2f} {r['pa_mpjpe_mm']:12.2f} {mpvpe}")


if __name__ == "__main__":
    main()
