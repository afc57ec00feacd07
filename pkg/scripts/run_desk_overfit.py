"""Desk-scale overfit run: both training stages on one small synthetic set.

Sanity experiment for the full pipeline. A model that cannot memorize 64
poses with regularization off is broken somewhere, so this is the first
thing to run after touching the training loop. Error synthesis is off:
corrupting the inputs would turn a memorization check into a robustness
one.

Usage:
    python scripts/run_desk_overfit.py --out /tmp/desk_run [--seed 7]
"""

import argparse
import time
from pathlib import Path

from meshlift.config import resolve_config
from meshlift.data import generate_synthetic_dataset
from meshlift.evaluate import posenet_mpjpe, run_evaluation
from meshlift.train import train_full, train_posenet


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--max-iterations", type=int, default=2000)
    args = ap.parse_args()

    cfg = resolve_config("desk", overrides={"seed": args.seed,
                                            "synth": {"enabled": False}})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    template, samples = generate_synthetic_dataset(cfg.template, args.samples,
                                                   seed=cfg.seed)
    print(f"dataset: {args.samples} samples, {template.num_vertices} vertices,"
          f" {template.num_joints} joints")

    t0 = time.time()
    s1 = train_posenet(cfg, samples, out_dir=out)
    err1 = posenet_mpjpe(s1.posenet, samples, cfg.train.batch_size)
    print(f"stage 1: {cfg.train.stage1_epochs} epochs in {time.time()-t0:.0f}s,"
          f" train MPJPE {err1:.2f} mm")

    t1 = time.time()
    s2 = train_full(cfg, samples, out / "posenet.ckpt", out_dir=out,
                    max_iterations=args.max_iterations)
    it10 = next(r for r in s2.trace if r["iter"] == 10)["L_vertex"]
    final = s2.trace[-1]["L_vertex"]
    print(f"stage 2: {len(s2.trace)} iterations in {time.time()-t1:.0f}s,"
          f" L_vertex {it10:.0f} -> {final:.0f}"
          f" ({100.0 * final / it10:.1f}% of iteration 10)")
    if s2.dead_parameters:
        print(f"WARNING: parameters without gradient: {s2.dead_parameters}")

    report = run_evaluation(cfg, template, s2.posenet, s2.meshnet, samples,
                            input_mode="gt2d")
    print(f"train-set eval: MPJPE {report['mpjpe_mm']:.2f} mm,"
          f" MPVPE {report['mpvpe_mm']:.2f} mm")
    print(f"artifacts: {out}")


if __name__ == "__main__":
    main()
