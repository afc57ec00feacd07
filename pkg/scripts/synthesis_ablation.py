"""Does training-time 2D error synthesis help on corrupted test inputs?

Trains the full pipeline twice from the same seed, once with synthesis
and once without, then evaluates both on a held-out split whose 2D
inputs are corrupted by the same error model. The synthesis-trained run
should win; by how much depends on the error magnitudes.

Usage:
    python scripts/synthesis_ablation.py --out /tmp/ablation [--seed 7]
"""

import argparse
from pathlib import Path

from meshlift.config import resolve_config
from meshlift.data import generate_synthetic_dataset
from meshlift.evaluate import run_evaluation
from meshlift.train import train_full, train_posenet

TEST_SEED_OFFSET = 7001


def train_variant(cfg, samples, out):
    out.mkdir(parents=True, exist_ok=True)
    train_posenet(cfg, samples, out_dir=out)
    result = train_full(cfg, samples, out / "posenet.ckpt", out_dir=out,
                        max_iterations=2000)
    return result


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--test-samples", type=int, default=32)
    args = ap.parse_args()

    out = Path(args.out)
    variants = {
        "with_synthesis": resolve_config("desk", overrides={"seed": args.seed}),
        "no_synthesis": resolve_config("desk", overrides={
            "seed": args.seed, "synth": {"enabled": False}}),
    }
    cfg0 = variants["with_synthesis"]
    template, train_set = generate_synthetic_dataset(
        cfg0.template, args.samples, seed=cfg0.seed)
    _, test_set = generate_synthetic_dataset(
        cfg0.template, args.test_samples, seed=cfg0.seed + TEST_SEED_OFFSET)

    results = {}
    for name, cfg in variants.items():
        print(f"training {name} ...")
        trained = train_variant(cfg, train_set, out / name)
        # both arms face the same corrupted inputs at test time
        r = run_evaluation(cfg0, template, trained.posenet, trained.meshnet,
                           test_set, input_mode="synth")
        results[name] = r["mpjpe_mm"]
        print(f"  corrupted-input test MPJPE: {r['mpjpe_mm']:.2f} mm")

    delta = results["no_synthesis"] - results["with_synthesis"]
    verdict = "helps" if delta > 0 else "does not help"
    print(f"error synthesis {verdict}: {results['with_synthesis']:.2f}"
          f" vs {results['no_synthesis']:.2f} mm ({delta:+.2f})")


if __name__ == "__main__":
    main()
