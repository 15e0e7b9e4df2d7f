#!/usr/bin/env python3
"""End-to-end desk-scale experiment: data, training, and the baseline table.

Synthesizes the 120/30 tile split plus 15 labeled full images, trains the
small network, evaluates it against the k-means baseline, and prints a
comparison table. Everything is seeded; rerunning reproduces the numbers
byte for byte.

Usage: python scripts/run_desk_experiment.py [--workdir runs/desk] [--epochs 30]
"""

import argparse
import json
import sys
import time
from pathlib import Path

from cordseg import cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", default="runs/desk")
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    work = Path(args.workdir)
    data = work / "data"
    weights = work / "desk.weights"
    t0 = time.time()

    steps = [
        ["synth", "--train", "120", "--test", "30", "--seed", str(args.seed),
         "--full", "15", "--full-width", "768", "--full-height", "512",
         "--out", str(data)],
        ["train", "--manifest", str(data / "manifest.json"),
         "--epochs", str(args.epochs), "--seed", "0", "--out", str(weights)],
        ["evaluate", "--manifest", str(data / "manifest.json"),
         "--weights", str(weights), "--tile", "64",
         "--out", str(work / "eval_unet.json")],
        ["evaluate", "--manifest", str(data / "manifest.json"),
         "--segmenter", "kmeans", "--out", str(work / "eval_kmeans.json")],
        ["evaluate", "--manifest", str(data / "full" / "manifest.json"),
         "--weights", str(weights), "--tile", "64",
         "--out", str(work / "eval_full.json")],
    ]
    for step in steps:
        print(f"\n=== cordseg {' '.join(step[:1])} ===")
        rc = cli.main(step)
        if rc != 0:
            print(f"step failed with exit code {rc}", file=sys.stderr)
            return rc

    unet_eval = json.loads((work / "eval_unet.json").read_text())
    km_eval = json.loads((work / "eval_kmeans.json").read_text())
    full_eval = json.loads((work / "eval_full.json").read_text())

    def pm(e):
        return f"{100 * e['mean_iou']:.1f} ± {100 * e['std_iou']:.1f}"

    print("\n--- segmentation on the 30-tile test split ---")
    print(f"{'APPROACH':12s}  {'IOU (%)':>12s}")
    print(f"{'K-Means':12s}  {pm(km_eval):>12s}")
    print(f"{'U-Net':12s}  {pm(unet_eval):>12s}")
    print("\n--- screening on 15 labeled full images ---")
    print(f"case accuracy: {100 * full_eval['case_accuracy']:.1f}%")
    print(f"\ntotal time {time.time() - t0:.0f}s; artifacts in {work}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
