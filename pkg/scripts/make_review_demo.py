#!/usr/bin/env python3
"""Build a small review-service demo: three screened cases ready to serve.

Trains a quick model if no weight file is given, runs inference on three
synthetic full images, and prints the serve command.

Usage: python scripts/make_review_demo.py [--workdir runs/demo] [--weights W]
"""

import argparse
import sys
from pathlib import Path

from cordseg import cli, dataset_io


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", default="runs/demo")
    parser.add_argument("--weights", help="reuse an existing weight file")
    parser.add_argument("--epochs", type=int, default=12)
    args = parser.parse_args()

    work = Path(args.workdir)
    data = work / "data"
    rc = cli.main(
        ["synth", "--train", "40", "--test", "0", "--seed", "19",
         "--full", "3", "--full-width", "640", "--full-height", "448",
         "--full-cords-min", "6", "--full-cords-max", "16",
         "--out", str(data)]
    )
    if rc != 0:
        return rc

    weights = Path(args.weights) if args.weights else work / "demo.weights"
    if not weights.is_file():
        rc = cli.main(
            ["train", "--manifest", str(data / "manifest.json"),
             "--epochs", str(args.epochs), "--seed", "0", "--out", str(weights)]
        )
        if rc != 0:
            return rc

    reports = work / "reports"
    manifest = dataset_io.load_manifest(data / "full" / "manifest.json")
    for case in manifest.cases:
        rc = cli.main(
            ["infer", str(manifest.image_path(case)), "--weights", str(weights),
             "--tile", "64", "--out", str(reports)]
        )
        if rc != 0:
            return rc

    print("\ndemo ready. start the review service with:")
    print(f"  cordseg serve --reports {reports} --port 8571 --ui frontend/dist")
    return 0


if __name__ == "__main__":
    sys.exit(main())
