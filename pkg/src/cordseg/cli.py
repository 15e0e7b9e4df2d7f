"""Command-line entry point wiring the whole screening pipeline together.

Subcommands: `synth` writes a synthetic dataset, `train` fits the
segmentation network, `infer` runs tile -> segment -> stitch -> count ->
decide on one full image, `evaluate` scores a test split (U-Net or the
k-means baseline), and `serve` starts the case-review HTTP service.

Exit codes are contract values: 0 ok, 2 usage, 3 io, 4 empty split,
5 model/config mismatch, 6 port in use.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from pathlib import Path

import numpy as np

from . import dataset_io, metrics, postprocess, synthdata, tiling
from .kmeans_baseline import kmeans_segment
from .postprocess import DEFAULT_MIN_AREA, DEFAULT_THRESHOLD, LabeledRegions
from .unet import (
    TrainRecord,
    UNetConfig,
    UNetWeights,
    WeightFileError,
    build,
    config_from_weights,
    forward,
    load_weights,
    save_weights,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_EMPTY_SPLIT = 4
EXIT_MODEL_MISMATCH = 5
EXIT_PORT = 6

DEFAULT_CUT = 0.5
DEFAULT_CLOSE_ITERS = 1
INFER_BATCH = 8


class EmptySplitError(RuntimeError):
    pass


class ModelMismatchError(RuntimeError):
    pass


def segment_image(
    image: np.ndarray, weights: UNetWeights, config: UNetConfig, batch: int = INFER_BATCH
) -> np.ndarray:
    """Full-image probability map: split into tiles, forward, stitch back."""
    grid, tiles = tiling.split(image, config.tile)
    probs: list[np.ndarray] = []
    for start in range(0, len(tiles), batch):
        chunk = tiles[start : start + batch]
        x = np.stack(chunk)[:, None].astype(np.float32) / 255.0
        p = forward(weights, config, x)
        probs.extend(p[i, 0] for i in range(p.shape[0]))
    return tiling.stitch(grid, probs)


def analyze_image(
    image: np.ndarray,
    weights: UNetWeights,
    config: UNetConfig,
    cut: float = DEFAULT_CUT,
    close_iterations: int = DEFAULT_CLOSE_ITERS,
    min_area: int = DEFAULT_MIN_AREA,
    threshold: int = DEFAULT_THRESHOLD,
) -> tuple[postprocess.Decision, LabeledRegions, np.ndarray]:
    """Run the counting pipeline; returns (decision, regions, closed mask)."""
    prob = segment_image(image, weights, config)
    mask = postprocess.close(postprocess.binarize(prob, cut), close_iterations)
    regions = postprocess.filter_regions(
        postprocess.connected_components(mask, connectivity=8), min_area
    )
    decision = postprocess.decide(regions, threshold)
    return decision, regions, mask


def build_report(
    case_id: str,
    image_shape: tuple[int, int],
    config: UNetConfig,
    regions: LabeledRegions,
    decision: postprocess.Decision,
    model_crc: int,
    mask_name: str,
) -> dict:
    h, w = image_shape
    grid = tiling.plan(w, h, config.tile)
    return {
        "id": case_id,
        "width": w,
        "height": h,
        "tile": config.tile,
        "grid": [grid.columns, grid.rows],
        "regions": [
            {
                "id": r.id,
                "area": r.area,
                "bbox": list(r.bbox),
                "centroid": [round(r.centroid[0], 3), round(r.centroid[1], 3)],
                "included": r.included,
            }
            for r in regions.regions
        ],
        "count": decision.cord_count,
        "threshold": decision.threshold,
        "verdict": decision.verdict,
        "model_crc": model_crc,
        "mask": mask_name,
    }


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def cmd_synth(args: argparse.Namespace) -> int:
    template = synthdata.SynthSpec(
        width=args.size,
        height=args.size,
        thickness=(args.thick_min, args.thick_max),
        length=(args.len_min, args.len_max),
        noise_std=args.noise_std,
        blur_radius=args.blur,
        fg_intensity=args.fg,
        bg_intensity=args.bg,
    )
    out = Path(args.out)
    try:
        manifest = synthdata.generate_dataset(
            template,
            args.train,
            args.test,
            seed=args.seed,
            out_dir=out,
            cord_range=(args.cords_min, args.cords_max),
        )
        if args.full > 0:
            full_template = synthdata.SynthSpec(
                width=args.full_width,
                height=args.full_height,
                thickness=(args.thick_min, args.thick_max),
                length=(args.len_min, args.len_max),
                noise_std=args.noise_std,
                blur_radius=args.blur,
                fg_intensity=args.fg,
                bg_intensity=args.bg,
            )
            full_dir = out / "full"
            synthdata.generate_dataset(
                full_template,
                0,
                args.full,
                seed=args.seed + 1,
                out_dir=full_dir,
                label_threshold=args.threshold,
                cord_range=(args.full_cords_min, args.full_cords_max),
            )
    except OSError as exc:
        print(f"error: cannot write dataset: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(manifest.cases)} cases to {out / 'manifest.json'}")
    if args.full > 0:
        print(f"wrote {args.full} labeled full images to {out / 'full' / 'manifest.json'}")
    return EXIT_OK


def _train_pairs(manifest: dataset_io.DatasetManifest) -> list[tuple[np.ndarray, np.ndarray]]:
    pairs = []
    for case in manifest.split("train"):
        if case.mask is None:
            continue
        image = dataset_io.load_pgm(manifest.image_path(case))
        mask = dataset_io.image_to_mask(dataset_io.load_pgm(manifest.mask_path(case)))
        pairs.append((image, mask))
    return pairs


def cmd_train(args: argparse.Namespace) -> int:
    manifest = dataset_io.load_manifest(args.manifest)
    pairs = _train_pairs(manifest)
    if not pairs:
        print("error: manifest has no train cases with masks", file=sys.stderr)
        return EXIT_EMPTY_SPLIT
    side = pairs[0][0].shape[0]
    config = UNetConfig(depth=args.depth, base_channels=args.base_channels, tile=side)
    weights = build(config, seed=args.seed)
    weights, records = train(
        weights, config, pairs, epochs=args.epochs, lr=args.lr, seed=args.seed
    )
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        save_weights(weights, out)
        log_path = out.with_suffix(out.suffix + ".log.json")
        _write_json(
            log_path,
            {
                "epochs": [
                    {"epoch": r.epoch, "mean_loss": r.mean_loss, "val_iou": r.val_iou}
                    for r in records
                ]
            },
        )
    except OSError as exc:
        print(f"error: cannot write weights: {exc}", file=sys.stderr)
        return EXIT_IO
    for r in records:
        print(f"epoch {r.epoch:3d}  loss {r.mean_loss:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def _load_model(weights_path: str, tile: int) -> tuple[UNetWeights, UNetConfig, int]:
    blob = Path(weights_path).read_bytes()
    crc = zlib.crc32(blob)
    weights = load_weights(weights_path)
    try:
        config = config_from_weights(weights, tile)
    except (WeightFileError, ValueError) as exc:
        raise ModelMismatchError(f"weights incompatible with tile side {tile}: {exc}")
    return weights, config, crc


def cmd_infer(args: argparse.Namespace) -> int:
    image = dataset_io.load_pgm(args.image)
    weights, config, crc = _load_model(args.weights, args.tile)
    decision, regions, mask = analyze_image(
        image,
        weights,
        config,
        cut=args.cut,
        close_iterations=args.close_iterations,
        min_area=args.min_area,
        threshold=args.threshold,
    )
    case_id = Path(args.image).stem
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        mask_name = f"{case_id}.mask.pgm"
        dataset_io.save_pgm(dataset_io.mask_to_image(mask), out_dir / mask_name)
        overlay = image.copy()
        overlay[mask] = 255
        dataset_io.save_pgm(overlay, out_dir / f"{case_id}.overlay.pgm")
        dataset_io.save_pgm(image, out_dir / f"{case_id}.image.pgm")
        report = build_report(
            case_id, image.shape, config, regions, decision, crc, mask_name
        )
        _write_json(out_dir / f"{case_id}.report.json", report)
    except OSError as exc:
        print(f"error: cannot write results: {exc}", file=sys.stderr)
        return EXIT_IO
    print(
        f"{case_id}: {decision.cord_count} cords "
        f"(threshold {decision.threshold}) -> {decision.verdict}"
    )
    return EXIT_OK


def _predict_mask(
    case: dataset_io.Case,
    image: np.ndarray,
    segmenter: str,
    weights: UNetWeights | None,
    config: UNetConfig | None,
    args: argparse.Namespace,
) -> np.ndarray:
    if segmenter == "kmeans":
        return kmeans_segment(image, seed=args.seed)
    prob = segment_image(image, weights, config)
    return postprocess.binarize(prob, args.cut)


def cmd_evaluate(args: argparse.Namespace) -> int:
    manifest = dataset_io.load_manifest(args.manifest)
    test_cases = [c for c in manifest.split("test") if c.mask is not None]
    if not test_cases:
        print("error: manifest has no test cases with masks", file=sys.stderr)
        return EXIT_EMPTY_SPLIT
    weights = config = None
    if args.segmenter == "unet":
        if not args.weights:
            print("error: --weights is required for --segmenter unet", file=sys.stderr)
            return EXIT_USAGE
        weights, config, _ = _load_model(args.weights, args.tile)

    ious, pixel_accs, case_rows = [], [], []
    decisions, labels = [], []
    both_empty = 0
    for case in test_cases:
        image = dataset_io.load_pgm(manifest.image_path(case))
        gt = dataset_io.image_to_mask(dataset_io.load_pgm(manifest.mask_path(case)))
        pred = _predict_mask(case, image, args.segmenter, weights, config, args)
        v = metrics.iou(pred, gt)
        if not pred.any() and not gt.any():
            both_empty += 1
        ious.append(v)
        pixel_accs.append(metrics.pixel_accuracy(pred, gt))
        row = {"id": case.id, "iou": round(v, 4)}
        if case.label is not None:
            closed = postprocess.close(pred, args.close_iterations)
            regions = postprocess.filter_regions(
                postprocess.connected_components(closed, 8), args.min_area
            )
            decision = postprocess.decide(regions, args.threshold)
            decisions.append(decision)
            labels.append(case.label)
            row.update(
                {
                    "count": decision.cord_count,
                    "verdict": decision.verdict,
                    "label": case.label,
                }
            )
        case_rows.append(row)

    summary = metrics.summarize(
        ious,
        decisions if labels else None,
        labels if labels else None,
        pixel_accuracies=pixel_accs,
        both_empty=both_empty,
    )
    print(f"segmenter       {args.segmenter}")
    print(f"test cases      {len(test_cases)}")
    print(f"IoU             {summary.iou_percent()}")
    print(f"pixel accuracy  {100 * summary.pixel_accuracy:.1f}")
    if summary.case_accuracy is not None:
        print(f"case accuracy   {100 * summary.case_accuracy:.1f}")
    report = {
        "segmenter": args.segmenter,
        "ious": [round(v, 6) for v in summary.ious],
        "mean_iou": round(summary.mean_iou, 6),
        "std_iou": round(summary.std_iou, 6),
        "pixel_accuracy": round(summary.pixel_accuracy, 6),
        "case_accuracy": None
        if summary.case_accuracy is None
        else round(summary.case_accuracy, 6),
        "both_empty": summary.both_empty,
        "cases": case_rows,
    }
    out = Path(args.out) if args.out else Path(args.manifest).parent / f"evaluation_{args.segmenter}.json"
    try:
        _write_json(out, report)
    except OSError as exc:
        print(f"error: cannot write report: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {out}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from . import review_service

    return review_service.serve(
        Path(args.reports), args.port, ui_dir=Path(args.ui) if args.ui else None
    )


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cordseg", description="TB cord segmentation and screening pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cord dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train", type=int, default=120)
    p.add_argument("--test", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64, help="tile side for train/test cases")
    p.add_argument("--cords-min", type=int, default=1)
    p.add_argument("--cords-max", type=int, default=4)
    p.add_argument("--thick-min", type=int, default=2)
    p.add_argument("--thick-max", type=int, default=4)
    p.add_argument("--len-min", type=int, default=12)
    p.add_argument("--len-max", type=int, default=40)
    p.add_argument("--noise-std", type=float, default=30.0)
    p.add_argument("--blur", type=int, default=1)
    p.add_argument("--fg", type=int, default=185)
    p.add_argument("--bg", type=int, default=55)
    p.add_argument("--full", type=int, default=0, help="also write labeled full images")
    p.add_argument("--full-width", type=int, default=768)
    p.add_argument("--full-height", type=int, default=512)
    p.add_argument("--full-cords-min", type=int, default=1)
    p.add_argument("--full-cords-max", type=int, default=22)
    p.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the segmentation network")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="weight file path")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="screen one full image")
    p.add_argument("image", help="input PGM image")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tile", type=int, default=256)
    p.add_argument("--cut", type=float, default=DEFAULT_CUT)
    p.add_argument("--close-iterations", type=int, default=DEFAULT_CLOSE_ITERS)
    p.add_argument("--min-area", type=int, default=DEFAULT_MIN_AREA)
    p.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score a test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights")
    p.add_argument("--segmenter", choices=["unet", "kmeans"], default="unet")
    p.add_argument("--tile", type=int, default=64)
    p.add_argument("--cut", type=float, default=DEFAULT_CUT)
    p.add_argument("--close-iterations", type=int, default=DEFAULT_CLOSE_ITERS)
    p.add_argument("--min-area", type=int, default=DEFAULT_MIN_AREA)
    p.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="evaluation report path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="start the case-review service")
    p.add_argument("--reports", required=True, help="directory of infer outputs")
    p.add_argument("--port", type=int, default=8571)
    p.add_argument("--ui", help="static UI bundle directory")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (dataset_io.PgmError, dataset_io.ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ModelMismatchError, WeightFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL_MISMATCH


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
