"""Synthetic cord scenes with exact ground truth.

Each cord is a smoothed random walk thickened to a sampled width and
stamped onto the canvas. Cords keep at least 4 px of separation, so the
ground-truth count always equals the 8-connectivity component count of
the mask. The grayscale image renders cords at a foreground intensity
over a noisy background and applies a small box blur; the mask is the
exact pre-blur cord support.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import dataset_io

SEPARATION = 4  # minimum pixel distance between distinct cords


class PlacementError(RuntimeError):
    """The canvas is too small (or too crowded) for the requested cords."""


@dataclass(frozen=True)
class SynthSpec:
    width: int = 64
    height: int = 64
    n_cords: int = 2
    thickness: tuple[int, int] = (2, 4)  # inclusive px range
    length: tuple[int, int] = (12, 40)  # inclusive walk-step range
    noise_std: float = 30.0
    blur_radius: int = 1
    fg_intensity: int = 185
    bg_intensity: int = 55
    seed: int = 0

    def __post_init__(self) -> None:
        if self.thickness[0] < 1:
            raise ValueError("cord thickness must be >= 1 px")
        if not (0 <= self.bg_intensity <= 255 and 0 <= self.fg_intensity <= 255):
            raise ValueError("intensities must lie in [0, 255]")
        if self.n_cords < 0:
            raise ValueError("n_cords must be >= 0")


def _disk_offsets(thickness: int) -> np.ndarray:
    r = thickness / 2.0
    span = np.arange(-int(np.ceil(r)), int(np.ceil(r)) + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    keep = dy * dy + dx * dx <= r * r + 0.25
    return np.stack([dy[keep], dx[keep]], axis=1)


def _draw_cord(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray | None:
    h, w = spec.height, spec.width
    steps = int(rng.integers(spec.length[0], spec.length[1] + 1))
    thickness = int(rng.integers(spec.thickness[0], spec.thickness[1] + 1))
    margin = thickness + 2
    if w <= 2 * margin or h <= 2 * margin:
        return None
    y = float(rng.uniform(margin, h - margin))
    x = float(rng.uniform(margin, w - margin))
    heading = float(rng.uniform(0.0, 2.0 * np.pi))
    offsets = _disk_offsets(thickness)
    support = np.zeros((h, w), dtype=bool)
    for step in range(steps):
        cy, cx = int(round(y)), int(round(x))
        ys = np.clip(cy + offsets[:, 0], 0, h - 1)
        xs = np.clip(cx + offsets[:, 1], 0, w - 1)
        support[ys, xs] = True
        heading += float(np.clip(rng.normal(0.0, 0.3), -0.6, 0.6))
        y += np.sin(heading)
        x += np.cos(heading)
        if not (margin <= y < h - margin and margin <= x < w - margin):
            # walked off the canvas: a truncated cord would violate the
            # sampled length range, redraw instead
            return None
    return support


def _expand(mask: np.ndarray, px: int, bbox: tuple[int, int, int, int]) -> np.ndarray:
    """Chebyshev dilation by px, applied only inside the bbox neighbourhood."""
    y0, y1, x0, x1 = bbox
    h, w = mask.shape
    y0, x0 = max(0, y0 - px), max(0, x0 - px)
    y1, x1 = min(h, y1 + px), min(w, x1 + px)
    out = np.zeros_like(mask)
    region = mask[y0:y1, x0:x1]
    acc = np.pad(region, px, constant_values=False)
    view = np.zeros_like(region)
    for dy in range(-px, px + 1):
        for dx in range(-px, px + 1):
            view |= acc[
                px + dy : px + dy + region.shape[0], px + dx : px + dx + region.shape[1]
            ]
    out[y0:y1, x0:x1] = view
    return out


def _bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    return int(ys.min()), int(ys.max()) + 1, int(xs.min()), int(xs.max()) + 1


def _box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    if radius < 1:
        return img
    size = 2 * radius + 1
    padded = np.pad(img, radius, mode="edge")
    # separable box filter via prefix sums
    c = np.cumsum(padded, axis=0)
    c = np.vstack([np.zeros((1, c.shape[1])), c])
    rows = (c[size:] - c[:-size]) / size
    c = np.cumsum(rows, axis=1)
    c = np.hstack([np.zeros((c.shape[0], 1)), c])
    return (c[:, size:] - c[:, :-size]) / size


def generate_case(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, int]:
    """One scene: (grayscale uint8 image, bool cord mask, true cord count)."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    mask = np.zeros((h, w), dtype=bool)
    blocked = np.zeros((h, w), dtype=bool)
    placed = 0
    attempts = 0
    max_attempts = 200 * max(1, spec.n_cords)
    while placed < spec.n_cords:
        attempts += 1
        if attempts > max_attempts:
            raise PlacementError(
                f"placed {placed}/{spec.n_cords} cords on a {w}x{h} canvas"
            )
        cord = _draw_cord(rng, spec)
        if cord is None:
            if spec.width <= 2 * (spec.thickness[1] + 2) or spec.height <= 2 * (
                spec.thickness[1] + 2
            ):
                raise PlacementError(f"canvas {w}x{h} too small for requested cords")
            continue
        if (cord & blocked).any():
            continue
        mask |= cord
        blocked |= _expand(cord, SEPARATION, _bbox(cord))
        placed += 1

    base = np.full((h, w), float(spec.bg_intensity))
    base += rng.normal(0.0, spec.noise_std, size=(h, w))
    base[mask] = float(spec.fg_intensity)
    img = _box_blur(base, spec.blur_radius)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return img, mask, placed


def case_seed(dataset_seed: int, index: int) -> int:
    """Stable per-case seed derived from the dataset seed and case index."""
    return int(np.random.SeedSequence((dataset_seed, index)).generate_state(1)[0])


def plan_cases(
    template: SynthSpec, n_train: int, n_test: int, seed: int
) -> list[tuple[str, str, SynthSpec]]:
    """(case id, split, spec) for every case, with distinct derived seeds."""
    if n_train < 0 or n_test < 0:
        raise ValueError("split sizes must be >= 0")
    plans = []
    for i in range(n_train + n_test):
        split = "train" if i < n_train else "test"
        ordinal = i if i < n_train else i - n_train
        plans.append(
            (
                f"{split}_{ordinal:04d}",
                split,
                replace(template, seed=case_seed(seed, i)),
            )
        )
    return plans


def generate_dataset(
    template: SynthSpec,
    n_train: int,
    n_test: int,
    seed: int,
    out_dir: str | Path,
    label_threshold: int | None = None,
    cord_range: tuple[int, int] | None = None,
) -> dataset_io.DatasetManifest:
    """Write n_train + n_test cases (PGM image + mask) and their manifest.

    cord_range, when given, draws each case's cord count uniformly from the
    inclusive range instead of using the template's fixed n_cords.
    label_threshold assigns a positive/negative case label by comparing the
    true count against it (strictly greater is positive).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    count_rng = np.random.default_rng(case_seed(seed, 10**6))
    cases = []
    for case_id, split, spec in plan_cases(template, n_train, n_test, seed):
        if cord_range is not None:
            spec = replace(
                spec, n_cords=int(count_rng.integers(cord_range[0], cord_range[1] + 1))
            )
        image, mask, true_count = generate_case(spec)
        image_name = f"{case_id}.pgm"
        mask_name = f"{case_id}.mask.pgm"
        dataset_io.save_pgm(image, out / image_name)
        dataset_io.save_pgm(dataset_io.mask_to_image(mask), out / mask_name)
        label = None
        if label_threshold is not None:
            label = "positive" if true_count > label_threshold else "negative"
        cases.append(
            dataset_io.Case(
                id=case_id,
                image=image_name,
                mask=mask_name,
                split=split,
                label=label,
                true_count=true_count,
            )
        )
    manifest = dataset_io.DatasetManifest(cases=cases, root=out)
    dataset_io.save_manifest(manifest, out / "manifest.json")
    return manifest
