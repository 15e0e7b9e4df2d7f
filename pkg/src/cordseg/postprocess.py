"""From probability map to counted regions and a screening verdict.

Binarize, close small gaps with 3x3 morphology, label connected
components, drop speckle below a minimum area, and compare the surviving
region count against the decision threshold (strictly greater means
positive).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

POSITIVE = "positive"
NEGATIVE = "negative"

DEFAULT_THRESHOLD = 10
DEFAULT_MIN_AREA = 30


@dataclass(frozen=True)
class Region:
    id: int
    area: int
    bbox: tuple[int, int, int, int]  # x, y, w, h
    centroid: tuple[float, float]  # x, y
    included: bool = True


@dataclass
class LabeledRegions:
    labels: np.ndarray  # int32 (h, w), 0 = background
    regions: list[Region]

    @property
    def included_count(self) -> int:
        return sum(1 for r in self.regions if r.included)


@dataclass(frozen=True)
class Decision:
    cord_count: int
    threshold: int
    verdict: str


def binarize(prob_map: np.ndarray, cut: float = 0.5) -> np.ndarray:
    """Pixel is foreground iff probability >= cut."""
    return np.asarray(prob_map) >= cut


def _shift_or(padded: np.ndarray) -> np.ndarray:
    out = padded[1:-1, 1:-1].copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy or dx:
                out |= padded[1 + dy : padded.shape[0] - 1 + dy, 1 + dx : padded.shape[1] - 1 + dx]
    return out


def _shift_and(padded: np.ndarray) -> np.ndarray:
    out = padded[1:-1, 1:-1].copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy or dx:
                out &= padded[1 + dy : padded.shape[0] - 1 + dy, 1 + dx : padded.shape[1] - 1 + dx]
    return out


def dilate(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """Minkowski dilation by a 3x3 square, `iterations` times."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    m = np.asarray(mask, dtype=bool)
    for _ in range(iterations):
        m = _shift_or(np.pad(m, 1, constant_values=False))
    return m


def erode(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """Minkowski erosion by a 3x3 square; outside the image counts as background."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    m = np.asarray(mask, dtype=bool)
    for _ in range(iterations):
        m = _shift_and(np.pad(m, 1, constant_values=False))
    return m


def close(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """Dilate then erode, each `iterations` times; fuses nearby fragments."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    return erode(dilate(mask, iterations), iterations)


def connected_components(mask: np.ndarray, connectivity: int = 8) -> LabeledRegions:
    """Label maximal foreground components 1..K in row-major first-encounter order.

    Uses run-length union-find: foreground runs per row are merged across
    neighbouring rows, so cost scales with the number of runs rather than
    pixels.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    labels = np.zeros((h, w), dtype=np.int32)

    edged = np.zeros((h, w + 2), dtype=np.int8)
    edged[:, 1:-1] = m
    d = np.diff(edged, axis=1)
    sy, sx = np.nonzero(d == 1)  # run starts, inclusive
    _, ex = np.nonzero(d == -1)  # run ends, exclusive (same row order)
    n_runs = len(sy)
    if n_runs == 0:
        return LabeledRegions(labels, [])

    parent = list(range(n_runs))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i: int, j: int) -> None:
        ri, rj = find(i), find(j)
        if ri != rj:
            if ri < rj:
                parent[rj] = ri
            else:
                parent[ri] = rj

    row_bounds = np.searchsorted(sy, np.arange(h + 1))
    slack = 1 if connectivity == 8 else 0
    for y in range(1, h):
        a, a_end = row_bounds[y - 1], row_bounds[y]
        b, b_end = row_bounds[y], row_bounds[y + 1]
        while a < a_end and b < b_end:
            if sx[a] < ex[b] + slack and sx[b] < ex[a] + slack:
                union(a, b)
            if ex[a] <= ex[b]:
                a += 1
            else:
                b += 1

    # components numbered by their first run in row-major order
    run_label = np.empty(n_runs, dtype=np.int32)
    root_to_label: dict[int, int] = {}
    for r in range(n_runs):
        root = find(r)
        if root not in root_to_label:
            root_to_label[root] = len(root_to_label) + 1
        run_label[r] = root_to_label[root]
    n_regions = len(root_to_label)

    lengths = ex - sx
    flat_starts = sy.astype(np.int64) * w + sx
    offsets = np.arange(int(lengths.sum())) - np.repeat(
        np.cumsum(lengths) - lengths, lengths
    )
    labels.ravel()[np.repeat(flat_starts, lengths) + offsets] = np.repeat(
        run_label, lengths
    )

    area = np.zeros(n_regions + 1, dtype=np.int64)
    sum_x = np.zeros(n_regions + 1, dtype=np.float64)
    sum_y = np.zeros(n_regions + 1, dtype=np.float64)
    min_x = np.full(n_regions + 1, w, dtype=np.int64)
    max_x = np.full(n_regions + 1, -1, dtype=np.int64)
    min_y = np.full(n_regions + 1, h, dtype=np.int64)
    max_y = np.full(n_regions + 1, -1, dtype=np.int64)
    np.add.at(area, run_label, lengths)
    np.add.at(sum_x, run_label, (sx + ex - 1) * lengths / 2.0)
    np.add.at(sum_y, run_label, sy * lengths)
    np.minimum.at(min_x, run_label, sx)
    np.maximum.at(max_x, run_label, ex - 1)
    np.minimum.at(min_y, run_label, sy)
    np.maximum.at(max_y, run_label, sy)

    regions = [
        Region(
            id=k,
            area=int(area[k]),
            bbox=(
                int(min_x[k]),
                int(min_y[k]),
                int(max_x[k] - min_x[k] + 1),
                int(max_y[k] - min_y[k] + 1),
            ),
            centroid=(float(sum_x[k] / area[k]), float(sum_y[k] / area[k])),
        )
        for k in range(1, n_regions + 1)
    ]
    return LabeledRegions(labels, regions)


def filter_regions(labeled: LabeledRegions, min_area: int) -> LabeledRegions:
    """Mark regions smaller than min_area as excluded; the label map is untouched."""
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    regions = [replace(r, included=r.area >= min_area) for r in labeled.regions]
    return LabeledRegions(labeled.labels, regions)


def decide_count(count: int, threshold: int = DEFAULT_THRESHOLD) -> Decision:
    """Positive iff count is strictly greater than the threshold."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return Decision(
        cord_count=count,
        threshold=threshold,
        verdict=POSITIVE if count > threshold else NEGATIVE,
    )


def decide(
    regions: LabeledRegions | Iterable[Region], threshold: int = DEFAULT_THRESHOLD
) -> Decision:
    """Count included regions and apply the strict > threshold rule."""
    if isinstance(regions, LabeledRegions):
        count = regions.included_count
    else:
        count = sum(1 for r in regions if r.included)
    return decide_count(count, threshold)
