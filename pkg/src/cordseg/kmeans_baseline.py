"""Intensity k-means segmentation, the non-learned baseline.

Lloyd iterations run on the 256-bin intensity histogram, which is exact
for 8-bit images (pixels sharing a value always share a cluster) and
independent of image size. The sparser cluster becomes foreground, since
cords cover a small fraction of the image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateInputError(ValueError):
    """Image has fewer distinct intensities than requested clusters."""


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k,) float64, ascending
    assignments: np.ndarray  # (h, w) int, cluster index per pixel
    iterations: int
    converged: bool
    populations: np.ndarray  # (k,) pixel counts
    variance_history: list[float]  # within-cluster variance after each iteration


def quantile_init(image: np.ndarray, k: int) -> np.ndarray:
    """Deterministic start: k evenly spaced quantiles of the intensity multiset."""
    values = np.asarray(image, dtype=np.float64).ravel()
    unique = np.unique(values)
    if len(unique) < k:
        raise DegenerateInputError(
            f"{len(unique)} distinct intensities cannot seed {k} clusters"
        )
    init = np.quantile(values, [(i + 0.5) / k for i in range(k)])
    if len(np.unique(init)) < k:
        # heavy-tailed histograms can collapse quantiles; spread over the
        # distinct values instead
        picks = np.round(np.linspace(0, len(unique) - 1, k)).astype(int)
        init = unique[picks]
    return np.sort(init)


def lloyd(image: np.ndarray, k: int = 2, max_iters: int = 50, seed: int = 0) -> KMeansResult:
    """Cluster pixel intensities; stops when assignments stabilize."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    img = np.asarray(image)
    if img.size == 0:
        raise ValueError("image is empty")
    flat = img.astype(np.int64).ravel()
    counts = np.bincount(flat, minlength=256).astype(np.float64)
    values = np.arange(counts.size, dtype=np.float64)
    present = counts > 0

    centroids = quantile_init(img, k)
    rng = np.random.default_rng(seed)
    assign = np.full(counts.size, -1, dtype=np.int64)
    iterations = 0
    converged = False
    history: list[float] = []
    for _ in range(max_iters):
        iterations += 1
        dist = np.abs(values[:, None] - centroids[None, :])
        new_assign = np.argmin(dist, axis=1)
        new_assign[~present] = -1
        if np.array_equal(new_assign, assign):
            converged = True
            break
        assign = new_assign
        for c in range(k):
            sel = present & (assign == c)
            weight = counts[sel].sum()
            if weight > 0:
                centroids[c] = (values[sel] * counts[sel]).sum() / weight
            else:
                # empty cluster: reseed on a random intensity present in the image
                centroids[c] = rng.choice(values[present])
        within = 0.0
        for c in range(k):
            sel = present & (assign == c)
            within += float((counts[sel] * (values[sel] - centroids[c]) ** 2).sum())
        history.append(within / counts.sum())

    order = np.argsort(centroids, kind="stable")
    centroids = centroids[order]
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    assign_sorted = np.where(assign >= 0, remap[np.clip(assign, 0, None)], -1)
    assignments = assign_sorted[flat].reshape(img.shape)
    populations = np.array(
        [counts[present & (assign_sorted == c)].sum() for c in range(k)], dtype=np.int64
    )
    return KMeansResult(
        centroids=centroids,
        assignments=assignments,
        iterations=iterations,
        converged=converged,
        populations=populations,
        variance_history=history,
    )


def kmeans_segment(
    image: np.ndarray, k: int = 2, max_iters: int = 50, seed: int = 0
) -> np.ndarray:
    """Binary mask from intensity clustering: smallest cluster is foreground.

    Population ties break toward the brighter cluster (cords are bright).
    """
    result = lloyd(image, k=k, max_iters=max_iters, seed=seed)
    smallest = int(np.min(result.populations))
    candidates = np.nonzero(result.populations == smallest)[0]
    fg = int(candidates[-1])  # centroids ascend, so last candidate is brightest
    return result.assignments == fg
