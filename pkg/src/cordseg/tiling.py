"""Split a full image into fixed-size tiles and stitch results back.

Dimensions that do not divide the tile side are padded by mirror
reflection on the right/bottom edges; stitch crops the padding away, so
split followed by stitch is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TileGrid:
    width: int
    height: int
    side: int
    columns: int
    rows: int
    pad_right: int
    pad_bottom: int
    mode: str = "reflect"

    @property
    def tile_count(self) -> int:
        return self.columns * self.rows

    def origin(self, index: int) -> tuple[int, int]:
        """(x, y) of tile `index` in row-major order."""
        i, j = divmod(index, self.columns)
        return j * self.side, i * self.side


def _reflect_indices(length: int, total: int) -> np.ndarray:
    # mirror with the edge pixel included, repeating for pads beyond length
    idx = np.arange(total) % (2 * length)
    return np.where(idx < length, idx, 2 * length - 1 - idx)


def plan(width: int, height: int, side: int) -> TileGrid:
    """Grid geometry for an image of the given size, without cutting tiles."""
    if width <= 0 or height <= 0:
        raise ValueError(f"expected positive dimensions, got {width}x{height}")
    if side < 16:
        raise ValueError(f"tile side must be >= 16, got {side}")
    columns = -(-width // side)
    rows = -(-height // side)
    return TileGrid(
        width=width,
        height=height,
        side=side,
        columns=columns,
        rows=rows,
        pad_right=columns * side - width,
        pad_bottom=rows * side - height,
    )


def split(image: np.ndarray, side: int) -> tuple[TileGrid, list[np.ndarray]]:
    """Cut image into row-major side x side tiles, reflect-padding the edges."""
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected a non-empty 2D image, got shape {image.shape}")
    h, w = image.shape
    grid = plan(w, h, side)
    rows, columns = grid.rows, grid.columns
    padded = image[np.ix_(_reflect_indices(h, rows * side), _reflect_indices(w, columns * side))]
    tiles = [
        padded[i * side : (i + 1) * side, j * side : (j + 1) * side].copy()
        for i in range(rows)
        for j in range(columns)
    ]
    return grid, tiles


def stitch(grid: TileGrid, tiles: list[np.ndarray]) -> np.ndarray:
    """Place row-major tiles at their origins and crop to the original dims."""
    if len(tiles) != grid.tile_count:
        raise ValueError(f"expected {grid.tile_count} tiles, got {len(tiles)}")
    s = grid.side
    for t in tiles:
        if t.shape != (s, s):
            raise ValueError(f"tile shape {t.shape} does not match side {s}")
    full = np.empty((grid.rows * s, grid.columns * s), dtype=tiles[0].dtype)
    for idx, t in enumerate(tiles):
        x, y = grid.origin(idx)
        full[y : y + s, x : x + s] = t
    return full[: grid.height, : grid.width].copy()
