"""Shared bilinear interpolation helpers.

Pixel (row, col) is sampled at continuous coordinate (row, col): integer
coordinates land exactly on pixel centers. Queries outside the raster are
reported invalid rather than clamped.
"""

from __future__ import annotations

import numpy as np


def bilinear_sample(grid: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                    valid_mask: np.ndarray | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``grid`` (H x W x C) at float (rows, cols) positions.

    Returns (values, ok) where ``values`` has shape rows.shape + (C,) and
    ``ok`` flags queries whose four-neighbour footprint lies in bounds and,
    when ``valid_mask`` is given, touches only valid pixels.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        grid = grid[:, :, None]
    h, w, _ = grid.shape
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)

    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0

    ok = (r0 >= 0) & (r0 + 1 <= h - 1) & (c0 >= 0) & (c0 + 1 <= w - 1)
    # queries that sit exactly on the last row/col still have a legal footprint
    edge_r = (r0 == h - 1) & (fr == 0.0) & (c0 >= 0) & (c0 <= w - 1)
    edge_c = (c0 == w - 1) & (fc == 0.0) & (r0 >= 0) & (r0 <= h - 1)
    ok = ok | (edge_r & ((c0 + 1 <= w - 1) | (edge_c)))
    ok = ok | (edge_c & ((r0 + 1 <= h - 1) | (edge_r)))

    r0c = np.clip(r0, 0, h - 1)
    c0c = np.clip(c0, 0, w - 1)
    r1c = np.clip(r0 + 1, 0, h - 1)
    c1c = np.clip(c0 + 1, 0, w - 1)

    w00 = (1.0 - fr) * (1.0 - fc)
    w01 = (1.0 - fr) * fc
    w10 = fr * (1.0 - fc)
    w11 = fr * fc

    values = (grid[r0c, c0c] * w00[..., None] + grid[r0c, c1c] * w01[..., None]
              + grid[r1c, c0c] * w10[..., None] + grid[r1c, c1c] * w11[..., None])

    if valid_mask is not None:
        vm = np.asarray(valid_mask, dtype=bool)
        touched_ok = np.ones_like(ok)
        for rr, cc, ww in ((r0c, c0c, w00), (r0c, c1c, w01),
                           (r1c, c0c, w10), (r1c, c1c, w11)):
            touched_ok &= vm[rr, cc] | (ww == 0.0)
        ok = ok & touched_ok

    values = np.where(ok[..., None], values, np.nan)
    return values, ok
