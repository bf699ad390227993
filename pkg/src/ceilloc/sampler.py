"""Sample point selection: greedy heat-map picking and the regular-grid baseline.

Greedy selection repeatedly takes the best remaining heat-map value and damps
its neighbourhood by a fixed factor so later picks spread out. All functions
are pure: the input heat map is never mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SamplePoint:
    """Integer pixel location (x = column, y = row) plus the heat value at
    selection time."""

    x: int
    y: int
    quality: float = 0.0


@dataclass(frozen=True)
class SelectConfig:
    n_points: int
    rho: float = 0.5
    l_n: int = 10
    margin: int = 0

    def __post_init__(self):
        if self.n_points < 4:
            raise ValueError("n_points must be >= 4")
        if not (0.0 < self.rho < 1.0):
            raise ValueError("rho must be in (0, 1)")
        if self.l_n < 1:
            raise ValueError("l_n must be >= 1")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")


def _square_bounds(x: int, y: int, side: int, w: int, h: int) -> tuple[int, int, int, int]:
    # side-length square with the floor(side/2) radius convention, clipped
    r = side // 2
    x0 = max(x - r, 0)
    y0 = max(y - r, 0)
    x1 = min(x - r + side, w)
    y1 = min(y - r + side, h)
    return x0, y0, x1, y1


def suppress(hm: np.ndarray, at: SamplePoint, rho: float, l_n: int) -> np.ndarray:
    """Scale the l_n x l_n square centred at the point by rho (border-clipped).

    Returns a new array; values outside the square are preserved bit-exactly.
    """
    h, w = hm.shape
    if not (0 <= at.x < w and 0 <= at.y < h):
        raise ValueError(f"point ({at.x}, {at.y}) outside {w}x{h} heat map")
    out = hm.copy()
    x0, y0, x1, y1 = _square_bounds(at.x, at.y, l_n, w, h)
    out[y0:y1, x0:x1] *= rho
    return out


def select_greedy(hm: np.ndarray, cfg: SelectConfig) -> list[SamplePoint]:
    """Pick ``n_points`` distinct points by repeated argmax with neighbourhood
    suppression.

    Each step takes the argmax of the working map inside the margin-inset
    region (row-major tie-break), then multiplies the l_n-square around the
    pick by rho. Picked pixels are excluded from later steps so coordinates
    are always distinct. Fewer points are returned only when the valid region
    has fewer pixels than requested.
    """
    hm = np.asarray(hm, dtype=np.float64)
    h, w = hm.shape
    m = cfg.margin
    if w < 2 * m + 1 or h < 2 * m + 1:
        raise ValueError(f"heat map {w}x{h} smaller than margin inset {m}")
    region = hm[m:h - m, m:w - m].copy()
    rh, rw = region.shape
    n = min(cfg.n_points, rh * rw)
    points: list[SamplePoint] = []
    for _ in range(n):
        flat = int(np.argmax(region))
        ry, rx = divmod(flat, rw)
        quality = float(region[ry, rx])
        points.append(SamplePoint(x=rx + m, y=ry + m, quality=quality))
        x0, y0, x1, y1 = _square_bounds(rx, ry, cfg.l_n, rw, rh)
        region[y0:y1, x0:x1] *= cfg.rho
        region[ry, rx] = -1.0  # never re-pick
    return points


def select_grid(image_size: tuple[int, int], n_points: int, margin: int) -> list[SamplePoint]:
    """Evenly spaced points inside the margin-inset region.

    The grid shape (r rows, c cols) minimises |r - c| subject to r*c >=
    n_points (smallest product, then smallest r, breaks remaining ties);
    extras are truncated row-major. Raises when the inset region cannot hold
    the grid with distinct coordinates.
    """
    w, h = image_size
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    rw = w - 2 * margin
    rh = h - 2 * margin
    if rw < 1 or rh < 1:
        raise ValueError(f"margin {margin} leaves no valid region in {w}x{h} image")
    best = None
    for r in range(1, n_points + 1):
        c = math.ceil(n_points / r)
        key = (abs(r - c), r * c, r)
        if best is None or key < best[0]:
            best = (key, r, c)
    _, rows, cols = best
    if cols > rw or rows > rh:
        raise ValueError(
            f"{rows}x{cols} grid does not fit the {rw}x{rh} inset region"
        )
    points = []
    for j in range(rows):
        y = margin + int(math.floor((j + 0.5) * rh / rows))
        for i in range(cols):
            x = margin + int(math.floor((i + 0.5) * rw / cols))
            points.append(SamplePoint(x=x, y=y, quality=1.0))
            if len(points) == n_points:
                return points
    return points
