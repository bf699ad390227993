"""Pixel correspondence matching by exhaustive SAD template search.

For a sample point in the reference image, the patch around it is compared
against every candidate position of an l_sr-sized window at the same
coordinates in the query image; the lowest sum-of-absolute-differences wins.
Matches are flagged as rejected when the SAD surface is ambiguous (peak ratio
test) or the best score is poor in absolute terms.

The search loop is JIT-compiled with numba when available; a vectorised numpy
fallback produces bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .refdb import RefEntry, validate_gray
from .sampler import SamplePoint

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

# candidates within this Chebyshev radius of the best are excluded from the
# second-peak ratio test
RATIO_EXCLUSION_RADIUS = 3


class MatchWindowError(ValueError):
    """No candidate patch position fits in the query image."""


@dataclass(frozen=True)
class MatchConfig:
    """Patch/search geometry and rejection thresholds.

    ``l_patch`` is rounded up to the next odd value so the patch has a centre
    pixel. ``reject_ratio`` is the max allowed best/second-best SAD ratio
    (second best taken outside a 3 px exclusion zone); ``max_sad`` is the max
    allowed per-pixel mean absolute difference of the winning match.
    """

    l_patch: int = 40
    l_sr: int = 40
    reject_ratio: float = 0.8
    max_sad: float = 40.0

    def __post_init__(self):
        if self.l_patch < 3:
            raise ValueError("l_patch must be >= 3")
        if self.l_sr < 1:
            raise ValueError("l_sr must be >= 1")
        if not (0.0 < self.reject_ratio <= 1.0):
            raise ValueError("reject_ratio must be in (0, 1]")
        if self.max_sad <= 0:
            raise ValueError("max_sad must be positive")

    @property
    def patch_side(self) -> int:
        """Odd-adjusted patch side."""
        return self.l_patch if self.l_patch % 2 == 1 else self.l_patch + 1

    @property
    def patch_half(self) -> int:
        return self.patch_side // 2

    @property
    def margin(self) -> int:
        """Minimum sample-point distance from the reference border."""
        return self.patch_half


@dataclass(frozen=True)
class FlowVector:
    """One reference-to-query pixel correspondence."""

    ref_x: int
    ref_y: int
    query_x: int
    query_y: int
    sad_score: float
    rejected: bool
    inlier: bool = False

    @property
    def ref_point(self) -> tuple[int, int]:
        return (self.ref_x, self.ref_y)

    @property
    def query_point(self) -> tuple[int, int]:
        return (self.query_x, self.query_y)

    @property
    def dx(self) -> int:
        return self.query_x - self.ref_x

    @property
    def dy(self) -> int:
        return self.query_y - self.ref_y


def _sad_map_numpy(region: np.ndarray, patch: np.ndarray) -> np.ndarray:
    """SAD of the patch against every patch-sized window of the region."""
    windows = sliding_window_view(region, patch.shape)
    diff = windows - patch
    return np.abs(diff, dtype=np.int16).sum(axis=(2, 3), dtype=np.int64)


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _sad_map_numba(region, patch):  # pragma: no cover - exercised via wrapper
        ph, pw = patch.shape
        oh = region.shape[0] - ph + 1
        ow = region.shape[1] - pw + 1
        out = np.empty((oh, ow), dtype=np.int64)
        for dy in range(oh):
            for dx in range(ow):
                acc = 0
                for r in range(ph):
                    for c in range(pw):
                        d = region[dy + r, dx + c] - patch[r, c]
                        acc += d if d >= 0 else -d
                out[dy, dx] = acc
        return out


USE_NUMBA = HAVE_NUMBA


def _sad_map(region: np.ndarray, patch: np.ndarray) -> np.ndarray:
    # int16 inputs: |a - b| <= 255 stays exact and overflow-free
    region16 = np.ascontiguousarray(region, dtype=np.int16)
    patch16 = np.ascontiguousarray(patch, dtype=np.int16)
    if USE_NUMBA:
        return _sad_map_numba(region16, patch16)
    return _sad_map_numpy(region16, patch16)


def match_point(ref: np.ndarray, query: np.ndarray, p: SamplePoint,
                cfg: MatchConfig) -> FlowVector:
    """Find the query pixel best matching the reference patch at ``p``.

    Candidate centres are the l_sr x l_sr square at p's coordinates in the
    query, restricted to positions where the candidate patch fits; ties break
    toward the smallest (dy, dx). The reference patch must fit inside the
    reference image (guaranteed by the sampler margin).
    """
    ref = validate_gray(ref, "reference")
    query = validate_gray(query, "query")
    if ref.shape != query.shape:
        raise ValueError(f"reference {ref.shape} and query {query.shape} differ in size")
    h, w = query.shape
    half = cfg.patch_half
    side = cfg.patch_side
    if not (half <= p.x < w - half and half <= p.y < h - half):
        raise ValueError(
            f"sample point ({p.x}, {p.y}) too close to the border for patch {side}"
        )
    patch = ref[p.y - half : p.y + half + 1, p.x - half : p.x + half + 1]

    r_sr = cfg.l_sr // 2
    # candidate centres: window square intersected with fit-inside positions
    cx0 = max(p.x - r_sr, half)
    cy0 = max(p.y - r_sr, half)
    cx1 = min(p.x - r_sr + cfg.l_sr - 1, w - 1 - half)
    cy1 = min(p.y - r_sr + cfg.l_sr - 1, h - 1 - half)
    if cx1 < cx0 or cy1 < cy0:
        raise MatchWindowError(
            f"no candidate position fits for point ({p.x}, {p.y}) with "
            f"l_patch={side}, l_sr={cfg.l_sr} in {w}x{h} query"
        )
    region = query[cy0 - half : cy1 + half + 1, cx0 - half : cx1 + half + 1]
    sad = _sad_map(region, patch)

    flat = int(np.argmin(sad))  # row-major => smallest (dy, dx) on ties
    by, bx = divmod(flat, sad.shape[1])
    best = int(sad[by, bx])
    qx, qy = cx0 + bx, cy0 + by

    area = float(side * side)
    norm_best = best / area

    # ambiguity test: best vs best-outside-exclusion-zone
    rejected = norm_best > cfg.max_sad
    if not rejected:
        ys, xs = np.ogrid[: sad.shape[0], : sad.shape[1]]
        outside = (np.abs(ys - by) > RATIO_EXCLUSION_RADIUS) | (
            np.abs(xs - bx) > RATIO_EXCLUSION_RADIUS
        )
        if outside.any():
            second = int(sad[outside].min())
            if second == 0:
                rejected = True  # flat SAD surface: ambiguous
            elif best / second > cfg.reject_ratio:
                rejected = True
    return FlowVector(ref_x=p.x, ref_y=p.y, query_x=qx, query_y=qy,
                      sad_score=norm_best, rejected=rejected)


def match_all(ref: RefEntry | np.ndarray, query: np.ndarray,
              points: list[SamplePoint], cfg: MatchConfig) -> list[FlowVector]:
    """Match every sample point, preserving input order."""
    ref_img = ref.image if isinstance(ref, RefEntry) else ref
    return [match_point(ref_img, query, p, cfg) for p in points]
