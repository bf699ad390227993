"""Planar homography estimation and its physical interpretation.

Covers the fitting chain from pixel correspondences to metric motion:
normalized DLT, RANSAC consensus filtering, SVD-based decomposition into
candidate (rotation, translation/depth, plane normal) triples, physical
candidate selection, and recovery of the metres-per-pixel scaling constant
from multiple reference views.

All randomness is driven by explicit seeds; every function is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .matcher import FlowVector
from .refdb import Pose2, rot2

RANSAC_CONFIDENCE = 0.99


class DegenerateGeometryError(ValueError):
    """Point configuration (or matrix) too degenerate to define a homography."""


class NoConsensusError(RuntimeError):
    """RANSAC could not find a model with at least 4 inliers."""


class ScaleEstimationError(RuntimeError):
    """No usable reference pair and no configured fallback scale."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float = 1.0
    fy: float = 1.0
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class PoseDelta:
    """Relative motion extracted from a homography.

    Angles follow the Z-Y-X convention with the camera z-axis toward the
    ceiling. ``t_pixels`` is the in-plane translation read at the principal
    point; ``t_metres`` is filled once a scale is known. ``t_over_depth`` and
    ``normal`` carry the raw decomposition triple.
    """

    yaw: float
    pitch: float
    roll: float
    t_pixels: np.ndarray
    t_metres: np.ndarray | None = None
    t_over_depth: np.ndarray | None = None
    normal: np.ndarray | None = None


@dataclass(frozen=True)
class RansacResult:
    model: np.ndarray
    inlier_flags: np.ndarray
    inlier_ratio: float


@dataclass(frozen=True)
class ScaleEstimate:
    metres_per_pixel: float
    source: str  # "configured" | "multi-reference"

    def __post_init__(self):
        if self.metres_per_pixel <= 0:
            raise ValueError("scale must be positive")


# ---------------------------------------------------------------------------
# homography basics


def normalize_homography(h: np.ndarray) -> np.ndarray:
    """Scale to h[2][2] = 1 when well away from zero, else to Frobenius norm
    sqrt(3) with h[2][2] >= 0."""
    h = np.asarray(h, dtype=np.float64)
    if abs(h[2, 2]) > 1e-6:
        return h / h[2, 2]
    sign_src = h[2, 2] if h[2, 2] != 0.0 else h.flat[np.argmax(np.abs(h))]
    sign = 1.0 if sign_src >= 0 else -1.0
    return h * (sign * math.sqrt(3.0) / np.linalg.norm(h))


def validate_homography(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3) or not np.isfinite(h).all():
        raise DegenerateGeometryError("homography must be a finite 3x3 matrix")
    if np.linalg.cond(h) > 1e12:
        raise DegenerateGeometryError("homography is rank deficient")
    return h


def project(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply a homography to (N, 2) points, returning (N, 2)."""
    pts = np.asarray(pts, dtype=np.float64)
    ph = np.column_stack([pts, np.ones(len(pts))])
    q = ph @ h.T
    with np.errstate(divide="ignore", invalid="ignore"):
        out = q[:, :2] / q[:, 2:3]
    return out


def symmetric_transfer_error(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Per-point sqrt(forward^2 + backward^2) transfer distance in pixels."""
    h_inv = np.linalg.inv(h)
    fwd = project(h, src) - dst
    bwd = project(h_inv, dst) - src
    err = np.sqrt((fwd**2).sum(axis=1) + (bwd**2).sum(axis=1))
    return np.where(np.isfinite(err), err, np.inf)


def _hartley(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    if d < 1e-12:
        raise DegenerateGeometryError("coincident points")
    s = math.sqrt(2.0) / d
    t = np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])
    return (pts - centroid) * s, t


def dlt_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalized DLT on (N, 2) -> (N, 2) correspondences."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = len(src)
    if n < 4 or len(dst) != n:
        raise ValueError(f"need >= 4 correspondences on both sides, got {n}/{len(dst)}")
    srcn, t_src = _hartley(src)
    dstn, t_dst = _hartley(dst)
    x, y = srcn[:, 0], srcn[:, 1]
    u, v = dstn[:, 0], dstn[:, 1]
    zero = np.zeros(n)
    one = np.ones(n)
    a = np.empty((2 * n, 9))
    a[0::2] = np.column_stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u])
    a[1::2] = np.column_stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v])
    _, s, vt = np.linalg.svd(a)
    # rank < 8 means the null space is not unique: collinear/coincident input
    if s[7] < 1e-10 * s[0]:
        raise DegenerateGeometryError("degenerate correspondence configuration")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    return validate_homography(normalize_homography(h))


def _flow_arrays(flows: list[FlowVector]) -> tuple[np.ndarray, np.ndarray]:
    src = np.array([[f.ref_x, f.ref_y] for f in flows], dtype=np.float64)
    dst = np.array([[f.query_x, f.query_y] for f in flows], dtype=np.float64)
    return src, dst


def dlt(correspondences: list[FlowVector]) -> np.ndarray:
    """Homography mapping reference points onto query points."""
    src, dst = _flow_arrays(correspondences)
    return dlt_points(src, dst)


# ---------------------------------------------------------------------------
# RANSAC


def ransac_homography(flows: list[FlowVector], epsilon: float = 3.0,
                      max_iters: int = 500, seed: int = 0) -> RansacResult:
    """Robust homography fit over the unrejected flows.

    RANSAC (minimal 4-point samples, symmetric transfer error vs epsilon,
    adaptive iteration count, final refit on the consensus) engages only when
    more than 10 unrejected flows are available; with 10 or fewer, a plain DLT
    over all unrejected flows is returned with every one of them flagged as an
    inlier. The inlier ratio is taken over *all* input flows, so matcher
    rejections count against it. Deterministic for a fixed seed.
    """
    flags = np.zeros(len(flows), dtype=bool)
    unrej = np.array([i for i, f in enumerate(flows) if not f.rejected], dtype=int)
    if len(unrej) < 4:
        raise ValueError(f"need >= 4 unrejected flows, got {len(unrej)}")
    src, dst = _flow_arrays([flows[i] for i in unrej])

    if len(unrej) <= 10:
        model = dlt_points(src, dst)
        flags[unrej] = True
        return RansacResult(model, flags, float(flags.sum() / len(flows)))

    rng = np.random.default_rng(seed)
    n = len(unrej)
    best_count = 0
    best_mask: np.ndarray | None = None
    needed = max_iters
    it = 0
    while it < min(max_iters, needed):
        it += 1
        sample = rng.choice(n, size=4, replace=False)
        try:
            model = dlt_points(src[sample], dst[sample])
        except DegenerateGeometryError:
            continue
        mask = symmetric_transfer_error(model, src, dst) <= epsilon
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            w = count / n
            if w >= 1.0:
                needed = it
            else:
                needed = math.ceil(math.log(1.0 - RANSAC_CONFIDENCE) / math.log(1.0 - w**4))

    if best_mask is None or best_count < 4:
        raise NoConsensusError(f"no model with >= 4 inliers in {it} iterations")
    model = dlt_points(src[best_mask], dst[best_mask])
    final_mask = symmetric_transfer_error(model, src, dst) <= epsilon
    if final_mask.sum() < 4:  # refit drifted off the consensus: keep sample fit
        final_mask = best_mask
        model = dlt_points(src[best_mask], dst[best_mask])
    flags[unrej[final_mask]] = True
    return RansacResult(model, flags, float(flags.sum() / len(flows)))


# ---------------------------------------------------------------------------
# decomposition


def _euler_zyx(r: np.ndarray) -> tuple[float, float, float]:
    yaw = math.atan2(r[1, 0], r[0, 0])
    pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    roll = math.atan2(r[2, 1], r[2, 2])
    return yaw, pitch, roll


def _project_so3(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


def _decompose_calibrated(g: np.ndarray) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """All (R, t/d, n) triples with g ~ R + (t/d) n^T, up to scale and sign."""
    sv = np.linalg.svd(g, compute_uv=False)
    if sv[1] < 1e-12:
        raise DegenerateGeometryError("homography has (near-)zero middle singular value")
    gn = g / sv[1]
    if gn[2, 2] < 0:
        gn = -gn

    sigma1, _, sigma3 = np.linalg.svd(gn, compute_uv=False)
    if sigma1 - sigma3 < 1e-7:
        # pure rotation: translation vanishes and the plane normal is undefined
        return [(_project_so3(gn), np.zeros(3), np.array([0.0, 0.0, 1.0]))]

    _, s, vt = np.linalg.svd(gn)
    v1, v2, v3 = vt[0], vt[1], vt[2]
    a = math.sqrt(max(1.0 - s[2] ** 2, 0.0))
    b = math.sqrt(max(s[0] ** 2 - 1.0, 0.0))
    denom = math.sqrt(s[0] ** 2 - s[2] ** 2)
    u1 = (a * v1 + b * v3) / denom
    u2 = (a * v1 - b * v3) / denom

    solutions = []
    for u in (u1, u2):
        n = np.cross(v2, u)
        basis = np.column_stack([v2, u, n])
        gv2, gu = gn @ v2, gn @ u
        image = np.column_stack([gv2, gu, np.cross(gv2, gu)])
        r = image @ basis.T
        t = (gn - r) @ n
        residual = np.linalg.norm(r + np.outer(t, n) - gn)
        if residual > 1e-6 * np.linalg.norm(gn):
            continue
        for sign in (1.0, -1.0):
            cand = (r, sign * t, sign * n)
            # visibility: the plane must lie in front of the camera, so the
            # reference-frame normal points along the viewing axis
            if cand[2][2] < 0:
                continue
            if not any(
                np.allclose(cand[0], rr, atol=1e-9) and np.allclose(cand[1], tt, atol=1e-9)
                for rr, tt, _ in solutions
            ):
                solutions.append(cand)
    if not solutions:
        raise DegenerateGeometryError("homography does not admit a planar decomposition")
    return solutions


def decompose(h: np.ndarray, k: Intrinsics = Intrinsics()) -> list[PoseDelta]:
    """Candidate motions explaining the homography.

    The calibrated matrix K^-1 H K is decomposed by the SVD planar-homography
    method; every candidate carries its own Euler angles and decomposition
    triple, plus the shared fast-path pixel translation (the translation
    column of the homography in principal-point-centred coordinates).
    """
    h = validate_homography(normalize_homography(h))
    km = k.matrix
    g = np.linalg.inv(km) @ h @ km
    if abs(g[2, 2]) > 1e-6:
        gp = g / g[2, 2]
    else:
        gp = g
    t_pixels = np.array([k.fx * gp[0, 2], k.fy * gp[1, 2]])

    candidates = []
    for r, t, n in _decompose_calibrated(g):
        yaw, pitch, roll = _euler_zyx(r)
        candidates.append(
            PoseDelta(yaw=yaw, pitch=pitch, roll=roll, t_pixels=t_pixels,
                      t_over_depth=t, normal=n)
        )
    return candidates


def select_physical(candidates: list[PoseDelta]) -> PoseDelta:
    """Candidate with the smallest |pitch| + |roll|; ties break on |yaw|."""
    if not candidates:
        raise ValueError("no candidates")
    return min(candidates, key=lambda c: (abs(c.pitch) + abs(c.roll), abs(c.yaw)))


# ---------------------------------------------------------------------------
# scaling constant


def estimate_scale(pairs: list[tuple[PoseDelta, Pose2]],
                   default_scale: float | None = None) -> ScaleEstimate:
    """Metres-per-pixel from the consistency of multiple reference matches.

    Each reference pair contributes |metric pose displacement| / |difference
    of the pixel translations rotated into the map frame by their reference
    headings|; the estimate is the median over all pairs. Pairs whose pixel
    translations differ by under 1 px (or whose references are co-located)
    are ill-conditioned and skipped. Falls back to the configured constant
    when no usable pair remains.
    """
    ratios = []
    for (delta_i, pose_i), (delta_j, pose_j) in combinations(pairs, 2):
        aligned_i = rot2(pose_i.theta) @ np.asarray(delta_i.t_pixels, dtype=np.float64)
        aligned_j = rot2(pose_j.theta) @ np.asarray(delta_j.t_pixels, dtype=np.float64)
        px = float(np.linalg.norm(aligned_i - aligned_j))
        metres = float(np.linalg.norm(pose_i.xy - pose_j.xy))
        if px < 1.0 or metres < 1e-9:
            continue
        ratios.append(metres / px)
    if ratios:
        return ScaleEstimate(float(np.median(ratios)), "multi-reference")
    if default_scale is not None:
        return ScaleEstimate(default_scale, "configured")
    raise ScaleEstimationError(
        "no well-conditioned reference pair and no configured scale"
    )
