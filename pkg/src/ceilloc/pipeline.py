"""One-shot pose refinement: coarse match -> ceiling lookup -> sample ->
match -> homography -> filters -> refined pose or fallback.

Every failure mode degrades to a fallback output carrying the coarse
reference pose (bit-identical) and a reason code; a traverse never aborts on
a bad frame. Frames are processed independently - no temporal filtering.

Pose convention: homographies are fitted mapping reference pixels to query
pixels, and the *inverse* (query -> reference) is decomposed, so the
extracted yaw adds to the reference heading and the pixel translation, scaled
to metres, is applied in the reference-vehicle frame.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import homest, matcher, refdb, sampler
from .config import FilterConfig, PipelineConfig
from .homest import Intrinsics, PoseDelta
from .refdb import ConfusionMatrix, Pose2, RefDatabase, RefEntry, rot2

REASONS = ("accepted", "low_inliers", "large_displacement", "matcher_failure",
           "no_coarse_match")

RESULTS_HEADER = ("query_index,refined,reason,x,y,theta,inlier_ratio,elapsed_ms,"
                  "d_yaw,d_tx_m,d_ty_m")


@dataclass(frozen=True)
class LocalisationOutput:
    query_index: int
    pose: Pose2
    refined: bool
    reason: str
    inlier_ratio: float
    delta: PoseDelta | None = None
    elapsed_ms: float = 0.0

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValueError(f"unknown reason {self.reason!r}")
        if self.refined != (self.reason == "accepted"):
            raise ValueError("refined flag must mirror reason == accepted")


@dataclass(frozen=True)
class ErrorReport:
    mean_error: float
    median_error: float
    max_error: float
    acceptance_rate: float
    frames_excluded: int
    frames_evaluated: int
    mean_error_refined: float
    mean_error_fallback: float


# ---------------------------------------------------------------------------
# pose/delta algebra


def apply_delta(ref_pose: Pose2, delta: PoseDelta) -> Pose2:
    """Compose: rotate the metric translation by the reference heading, add
    the yaw."""
    if delta.t_metres is None:
        raise ValueError("delta has no metric translation")
    xy = ref_pose.xy + rot2(ref_pose.theta) @ np.asarray(delta.t_metres)
    return Pose2(float(xy[0]), float(xy[1]), ref_pose.theta + delta.yaw)


def invert_delta(delta: PoseDelta) -> PoseDelta:
    r_inv = rot2(-delta.yaw)
    t_m = None if delta.t_metres is None else -(r_inv @ np.asarray(delta.t_metres))
    t_px = -(r_inv @ np.asarray(delta.t_pixels))
    return replace(delta, yaw=-delta.yaw, pitch=-delta.pitch, roll=-delta.roll,
                   t_pixels=t_px, t_metres=t_m)


def apply_filters(inlier_ratio: float, t_metres: np.ndarray,
                  fc: FilterConfig) -> str:
    """Acceptance decision: reason code, ``accepted`` when both filters pass."""
    if inlier_ratio < fc.n_th:
        return "low_inliers"
    if abs(float(t_metres[0])) > fc.d_th or abs(float(t_metres[1])) > fc.d_th:
        return "large_displacement"
    return "accepted"


def _fast_translation(h_pose: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Pixel translation at the principal point for a query->reference
    homography."""
    km = k.matrix
    g = np.linalg.inv(km) @ h_pose @ km
    if abs(g[2, 2]) > 1e-6:
        g = g / g[2, 2]
    return np.array([k.fx * g[0, 2], k.fy * g[1, 2]])


# ---------------------------------------------------------------------------
# single-frame refinement


def refine_one(db: RefDatabase, query: np.ndarray, coarse_ref: RefEntry,
               cfg: PipelineConfig, k_refs: int | None = None,
               query_index: int = 0) -> LocalisationOutput:
    """Refine one query against the coarse-matched reference (and, for scale,
    its temporal neighbours).

    Sample points come from the reference heat map when present (greedy
    selection) or a regular grid otherwise. The reference with the highest
    inlier ratio provides the pose; additional references contribute only to
    the scaling constant. Any failure (too few matches, degenerate geometry,
    no usable scale) falls back to the coarse pose with a reason code.
    """
    k = k_refs if k_refs is not None else cfg.k_refs
    match_cfg = cfg.match_config()
    select_cfg = cfg.select_config()
    filter_cfg = cfg.filter_config()
    ransac_cfg = cfg.ransac_config()

    def fallback(reason: str, ratio: float = 0.0,
                 delta: PoseDelta | None = None) -> LocalisationOutput:
        return LocalisationOutput(query_index=query_index, pose=coarse_ref.pose,
                                  refined=False, reason=reason,
                                  inlier_ratio=ratio, delta=delta)

    fits: list[tuple[RefEntry, homest.RansacResult]] = []
    for ref in refdb.neighbors(db, coarse_ref, k):
        try:
            use_heatmap = cfg.sampler == "heatmap" or (
                cfg.sampler == "auto" and ref.heatmap is not None
            )
            if use_heatmap:
                if ref.heatmap is None:
                    raise ValueError(f"entry {ref.id} has no heat map")
                points = sampler.select_greedy(ref.heatmap, select_cfg)
            else:
                h, w = ref.image.shape
                points = sampler.select_grid((w, h), cfg.grid_points,
                                             select_cfg.margin)
            flows = matcher.match_all(ref, query, points, match_cfg)
            fits.append((ref, homest.ransac_homography(
                flows, ransac_cfg.epsilon, ransac_cfg.max_iters, ransac_cfg.seed)))
        except (ValueError, homest.NoConsensusError):
            continue
    if not fits:
        return fallback("matcher_failure")

    primary_ref, primary_fit = max(fits, key=lambda t: t[1].inlier_ratio)
    k_mat = cfg.intrinsics((query.shape[1], query.shape[0]))
    try:
        h_pose = np.linalg.inv(primary_fit.model)  # query -> reference
        candidates = homest.decompose(h_pose, k_mat)
        delta = homest.select_physical(candidates)
    except homest.DegenerateGeometryError:
        return fallback("matcher_failure", primary_fit.inlier_ratio)

    # scaling constant: multi-reference consistency when enough references
    # pass the inlier filter, configured prior otherwise
    scale_pairs = [
        (PoseDelta(yaw=0.0, pitch=0.0, roll=0.0,
                   t_pixels=_fast_translation(np.linalg.inv(fit.model), k_mat)),
         ref.pose)
        for ref, fit in fits
        if fit.inlier_ratio >= filter_cfg.n_th
    ]
    try:
        if k > 1 and len(scale_pairs) >= 2:
            scale = homest.estimate_scale(scale_pairs, cfg.scale_m_per_px)
        elif cfg.scale_m_per_px is not None:
            scale = homest.ScaleEstimate(cfg.scale_m_per_px, "configured")
        else:
            raise homest.ScaleEstimationError("no configured scale")
    except homest.ScaleEstimationError:
        return fallback("matcher_failure", primary_fit.inlier_ratio, delta)

    delta = replace(delta, t_metres=scale.metres_per_pixel * np.asarray(delta.t_pixels))
    reason = apply_filters(primary_fit.inlier_ratio, delta.t_metres, filter_cfg)
    if reason != "accepted":
        return fallback(reason, primary_fit.inlier_ratio, delta)
    return LocalisationOutput(
        query_index=query_index,
        pose=apply_delta(primary_ref.pose, delta),
        refined=True,
        reason="accepted",
        inlier_ratio=primary_fit.inlier_ratio,
        delta=delta,
    )


# ---------------------------------------------------------------------------
# traverse


def refine_traverse(db: RefDatabase, queries: list[np.ndarray],
                    coarse: ConfusionMatrix | dict[int, float],
                    cfg: PipelineConfig) -> list[LocalisationOutput]:
    """Refine every query independently; one output per query, in order.

    Per-frame timing spans the coarse lookup through the homography result.
    A query without coarse coverage yields a ``no_coarse_match`` record with
    an origin placeholder pose.
    """
    outputs = []
    for i, query in enumerate(queries):
        t0 = time.perf_counter()
        ref = None
        if isinstance(coarse, ConfusionMatrix):
            if i < coarse.rows:
                ref = db.entries[refdb.best_match(coarse, i)]
        else:
            ts = coarse.get(i)
            if ts is not None:
                ref = refdb.lookup_ceiling(db, ts)
        if ref is None:
            out = LocalisationOutput(query_index=i, pose=Pose2(0.0, 0.0, 0.0),
                                     refined=False, reason="no_coarse_match",
                                     inlier_ratio=0.0)
        else:
            out = refine_one(db, query, ref, cfg, query_index=i)
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        outputs.append(replace(out, elapsed_ms=elapsed_ms))
    return outputs


# ---------------------------------------------------------------------------
# evaluation


def coarse_pose_of(out: LocalisationOutput) -> Pose2:
    """Recover the coarse reference pose an output was built from."""
    if not out.refined or out.delta is None or out.delta.t_metres is None:
        return out.pose
    return apply_delta(out.pose, invert_delta(out.delta))


def _error_stats(poses: list[Pose2], coarse_poses: list[Pose2],
                 refined_flags: list[bool], benchmark: list[Pose2],
                 exclusion_m: float) -> ErrorReport:
    errors, kept_flags = [], []
    excluded = 0
    for pose, coarse, flag, truth in zip(poses, coarse_poses, refined_flags, benchmark):
        if float(np.linalg.norm(coarse.xy - truth.xy)) > exclusion_m:
            excluded += 1
            continue
        errors.append(float(np.linalg.norm(pose.xy - truth.xy)))
        kept_flags.append(flag)
    errors_arr = np.array(errors)
    flags = np.array(kept_flags, dtype=bool)
    nan = float("nan")
    if len(errors_arr) == 0:
        return ErrorReport(nan, nan, nan, nan, excluded, 0, nan, nan)
    return ErrorReport(
        mean_error=float(errors_arr.mean()),
        median_error=float(np.median(errors_arr)),
        max_error=float(errors_arr.max()),
        acceptance_rate=float(flags.mean()),
        frames_excluded=excluded,
        frames_evaluated=int(len(errors_arr)),
        mean_error_refined=float(errors_arr[flags].mean()) if flags.any() else nan,
        mean_error_fallback=float(errors_arr[~flags].mean()) if (~flags).any() else nan,
    )


def evaluate(outputs: list[LocalisationOutput], benchmark: list[Pose2],
             exclusion_m: float = 10.0) -> ErrorReport:
    """Positional error statistics against benchmark poses.

    Frames whose *coarse* error exceeds the exclusion radius are dropped from
    every statistic, mirroring the protocol of skipping frames the coarse
    localiser got hopelessly wrong.
    """
    if len(outputs) != len(benchmark):
        raise ValueError(
            f"{len(outputs)} outputs vs {len(benchmark)} benchmark poses"
        )
    coarse = [coarse_pose_of(o) for o in outputs]
    return _error_stats([o.pose for o in outputs], coarse,
                        [o.refined for o in outputs], benchmark, exclusion_m)


def evaluate_coarse(outputs: list[LocalisationOutput], benchmark: list[Pose2],
                    exclusion_m: float = 10.0) -> ErrorReport:
    """Statistics of the refinement-disabled baseline (coarse poses only),
    with the same frame exclusion as ``evaluate``."""
    if len(outputs) != len(benchmark):
        raise ValueError(
            f"{len(outputs)} outputs vs {len(benchmark)} benchmark poses"
        )
    coarse = [coarse_pose_of(o) for o in outputs]
    return _error_stats(coarse, coarse, [False] * len(outputs), benchmark,
                        exclusion_m)


# ---------------------------------------------------------------------------
# results file


def write_results(outputs: list[LocalisationOutput], path: str | Path) -> None:
    """CSV records; the three trailing delta columns (empty on fallback) let
    ``evaluate`` reconstruct coarse poses from the file alone."""
    lines = [RESULTS_HEADER]
    for o in outputs:
        if o.delta is not None and o.delta.t_metres is not None:
            d = f"{o.delta.yaw!r},{float(o.delta.t_metres[0])!r},{float(o.delta.t_metres[1])!r}"
        else:
            d = ",,"
        lines.append(
            f"{o.query_index},{str(o.refined).lower()},{o.reason},"
            f"{float(o.pose.x)!r},{float(o.pose.y)!r},{float(o.pose.theta)!r},"
            f"{float(o.inlier_ratio)!r},{o.elapsed_ms:.3f},{d}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_results(path: str | Path) -> list[LocalisationOutput]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("query_index,refined,reason"):
        raise refdb.FormatError(f"{path}: bad results header")
    outputs = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) not in (8, 11):
            raise refdb.FormatError(f"{path}:{lineno}: expected 8 or 11 fields")
        delta = None
        if len(parts) == 11 and parts[8]:
            delta = PoseDelta(yaw=float(parts[8]), pitch=0.0, roll=0.0,
                              t_pixels=np.zeros(2),
                              t_metres=np.array([float(parts[9]), float(parts[10])]))
        outputs.append(
            LocalisationOutput(
                query_index=int(parts[0]),
                pose=Pose2(float(parts[3]), float(parts[4]), float(parts[5])),
                refined=parts[1] == "true",
                reason=parts[2],
                inlier_ratio=float(parts[6]),
                delta=delta,
                elapsed_ms=float(parts[7]),
            )
        )
    return outputs
