"""Self-supervised training labels for the heat-map model.

Each training pair couples a query frame with its coarse-matched reference.
A regular grid is sampled on the *query* frame (the image the model will be
trained on), matched into the reference, and the resulting flows are
classified by consensus with the fitted homography: inlier, outlier, or
unmatched when the matcher rejected the correspondence. Training images are
therefore disjoint from the reference images the trained model later scores.

Label file format: one header line ``frames=F points=N inliers=I outliers=O
unmatched=U``, then one ``image_id,x,y,label`` record per point with label
codes 1 (inlier), 0 (outlier), -1 (unmatched).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import homest, matcher, sampler
from .config import PipelineConfig

LABEL_INLIER = 1
LABEL_OUTLIER = 0
LABEL_UNMATCHED = -1


@dataclass(frozen=True)
class LabeledFrame:
    image_id: int
    points: tuple[tuple[int, int, int], ...]  # (x, y, label code)
    usable: bool = True

    def counts(self) -> tuple[int, int, int]:
        labels = [p[2] for p in self.points]
        return (labels.count(LABEL_INLIER), labels.count(LABEL_OUTLIER),
                labels.count(LABEL_UNMATCHED))


def label_pair(ref: np.ndarray, query: np.ndarray, image_id: int,
               cfg: PipelineConfig, grid_points: int | None = None,
               seed: int | None = None) -> LabeledFrame:
    """Classify a regular grid of query-frame points against one reference.

    Matcher-rejected points are unmatched; the rest are split into
    homography inliers and outliers. With fewer than 4 confident matches the
    whole frame is unusable and everything is unmatched.
    """
    if ref.shape != query.shape:
        raise ValueError(f"reference {ref.shape} and query {query.shape} differ in size")
    match_cfg = cfg.match_config()
    n = grid_points if grid_points is not None else cfg.grid_points
    h, w = query.shape
    points = sampler.select_grid((w, h), n, cfg.effective_margin())
    # the grid lives on the query frame: patches come from the query and are
    # searched for in the reference
    flows = matcher.match_all(query, ref, points, match_cfg)

    unrejected = sum(1 for f in flows if not f.rejected)
    if unrejected < 4:
        labels = tuple((f.ref_x, f.ref_y, LABEL_UNMATCHED) for f in flows)
        return LabeledFrame(image_id=image_id, points=labels, usable=False)

    ransac_cfg = cfg.ransac_config()
    result = homest.ransac_homography(
        flows, ransac_cfg.epsilon, ransac_cfg.max_iters,
        ransac_cfg.seed if seed is None else seed)
    labels = []
    for f, inlier in zip(flows, result.inlier_flags):
        if f.rejected:
            code = LABEL_UNMATCHED
        else:
            code = LABEL_INLIER if inlier else LABEL_OUTLIER
        labels.append((f.ref_x, f.ref_y, code))
    return LabeledFrame(image_id=image_id, points=tuple(labels))


def label_pairs(pairs: list[tuple[np.ndarray, np.ndarray, int]],
                cfg: PipelineConfig, grid_points: int | None = None,
                base_seed: int = 0) -> list[LabeledFrame]:
    """Label (reference, query, image_id) pairs with deterministic per-pair
    seeds."""
    return [
        label_pair(ref, query, image_id, cfg, grid_points,
                   seed=base_seed + image_id)
        for ref, query, image_id in pairs
    ]


def export_labels(frames: list[LabeledFrame], path: str | Path) -> None:
    """Write the label file; the header carries aggregate counts."""
    if not frames:
        raise ValueError("no labeled frames to export")
    total_in = sum(f.counts()[0] for f in frames)
    total_out = sum(f.counts()[1] for f in frames)
    total_un = sum(f.counts()[2] for f in frames)
    total = sum(len(f.points) for f in frames)
    lines = [
        f"frames={len(frames)} points={total} inliers={total_in} "
        f"outliers={total_out} unmatched={total_un}"
    ]
    for frame in frames:
        for x, y, code in frame.points:
            lines.append(f"{frame.image_id},{x},{y},{code}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_labels(path: str | Path) -> list[LabeledFrame]:
    """Parse a label file back into frames (round-trip of ``export_labels``)."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("frames="):
        raise ValueError(f"{path}: missing label file header")
    header = dict(kv.split("=") for kv in lines[0].split())
    by_image: dict[int, list[tuple[int, int, int]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected image_id,x,y,label")
        image_id, x, y, code = (int(p) for p in parts)
        if code not in (LABEL_INLIER, LABEL_OUTLIER, LABEL_UNMATCHED):
            raise ValueError(f"{path}:{lineno}: bad label code {code}")
        by_image.setdefault(image_id, []).append((x, y, code))
    frames = [LabeledFrame(image_id=i, points=tuple(pts))
              for i, pts in sorted(by_image.items())]
    total = sum(len(f.points) for f in frames)
    if int(header.get("points", total)) != total:
        raise ValueError(f"{path}: header count {header['points']} != {total} records")
    return frames
