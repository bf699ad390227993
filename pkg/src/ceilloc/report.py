"""Evaluation figures rendered to files next to the delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .pipeline import ErrorReport, LocalisationOutput, coarse_pose_of
from .refdb import Pose2


def render_eval_figures(outputs: list[LocalisationOutput], benchmark: list[Pose2],
                        refined: ErrorReport, coarse: ErrorReport,
                        out_dir: str | Path, exclusion_m: float = 10.0) -> list[Path]:
    """Write the per-frame error curve, summary bars and trajectory overlay.

    Returns the list of files written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    idx = np.array([o.query_index for o in outputs])
    refined_err = np.array(
        [np.linalg.norm(o.pose.xy - b.xy) for o, b in zip(outputs, benchmark)]
    )
    coarse_err = np.array(
        [np.linalg.norm(coarse_pose_of(o).xy - b.xy) for o, b in zip(outputs, benchmark)]
    )
    accepted = np.array([o.refined for o in outputs], dtype=bool)
    written = []

    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(idx, coarse_err, color="tab:gray", lw=1.2, label="coarse")
    ax.plot(idx, refined_err, color="tab:orange", lw=1.2, label="refined")
    ax.scatter(idx[~accepted], refined_err[~accepted], color="tab:red", s=14,
               zorder=3, label="fallback")
    if np.any(coarse_err > exclusion_m):
        ax.axhline(exclusion_m, color="k", ls=":", lw=0.8, label="exclusion")
    ax.set_xlabel("query frame")
    ax.set_ylabel("position error [m]")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("per-frame localisation error")
    fig.tight_layout()
    path = out_dir / "error_per_frame.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(5, 4))
    labels = ["mean", "median", "max"]
    cvals = [coarse.mean_error, coarse.median_error, coarse.max_error]
    rvals = [refined.mean_error, refined.median_error, refined.max_error]
    x = np.arange(len(labels))
    ax.bar(x - 0.18, cvals, width=0.36, color="tab:gray", label="coarse")
    ax.bar(x + 0.18, rvals, width=0.36, color="tab:orange", label="refined")
    ax.set_xticks(x, labels)
    ax.set_ylabel("position error [m]")
    ax.set_title(
        f"error summary (acceptance {refined.acceptance_rate:.0%}, "
        f"{refined.frames_excluded} excluded)"
    )
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "error_summary.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 5))
    bx = np.array([b.x for b in benchmark])
    by = np.array([b.y for b in benchmark])
    px = np.array([o.pose.x for o in outputs])
    py = np.array([o.pose.y for o in outputs])
    ax.plot(bx, by, "k-", lw=1.0, label="benchmark")
    ax.scatter(px[accepted], py[accepted], s=16, color="tab:orange", label="refined")
    ax.scatter(px[~accepted], py[~accepted], s=16, color="tab:red", marker="x",
               label="fallback")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(fontsize=8)
    ax.set_title("trajectory")
    fig.tight_layout()
    path = out_dir / "trajectory.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)
    return written
