"""Command line interface: refine / eval / label / synth / bench."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import labeler, pipeline, refdb, synthbench
from .config import PipelineConfig, parse_config, write_config


def _load_queries(manifest: str) -> list[np.ndarray]:
    qdb = refdb.load_database(manifest)
    return [e.image for e in qdb.entries]


def _cmd_refine(args) -> int:
    cfg = parse_config(args.config) if args.config else PipelineConfig()
    db = refdb.load_database(args.db, ceiling_height=cfg.ceiling_height,
                             default_scale=cfg.scale_m_per_px)
    t0 = time.perf_counter()
    coarse = refdb.load_coarse(args.coarse)
    queries = _load_queries(args.queries)
    outputs = pipeline.refine_traverse(db, queries, coarse, cfg)
    pipeline.write_results(outputs, args.out)
    elapsed = time.perf_counter() - t0
    n = len(outputs)
    accepted = sum(o.refined for o in outputs)
    print(f"refined {n} queries: {accepted} accepted, {n - accepted} fallbacks")
    if n:
        print(f"total {elapsed:.2f} s ({n / elapsed:.1f} queries/s)")
    print(f"results written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    outputs = pipeline.load_results(args.results)
    benchmark = synthbench.load_benchmark(args.benchmark)
    refined = pipeline.evaluate(outputs, benchmark, args.exclude_metres)
    coarse = pipeline.evaluate_coarse(outputs, benchmark, args.exclude_metres)
    print(f"frames evaluated: {refined.frames_evaluated} "
          f"(excluded {refined.frames_excluded})")
    print(f"coarse  mean/median/max error: {coarse.mean_error:.3f} / "
          f"{coarse.median_error:.3f} / {coarse.max_error:.3f} m")
    print(f"refined mean/median/max error: {refined.mean_error:.3f} / "
          f"{refined.median_error:.3f} / {refined.max_error:.3f} m")
    print(f"acceptance rate: {refined.acceptance_rate:.1%}")
    print(f"mean error refined-only: {refined.mean_error_refined:.3f} m, "
          f"fallback-only: {refined.mean_error_fallback:.3f} m")
    if args.out:
        lines = ["query_index,error_m,coarse_error_m,refined"]
        for o, b in zip(outputs, benchmark):
            err = float(np.linalg.norm(o.pose.xy - b.xy))
            cerr = float(np.linalg.norm(pipeline.coarse_pose_of(o).xy - b.xy))
            lines.append(f"{o.query_index},{err:.6f},{cerr:.6f},{str(o.refined).lower()}")
        Path(args.out).write_text("\n".join(lines) + "\n")
        print(f"per-frame errors written to {args.out}")
        if not args.no_plots:
            from .report import render_eval_figures

            figures = render_eval_figures(outputs, benchmark, refined, coarse,
                                          Path(args.out).parent, args.exclude_metres)
            print("figures: " + ", ".join(str(f) for f in figures))
    return 0


def _cmd_label(args) -> int:
    cfg = parse_config(args.config) if args.config else PipelineConfig()
    db = refdb.load_database(args.db)
    coarse = refdb.load_coarse(args.coarse)
    queries = _load_queries(args.queries)
    pairs = []
    for i, query in enumerate(queries):
        if isinstance(coarse, refdb.ConfusionMatrix):
            ref = db.entries[refdb.best_match(coarse, i)]
        else:
            if i not in coarse:
                continue
            ref = refdb.lookup_ceiling(db, coarse[i])
        pairs.append((ref.image, query, i))
    frames = labeler.label_pairs(pairs, cfg, grid_points=args.grid_points,
                                 base_seed=cfg.ransac_seed)
    labeler.export_labels(frames, args.out)
    inliers = sum(f.counts()[0] for f in frames)
    outliers = sum(f.counts()[1] for f in frames)
    unmatched = sum(f.counts()[2] for f in frames)
    print(f"labeled {len(frames)} frames: {inliers} inliers, "
          f"{outliers} outliers, {unmatched} unmatched -> {args.out}")
    return 0


def _cmd_synth(args) -> int:
    params = synthbench.SceneParams(
        scale_m_per_px=args.scale,
        distractor_fraction=args.distractor_fraction,
        view_width=args.image_width,
        view_height=args.image_height,
        path_points=max(args.frames, 2),
        path_spacing_m=args.spacing,
    )
    scene = synthbench.generate_scene(args.seed, params)
    offset_range = None
    if args.coarse_offset is not None:
        offset_range = (args.coarse_offset[0], args.coarse_offset[1])
    art = synthbench.generate_traverse(
        scene,
        args.frames,
        coarse_noise_sigma=args.coarse_noise_sigma,
        out_dir=args.out_dir,
        render_noise_sigma=args.render_noise,
        coarse_offset_range=offset_range,
        seed=args.seed,
    )
    errs = art.coarse_errors()
    print(f"wrote traverse to {args.out_dir}")
    print(f"  references: {art.ref_manifest}")
    print(f"  queries:    {art.query_manifest}")
    print(f"  coarse:     {art.coarse_path}")
    print(f"  benchmark:  {art.benchmark_path}")
    print(f"  config:     {art.config_path}")
    print(f"coarse error mean {errs.mean():.3f} m, max {errs.max():.3f} m")
    return 0


def _cmd_bench(args) -> int:
    from . import bench

    result = bench.run_benchmark(n_pairs=args.pairs, seed=args.seed)
    print(f"matched {result.n_points} points per pair on "
          f"{result.image_size[0]}x{result.image_size[1]} images "
          f"(l_patch={result.l_patch}, l_sr={result.l_sr})")
    print(f"{result.n_pairs} pairs in {result.elapsed_s:.3f} s "
          f"-> {result.pairs_per_second:.1f} pairs/s")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ceilloc",
        description="Refine coarse place-recognition poses with ceiling-camera "
                    "homographies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", help="refine a query traverse")
    p.add_argument("--db", required=True, help="reference manifest")
    p.add_argument("--queries", required=True, help="query manifest")
    p.add_argument("--coarse", required=True,
                   help="confusion matrix or match list file")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="results CSV")
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("eval", help="evaluate results against benchmark poses")
    p.add_argument("--results", required=True)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--exclude-metres", type=float, default=10.0)
    p.add_argument("--out", help="per-frame error CSV (figures land beside it)")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("label", help="generate self-supervised training labels")
    p.add_argument("--db", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--coarse", required=True)
    p.add_argument("--config")
    p.add_argument("--grid-points", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("synth", help="generate a synthetic benchmark traverse")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=0.06,
                   help="metres per pixel")
    p.add_argument("--spacing", type=float, default=0.3,
                   help="reference spacing, metres")
    p.add_argument("--distractor-fraction", type=float, default=0.0)
    p.add_argument("--image-width", type=int, default=640)
    p.add_argument("--image-height", type=int, default=480)
    p.add_argument("--coarse-noise-sigma", type=float, default=0.0)
    p.add_argument("--coarse-offset", type=float, nargs=2, metavar=("LO", "HI"),
                   help="inject coarse error of uniformly drawn magnitude")
    p.add_argument("--render-noise", type=float, default=2.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("bench", help="per-pair throughput benchmark")
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
