"""Synthetic ceiling scenes with exact ground truth.

A scene is a large textured plane (multi-octave noise plus planted line and
blob features) seen by an upward-facing camera whose image is a scaled,
rotated crop of the texture. Distractor regions simulate 3D structure:
their content is rendered with a parallax factor, so it moves inconsistently
with the plane across views and carries a visually distinctive pattern.

Every view comes with its exact view-to-scene homography, so ground-truth
pixel flow, relative homographies, scale, and planarity-violation masks are
all available to tests and benchmarks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import refdb
from .refdb import Pose2, rot2
from .config import PipelineConfig, write_config


@dataclass(frozen=True)
class SceneParams:
    texture_width: int = 1400
    texture_height: int = 1100
    scale_m_per_px: float = 0.06
    plane_depth_m: float = 3.0
    distractor_fraction: float = 0.0   # target mask area fraction inside the path footprint
    distractor_radius: tuple[int, int] = (35, 70)
    parallax_factor: float = 1.6
    n_lines: int = 40
    n_blobs: int = 25
    octaves: int = 5
    path_points: int = 60
    path_spacing_m: float = 0.3
    view_width: int = 640
    view_height: int = 480

    def __post_init__(self):
        if self.scale_m_per_px <= 0:
            raise ValueError("scale must be positive")
        if not (0.0 <= self.distractor_fraction < 0.9):
            raise ValueError("distractor_fraction must be in [0, 0.9)")
        if self.parallax_factor <= 1.0:
            raise ValueError("parallax_factor must exceed 1 (closer than the plane)")


@dataclass(frozen=True)
class SyntheticScene:
    texture: np.ndarray            # float32, the planar ceiling appearance
    distractor_texture: np.ndarray # float32, appearance inside distractor regions
    distractor_mask: np.ndarray    # bool, True where planarity is violated
    distractor_discs: tuple[tuple[float, float, float], ...]  # (u, v, radius)
    scale: float                   # metres per texture/image pixel
    plane_depth: float
    parallax_factor: float
    trajectory: tuple[Pose2, ...]
    footprint: tuple[float, float, float, float]  # texture-px region the views cover
    view_size: tuple[int, int]

    def distractor_area_fraction(self) -> float:
        u0, v0, u1, v1 = (int(round(c)) for c in self.footprint)
        return float(self.distractor_mask[v0:v1, u0:u1].mean())


def _octave_noise(rng: np.random.Generator, h: int, w: int, octaves: int) -> np.ndarray:
    # cubic upsampling keeps the surface C2-smooth; the finest lattice step of
    # 4 px bounds the curvature so bilinear warp round trips stay sub-quantum
    acc = np.zeros((h, w))
    total = 0.0
    for k in range(octaves):
        step = max(2 ** (octaves - k), 4)
        grid = rng.standard_normal((h // step + 4, w // step + 4))
        up = ndimage.zoom(grid, step, order=3)[:h, :w]
        weight = float(step)
        acc += weight * up
        total += weight
    return acc / total


def _soft_strokes(rng: np.random.Generator, h: int, w: int, n_lines: int,
                  n_blobs: int) -> np.ndarray:
    lines = np.zeros((h, w))
    for _ in range(n_lines):
        p0 = rng.uniform([0, 0], [w - 1, h - 1])
        angle = rng.uniform(0, math.pi)
        length = rng.uniform(0.2, 0.9) * min(w, h)
        p1 = p0 + length * np.array([math.cos(angle), math.sin(angle)])
        steps = int(length * 2) + 2
        us = np.clip(np.linspace(p0[0], p1[0], steps), 0, w - 1)
        vs = np.clip(np.linspace(p0[1], p1[1], steps), 0, h - 1)
        amp = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0)
        np.add.at(lines, (vs.astype(int), us.astype(int)), amp)
    lines = ndimage.gaussian_filter(lines, sigma=2.5)

    blobs = np.zeros((h, w))
    if n_blobs:
        us = rng.integers(0, w, n_blobs)
        vs = rng.integers(0, h, n_blobs)
        np.add.at(blobs, (vs, us), rng.uniform(30.0, 80.0, n_blobs))
        blobs = ndimage.gaussian_filter(blobs, sigma=6.0)
    return lines * 32.0 + blobs * 25.0


def _stripe_pattern(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    # dominant speckle keeps matches inside distractors confident (unique in
    # 2D) while the stripes make the regions visually distinctive
    angle = rng.uniform(0, math.pi)
    freq = rng.uniform(0.08, 0.16)
    vv, uu = np.mgrid[0:h, 0:w]
    phase = (uu * math.cos(angle) + vv * math.sin(angle)) * freq
    stripes = np.sin(2 * math.pi * phase) * 30.0
    speckle = ndimage.gaussian_filter(rng.standard_normal((h, w)), 1.5) * 75.0
    return np.clip(150.0 + stripes + speckle, 0.0, 255.0)


def _normalize_texture(tex: np.ndarray) -> np.ndarray:
    tex = tex - tex.mean()
    std = tex.std()
    if std > 0:
        tex = tex / std * 38.0
    # smooth tail compression (a hard clip would crease the surface and break
    # bilinear warp round trips); final smoothing bounds the curvature
    tex = 128.0 + 112.0 * np.tanh(tex / 112.0)
    tex = ndimage.gaussian_filter(tex, sigma=1.9)
    return tex.astype(np.float32)


def generate_scene(seed: int, params: SceneParams = SceneParams()) -> SyntheticScene:
    """Procedural scene, deterministic per seed."""
    rng = np.random.default_rng(seed)
    w, h = params.texture_width, params.texture_height
    tex = _octave_noise(rng, h, w, params.octaves) * 70.0
    tex = tex + _soft_strokes(rng, h, w, params.n_lines, params.n_blobs)
    tex = _normalize_texture(tex)

    # straight path through the texture centre, headings along +x
    s = params.scale_m_per_px
    length_px = (params.path_points - 1) * params.path_spacing_m / s
    halfdiag = math.hypot(params.view_width, params.view_height) / 2.0
    pad = halfdiag + 60.0
    if length_px + 2 * pad > w or 2 * pad > h:
        raise ValueError(
            f"texture {w}x{h} too small for {params.path_points} path points "
            f"with {params.view_width}x{params.view_height} views"
        )
    u_start = (w - length_px) / 2.0
    v_mid = h / 2.0
    trajectory = tuple(
        Pose2((u_start + i * params.path_spacing_m / s) * s, v_mid * s, 0.0)
        for i in range(params.path_points)
    )
    # the region traverse views actually image: path plus half a view each way
    half_w, half_h = params.view_width / 2.0, params.view_height / 2.0
    footprint = (u_start - half_w, v_mid - half_h,
                 u_start + length_px + half_w, v_mid + half_h)

    mask = np.zeros((h, w), dtype=bool)
    discs: list[tuple[float, float, float]] = []
    if params.distractor_fraction > 0:
        u0 = max(footprint[0], 0.0)
        v0 = max(footprint[1], 0.0)
        u1 = min(footprint[2], float(w))
        v1 = min(footprint[3], float(h))
        vv, uu = np.mgrid[0:h, 0:w]
        area = (u1 - u0) * (v1 - v0)
        target = params.distractor_fraction
        # stratify disc centres along the path axis so coverage is even over
        # the traverse rather than clumped at one spot
        r_mean = 0.5 * (params.distractor_radius[0] + params.distractor_radius[1])
        n_cells = max(2, math.ceil(target * area / (math.pi * r_mean**2)))
        cell_w = (u1 - u0) / n_cells
        cell = 0
        for _ in range(500):
            region = mask[int(v0):int(v1), int(u0):int(u1)]
            covered = region.sum() / area
            if covered >= target:
                break
            cu = u0 + (cell % n_cells + rng.uniform(0.1, 0.9)) * cell_w
            cv = rng.uniform(v0, v1)
            cell += 1
            r = rng.uniform(*params.distractor_radius)
            # shrink the closing disc toward the remaining budget
            r_fit = math.sqrt((target - covered) * area / math.pi)
            r = max(params.distractor_radius[0], min(r, r_fit))
            mask |= (uu - cu) ** 2 + (vv - cv) ** 2 <= r**2
            discs.append((cu, cv, r))

    distractor_texture = _stripe_pattern(rng, h, w).astype(np.float32)

    return SyntheticScene(
        texture=tex,
        distractor_texture=distractor_texture,
        distractor_mask=mask,
        distractor_discs=tuple(discs),
        scale=s,
        plane_depth=params.plane_depth_m,
        parallax_factor=params.parallax_factor,
        trajectory=trajectory,
        footprint=footprint,
        view_size=(params.view_width, params.view_height),
    )


# ---------------------------------------------------------------------------
# rendering


def view_to_scene(scene: SyntheticScene, pose: Pose2,
                  image_size: tuple[int, int]) -> np.ndarray:
    """Homography (affine) taking view pixels to scene texture pixels."""
    w, h = image_size
    c = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    r = rot2(pose.theta)
    base = pose.xy / scene.scale
    t = base - r @ c
    return np.array(
        [[r[0, 0], r[0, 1], t[0]], [r[1, 0], r[1, 1], t[1]], [0.0, 0.0, 1.0]]
    )


def relative_homography(scene: SyntheticScene, pose_src: Pose2, pose_dst: Pose2,
                        image_size: tuple[int, int]) -> np.ndarray:
    """Ground-truth homography mapping src-view pixels to dst-view pixels."""
    a_src = view_to_scene(scene, pose_src, image_size)
    a_dst = view_to_scene(scene, pose_dst, image_size)
    return np.linalg.inv(a_dst) @ a_src


def _check_footprint(scene: SyntheticScene, coords_u: np.ndarray,
                     coords_v: np.ndarray) -> None:
    h, w = scene.texture.shape
    if (coords_u.min() < 0 or coords_u.max() > w - 1
            or coords_v.min() < 0 or coords_v.max() > h - 1):
        raise ValueError("pose outside the texture footprint")


def render_view(scene: SyntheticScene, pose: Pose2,
                image_size: tuple[int, int] | None = None,
                noise_sigma: float = 0.0, seed: int = 0,
                quantize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Render the camera view at a pose.

    Returns the 8-bit image and the exact view-to-scene homography of the
    planar content. Distractor regions are composited with parallax-amplified
    motion and their own texture; additive Gaussian noise is clipped to
    [0, 255]. ``quantize=False`` skips the uint8 rounding (float32 output)
    so resampling-consistency checks are not polluted by double quantization.
    """
    image_size = image_size or scene.view_size
    w, h = image_size
    c = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    e_u = xs.ravel() - c[0]
    e_v = ys.ravel() - c[1]
    r = rot2(pose.theta)
    base = pose.xy / scene.scale
    u = base[0] + r[0, 0] * e_u + r[0, 1] * e_v
    v = base[1] + r[1, 0] * e_u + r[1, 1] * e_v
    _check_footprint(scene, u, v)
    out = ndimage.map_coordinates(scene.texture, [v, u], order=1, mode="nearest")

    if scene.distractor_mask.any():
        in_mask = scene.distractor_mask[
            np.clip(np.rint(v).astype(int), 0, scene.texture.shape[0] - 1),
            np.clip(np.rint(u).astype(int), 0, scene.texture.shape[1] - 1),
        ]
        if in_mask.any():
            g = scene.parallax_factor
            ud = base[0] + (r[0, 0] * e_u[in_mask] + r[0, 1] * e_v[in_mask]) / g
            vd = base[1] + (r[1, 0] * e_u[in_mask] + r[1, 1] * e_v[in_mask]) / g
            out[in_mask] = ndimage.map_coordinates(
                scene.distractor_texture, [vd, ud], order=1, mode="nearest"
            )

    img = out.reshape(h, w)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        img = img + rng.normal(0.0, noise_sigma, img.shape)
    if quantize:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    else:
        img = np.clip(img, 0.0, 255.0).astype(np.float32)
    return img, view_to_scene(scene, pose, image_size)


def view_distractor_mask(scene: SyntheticScene, pose: Pose2,
                         image_size: tuple[int, int] | None = None) -> np.ndarray:
    """Boolean per-pixel planarity-violation mask for a view."""
    image_size = image_size or scene.view_size
    w, h = image_size
    a = view_to_scene(scene, pose, image_size)
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    u = a[0, 0] * xs + a[0, 1] * ys + a[0, 2]
    v = a[1, 0] * xs + a[1, 1] * ys + a[1, 2]
    iu = np.clip(np.rint(u).astype(int), 0, scene.texture.shape[1] - 1)
    iv = np.clip(np.rint(v).astype(int), 0, scene.texture.shape[0] - 1)
    return scene.distractor_mask[iv, iu]


# ---------------------------------------------------------------------------
# traverse generation


@dataclass(frozen=True)
class TraverseArtifacts:
    """Paths and in-memory ground truth of a generated traverse."""

    ref_manifest: Path
    query_manifest: Path
    coarse_path: Path
    benchmark_path: Path
    config_path: Path | None
    ref_poses: tuple[Pose2, ...]
    query_poses: tuple[Pose2, ...]
    coarse_indices: tuple[int, ...]

    def coarse_errors(self) -> np.ndarray:
        return np.array(
            [
                float(np.linalg.norm(q.xy - self.ref_poses[i].xy))
                for q, i in zip(self.query_poses, self.coarse_indices)
            ]
        )


def generate_traverse(
    scene: SyntheticScene,
    n_frames: int,
    coarse_noise_sigma: float = 0.0,
    out_dir: str | Path = ".",
    image_size: tuple[int, int] | None = None,
    query_offset_m: float = 0.08,
    query_yaw_deg: float = 0.3,
    render_noise_sigma: float = 2.0,
    coarse_offset_range: tuple[float, float] | None = None,
    max_coarse_offset_m: float | None = None,
    config_overrides: dict | None = None,
    seed: int = 0,
) -> TraverseArtifacts:
    """Emit a complete synthetic benchmark: reference manifest, query
    manifest, coarse match list, benchmark poses, and a ready config file.

    References sit on the scene's regular path; each query is a bounded
    perturbation of a path point. The coarse match for a query is the
    reference nearest to the query position displaced by either Gaussian
    noise of ``coarse_noise_sigma`` (optionally norm-clamped to
    ``max_coarse_offset_m``) or, when ``coarse_offset_range`` is given, an
    along-path displacement of uniformly drawn magnitude - the direct way to
    inject a controlled coarse localisation error.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if n_frames > len(scene.trajectory):
        raise ValueError(
            f"scene trajectory has {len(scene.trajectory)} points, need {n_frames}"
        )
    image_size = image_size or scene.view_size
    out_dir = Path(out_dir)
    (out_dir / "refs").mkdir(parents=True, exist_ok=True)
    (out_dir / "queries").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    ref_poses = scene.trajectory[:n_frames]
    ref_rows = []
    for i, pose in enumerate(ref_poses):
        img, _ = render_view(scene, pose, image_size, render_noise_sigma,
                             seed=seed * 100003 + i)
        rel = f"refs/ref_{i:05d}.pgm"
        refdb.save_pgm(out_dir / rel, img)
        ref_rows.append((i, float(i), rel, pose.x, pose.y, pose.theta, ""))
    ref_manifest = out_dir / "refs.csv"
    refdb.write_manifest(ref_manifest, ref_rows)

    yaw_cap = math.radians(query_yaw_deg)
    query_poses = []
    query_rows = []
    coarse_indices = []
    matches = {}
    ref_xy = np.array([p.xy for p in ref_poses])
    for i, anchor in enumerate(ref_poses):
        angle = rng.uniform(0, 2 * math.pi)
        radius = rng.uniform(0, query_offset_m)
        q = Pose2(
            anchor.x + radius * math.cos(angle),
            anchor.y + radius * math.sin(angle),
            rng.uniform(-yaw_cap, yaw_cap),
        )
        query_poses.append(q)
        img, _ = render_view(scene, q, image_size, render_noise_sigma,
                             seed=seed * 100003 + 50021 + i)
        rel = f"queries/query_{i:05d}.pgm"
        refdb.save_pgm(out_dir / rel, img)
        query_rows.append((i, float(i), rel, 0.0, 0.0, 0.0, ""))

        target = q.xy
        if coarse_offset_range is not None:
            lo, hi = coarse_offset_range
            disp = rng.uniform(lo, hi) * rng.choice([-1.0, 1.0])
            # keep the displaced target over the reference span so a
            # reference actually exists at the injected offset
            if not (ref_xy[0, 0] <= q.x + disp <= ref_xy[-1, 0]):
                disp = -disp
            target = target + np.array([disp, 0.0])
        elif coarse_noise_sigma > 0:
            noise = rng.normal(0.0, coarse_noise_sigma, 2)
            norm = float(np.linalg.norm(noise))
            if max_coarse_offset_m is not None and norm > max_coarse_offset_m:
                noise = noise * (max_coarse_offset_m / norm)
            target = target + noise
        matched = int(np.argmin(np.linalg.norm(ref_xy - target, axis=1)))
        coarse_indices.append(matched)
        matches[i] = float(matched)

    query_manifest = out_dir / "queries.csv"
    refdb.write_manifest(query_manifest, query_rows)
    coarse_path = out_dir / "coarse.txt"
    refdb.save_match_list(coarse_path, matches)
    benchmark_path = out_dir / "benchmark.csv"
    write_benchmark(benchmark_path, query_poses)

    config_path = out_dir / "config.cfg"
    overrides = {"scale_m_per_px": scene.scale}
    overrides.update(config_overrides or {})
    write_config(PipelineConfig(**overrides), config_path)

    return TraverseArtifacts(
        ref_manifest=ref_manifest,
        query_manifest=query_manifest,
        coarse_path=coarse_path,
        benchmark_path=benchmark_path,
        config_path=config_path,
        ref_poses=tuple(ref_poses),
        query_poses=tuple(query_poses),
        coarse_indices=tuple(coarse_indices),
    )


def write_benchmark(path: str | Path, poses: list[Pose2]) -> None:
    lines = ["query_index,x,y,theta"]
    for i, p in enumerate(poses):
        lines.append(f"{i},{p.x!r},{p.y!r},{p.theta!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_benchmark(path: str | Path) -> list[Pose2]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "query_index,x,y,theta":
        raise refdb.FormatError(f"{path}: bad benchmark header")
    poses: dict[int, Pose2] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise refdb.FormatError(f"{path}:{lineno}: expected 4 fields")
        idx = int(parts[0])
        poses[idx] = Pose2(float(parts[1]), float(parts[2]), float(parts[3]))
    if sorted(poses) != list(range(len(poses))):
        raise refdb.FormatError(f"{path}: query indices not contiguous from 0")
    return [poses[i] for i in range(len(poses))]
