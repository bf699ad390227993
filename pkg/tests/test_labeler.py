import math

import numpy as np
import pytest

from ceilloc import labeler
from ceilloc import synthbench as sb
from ceilloc.config import PipelineConfig
from ceilloc.labeler import (
    LABEL_INLIER,
    LABEL_OUTLIER,
    LABEL_UNMATCHED,
    export_labels,
    label_pair,
    label_pairs,
    load_labels,
)
from ceilloc.refdb import Pose2


@pytest.fixture(scope="module")
def label_cfg():
    return PipelineConfig(l_patch=15, l_sr=40, n_points=12, grid_points=24,
                          margin=30, scale_m_per_px=0.05)


class TestLabelPair:
    def test_identical_images_all_inlier(self, small_scene, label_cfg):
        img, _ = sb.render_view(small_scene, small_scene.trajectory[4],
                                noise_sigma=2.0, seed=1)
        frame = label_pair(img, img, 0, label_cfg)
        assert frame.usable
        assert len(frame.points) == 24  # default evaluation grid density
        assert all(code == LABEL_INLIER for _, _, code in frame.points)

    def test_counts_partition_grid(self, distractor_scene, label_cfg):
        ref_pose = distractor_scene.trajectory[3]
        q_pose = Pose2(ref_pose.x + 0.4, ref_pose.y + 0.05, math.radians(0.2))
        ref, _ = sb.render_view(distractor_scene, ref_pose, noise_sigma=1.5, seed=2)
        query, _ = sb.render_view(distractor_scene, q_pose, noise_sigma=1.5, seed=3)
        frame = label_pair(ref, query, 0, label_cfg, grid_points=60)
        n_in, n_out, n_un = frame.counts()
        assert n_in + n_out + n_un == 60 == len(frame.points)
        assert all(0 <= x < 200 and 0 <= y < 160 for x, y, _ in frame.points)

    def test_noise_free_planar_pair_no_outliers(self, small_scene, label_cfg):
        ref_pose = small_scene.trajectory[5]
        q_pose = Pose2(ref_pose.x + 0.35, ref_pose.y - 0.1, 0.0)
        ref, _ = sb.render_view(small_scene, ref_pose, noise_sigma=0.0)
        query, _ = sb.render_view(small_scene, q_pose, noise_sigma=0.0)
        frame = label_pair(ref, query, 0, label_cfg, grid_points=40)
        assert frame.counts()[1] == 0

    def test_distractor_agreement_with_generator(self, distractor_scene, label_cfg):
        # points on 3D structure come out as outliers, planar ones as inliers
        rates = []
        for seed, off in [(0, 0.45), (1, -0.42), (2, 0.38)]:
            ref_pose = distractor_scene.trajectory[4]
            q_pose = Pose2(ref_pose.x + off, ref_pose.y + 0.08, math.radians(0.2))
            ref, _ = sb.render_view(distractor_scene, ref_pose,
                                    noise_sigma=1.5, seed=seed * 2 + 100)
            query, _ = sb.render_view(distractor_scene, q_pose,
                                      noise_sigma=1.5, seed=seed * 2 + 101)
            frame = label_pair(ref, query, 0, label_cfg, grid_points=80, seed=seed)
            qmask = sb.view_distractor_mask(distractor_scene, q_pose)
            expected = [LABEL_OUTLIER if qmask[y, x] else LABEL_INLIER
                        for x, y, _ in frame.points]
            got = [code for _, _, code in frame.points]
            rates.append(np.mean([e == g for e, g in zip(expected, got)]))
            assert sum(e == LABEL_OUTLIER for e in expected) >= 5
        assert min(rates) >= 0.90

    def test_distractor_outlier_fraction_tracks_area(self):
        # dense grids across a long traverse: mean outlier fraction within
        # +-0.1 of the generated 0.2 area fraction
        params = sb.SceneParams(
            texture_width=1250, texture_height=640, scale_m_per_px=0.05,
            path_points=40, path_spacing_m=0.25, view_width=200,
            view_height=160, distractor_fraction=0.2,
            distractor_radius=(30, 44), parallax_factor=1.8,
            n_lines=35, n_blobs=22)
        scene = sb.generate_scene(13, params)
        assert abs(scene.distractor_area_fraction() - 0.2) <= 0.05
        cfg = PipelineConfig(l_patch=15, l_sr=40, n_points=12, grid_points=24,
                             margin=20, scale_m_per_px=0.05)
        fractions = []
        for seed, anchor in enumerate(range(3, 37, 4)):
            ref_pose = scene.trajectory[anchor]
            q_pose = Pose2(ref_pose.x + (0.3 if anchor % 2 else -0.3),
                           ref_pose.y + 0.05, 0.0)
            ref, _ = sb.render_view(scene, ref_pose, noise_sigma=1.5, seed=seed + 300)
            query, _ = sb.render_view(scene, q_pose, noise_sigma=1.5, seed=seed + 400)
            frame = label_pair(ref, query, 0, cfg, grid_points=80, seed=seed)
            fractions.append(frame.counts()[1] / len(frame.points))
        assert abs(np.mean(fractions) - 0.2) <= 0.1

    def test_unusable_frame_when_matching_fails(self, label_cfg, rng):
        ref = rng.integers(0, 256, (160, 200), dtype=np.uint8)
        flat = np.full((160, 200), 90, dtype=np.uint8)
        frame = label_pair(ref, flat, 7, label_cfg)
        assert not frame.usable
        assert all(code == LABEL_UNMATCHED for _, _, code in frame.points)

    def test_deterministic_given_seed(self, distractor_scene, label_cfg):
        ref_pose = distractor_scene.trajectory[2]
        q_pose = Pose2(ref_pose.x + 0.3, ref_pose.y, 0.0)
        ref, _ = sb.render_view(distractor_scene, ref_pose, noise_sigma=1.5, seed=9)
        query, _ = sb.render_view(distractor_scene, q_pose, noise_sigma=1.5, seed=10)
        a = label_pair(ref, query, 0, label_cfg, seed=5)
        b = label_pair(ref, query, 0, label_cfg, seed=5)
        assert a == b

    def test_size_mismatch(self, label_cfg, rng):
        ref = rng.integers(0, 256, (160, 200), dtype=np.uint8)
        with pytest.raises(ValueError):
            label_pair(ref, ref[:100], 0, label_cfg)


class TestExport:
    def _frame(self, image_id=0):
        return labeler.LabeledFrame(
            image_id=image_id,
            points=((40, 40, LABEL_INLIER), (60, 40, LABEL_OUTLIER),
                    (80, 40, LABEL_UNMATCHED)),
        )

    def test_single_inlier_two_lines(self, tmp_path):
        frame = labeler.LabeledFrame(image_id=3, points=((10, 20, LABEL_INLIER),))
        path = tmp_path / "labels.txt"
        export_labels([frame], path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0] == "frames=1 points=1 inliers=1 outliers=0 unmatched=0"
        assert lines[1] == "3,10,20,1"

    def test_round_trip(self, tmp_path):
        frames = [self._frame(0), self._frame(4)]
        path = tmp_path / "labels.txt"
        export_labels(frames, path)
        back = load_labels(path)
        assert len(back) == 2
        assert back[0].points == frames[0].points
        assert back[1].image_id == 4

    def test_header_counts_match_frame_sums(self, tmp_path, small_scene, label_cfg):
        img1, _ = sb.render_view(small_scene, small_scene.trajectory[2],
                                 noise_sigma=2.0, seed=4)
        img2, _ = sb.render_view(small_scene, small_scene.trajectory[3],
                                 noise_sigma=2.0, seed=5)
        frames = label_pairs([(img1, img1, 0), (img2, img2, 1)], label_cfg,
                             grid_points=20)
        path = tmp_path / "labels.txt"
        export_labels(frames, path)
        header = path.read_text().splitlines()[0]
        n_in = sum(f.counts()[0] for f in frames)
        assert f"inliers={n_in}" in header
        assert "points=40" in header

    def test_empty_export_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            export_labels([], tmp_path / "labels.txt")
