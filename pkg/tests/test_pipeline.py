import math
import struct

import numpy as np
import pytest

from ceilloc import pipeline, refdb
from ceilloc import synthbench as sb
from ceilloc.config import FilterConfig, PipelineConfig
from ceilloc.homest import PoseDelta
from ceilloc.pipeline import (
    LocalisationOutput,
    apply_delta,
    apply_filters,
    coarse_pose_of,
    evaluate,
    evaluate_coarse,
    invert_delta,
    load_results,
    refine_one,
    refine_traverse,
    write_results,
)
from ceilloc.refdb import ConfusionMatrix, Pose2, RefDatabase, RefEntry


def pose_bits(p: Pose2) -> bytes:
    return struct.pack("<ddd", p.x, p.y, p.theta)


def delta_of(yaw=0.0, tx=0.0, ty=0.0):
    return PoseDelta(yaw=yaw, pitch=0.0, roll=0.0,
                     t_pixels=np.array([tx, ty]) / 0.05,
                     t_metres=np.array([tx, ty]))


@pytest.fixture(scope="module")
def scene_db(small_scene):
    entries = []
    for i, pose in enumerate(small_scene.trajectory):
        img, _ = sb.render_view(small_scene, pose, noise_sigma=2.0, seed=100 + i)
        entries.append(RefEntry(id=i, timestamp=float(i), image=img, pose=pose))
    return RefDatabase(tuple(entries), default_scale=small_scene.scale)


class TestDeltaAlgebra:
    def test_apply_rotates_by_reference_heading(self):
        ref = Pose2(1.0, 2.0, math.pi / 2)
        out = apply_delta(ref, delta_of(yaw=0.1, tx=1.0, ty=0.0))
        assert out.x == pytest.approx(1.0)
        assert out.y == pytest.approx(3.0)
        assert out.theta == pytest.approx(math.pi / 2 + 0.1)

    def test_inverse_recovers_reference(self, rng):
        for _ in range(50):
            ref = Pose2(*rng.uniform(-5, 5, 2), rng.uniform(-3, 3))
            d = delta_of(yaw=float(rng.uniform(-0.5, 0.5)),
                         tx=float(rng.uniform(-2, 2)), ty=float(rng.uniform(-2, 2)))
            refined = apply_delta(ref, d)
            back = apply_delta(refined, invert_delta(d))
            assert abs(back.x - ref.x) < 1e-9
            assert abs(back.y - ref.y) < 1e-9
            assert abs(back.theta - ref.theta) < 1e-9


class TestFilters:
    @pytest.mark.parametrize("ratio,expect_ratio_pass", [
        (0.59, False), (0.60, True), (0.61, True),
    ])
    @pytest.mark.parametrize("t,expect_t_pass", [
        (1.99, True), (2.00, True), (2.01, False),
    ])
    def test_truth_table(self, ratio, expect_ratio_pass, t, expect_t_pass):
        fc = FilterConfig(n_th=0.60, d_th=2.0)
        reason = apply_filters(ratio, np.array([t, 0.0]), fc)
        if not expect_ratio_pass:
            assert reason == "low_inliers"
        elif not expect_t_pass:
            assert reason == "large_displacement"
        else:
            assert reason == "accepted"

    def test_both_axes_checked(self):
        fc = FilterConfig(n_th=0.60, d_th=2.0)
        assert apply_filters(0.9, np.array([0.1, 2.5]), fc) == "large_displacement"
        assert apply_filters(0.9, np.array([-2.5, 0.1]), fc) == "large_displacement"

    def test_monotonicity(self, rng):
        # loosening either threshold never flips accepted to rejected
        for _ in range(200):
            ratio = float(rng.uniform(0, 1))
            t = rng.uniform(-3, 3, 2)
            fc = FilterConfig(n_th=0.6, d_th=2.0)
            if apply_filters(ratio, t, fc) == "accepted":
                looser = FilterConfig(n_th=0.3, d_th=4.0)
                assert apply_filters(ratio, t, looser) == "accepted"


class TestRefineOne:
    def test_identity_query(self, scene_db, small_cfg):
        ref = scene_db.entries[5]
        out = refine_one(scene_db, ref.image, ref, small_cfg)
        assert out.refined and out.reason == "accepted"
        assert out.delta is not None
        assert np.linalg.norm(out.delta.t_metres) < 1e-9
        assert abs(out.delta.yaw) < 1e-9
        assert abs(out.pose.x - ref.pose.x) < 1e-9
        assert abs(out.pose.y - ref.pose.y) < 1e-9

    def test_refines_offset_query(self, small_scene, scene_db, small_cfg):
        ref = scene_db.entries[4]
        true_pose = Pose2(ref.pose.x + 0.62, ref.pose.y - 0.31,
                          ref.pose.theta + math.radians(0.3))
        query, _ = sb.render_view(small_scene, true_pose, noise_sigma=2.0, seed=999)
        out = refine_one(scene_db, query, ref, small_cfg)
        assert out.refined
        err = math.hypot(out.pose.x - true_pose.x, out.pose.y - true_pose.y)
        assert err < 0.05
        coarse_err = math.hypot(ref.pose.x - true_pose.x, ref.pose.y - true_pose.y)
        assert err < coarse_err / 5

    def test_matcher_failure_falls_back_bit_identical(self, scene_db, small_cfg):
        ref = scene_db.entries[2]
        flat = np.full_like(ref.image, 128)
        out = refine_one(scene_db, flat, ref, small_cfg)
        assert not out.refined and out.reason == "matcher_failure"
        assert out.pose is ref.pose
        assert pose_bits(out.pose) == pose_bits(ref.pose)

    def test_low_inliers_on_split_query(self, small_scene, scene_db, small_cfg):
        # two halves moving differently: no consensus above 60%
        ref = scene_db.entries[5]
        a, _ = sb.render_view(small_scene,
                              Pose2(ref.pose.x + 0.55, ref.pose.y, 0.0),
                              noise_sigma=0.0)
        b, _ = sb.render_view(small_scene,
                              Pose2(ref.pose.x - 0.55, ref.pose.y + 0.3, 0.0),
                              noise_sigma=0.0)
        split = a.copy()
        split[:, 100:] = b[:, 100:]
        out = refine_one(scene_db, split, ref, small_cfg)
        assert not out.refined
        assert out.reason in ("low_inliers", "matcher_failure")
        assert pose_bits(out.pose) == pose_bits(ref.pose)

    def test_large_displacement_fallback(self, small_scene, scene_db):
        cfg = PipelineConfig(l_patch=21, l_sr=40, n_points=12, grid_points=12,
                             margin=30, scale_m_per_px=0.05, d_th=0.5)
        ref = scene_db.entries[6]
        true_pose = Pose2(ref.pose.x + 0.72, ref.pose.y, ref.pose.theta)
        query, _ = sb.render_view(small_scene, true_pose, noise_sigma=1.0, seed=5)
        out = refine_one(scene_db, query, ref, cfg)
        assert not out.refined and out.reason == "large_displacement"
        assert pose_bits(out.pose) == pose_bits(ref.pose)
        assert out.delta is not None  # diagnostic delta still reported

    def test_heatmap_sampler_used_when_present(self, small_scene, scene_db,
                                               small_cfg, rng):
        ref = scene_db.entries[3]
        hm = (0.2 + 0.8 * rng.random(ref.image.shape)).astype(np.float32)
        hm = np.clip(hm, 0.0, 1.0)
        entry = RefEntry(id=99, timestamp=99.0, image=ref.image, pose=ref.pose,
                         heatmap=hm)
        db = RefDatabase((entry,), default_scale=small_scene.scale)
        out = refine_one(db, ref.image, entry, small_cfg)
        assert out.refined

    def test_no_scale_falls_back(self, scene_db, small_scene):
        cfg = PipelineConfig(l_patch=21, l_sr=40, n_points=12, grid_points=12,
                             margin=30, scale_m_per_px=None)
        ref = scene_db.entries[5]
        out = refine_one(scene_db, ref.image, ref, cfg)
        assert not out.refined and out.reason == "matcher_failure"


@pytest.fixture(scope="module")
def traverse(small_scene, tmp_path_factory):
    return sb.generate_traverse(
        small_scene, 8, out_dir=tmp_path_factory.mktemp("traverse"),
        coarse_offset_range=(0.5, 0.7), query_offset_m=0.05,
        query_yaw_deg=0.3, render_noise_sigma=2.0, seed=21)


class TestRefineTraverse:

    def test_end_to_end_improves_over_coarse(self, scene_db, small_cfg, traverse):
        queries = [refdb.load_pgm(traverse.query_manifest.parent / f"queries/query_{i:05d}.pgm")
                   for i in range(8)]
        matches = refdb.load_coarse(traverse.coarse_path)
        outputs = refine_traverse(scene_db, queries, matches, small_cfg)
        assert len(outputs) == 8
        assert [o.query_index for o in outputs] == list(range(8))
        bench = list(traverse.query_poses)
        refined = evaluate(outputs, bench)
        coarse = evaluate_coarse(outputs, bench)
        assert refined.mean_error < coarse.mean_error
        assert refined.acceptance_rate >= 0.7
        assert all(o.elapsed_ms > 0 for o in outputs)

    def test_statelessness_under_permutation(self, scene_db, small_cfg, traverse):
        queries = [refdb.load_pgm(traverse.query_manifest.parent / f"queries/query_{i:05d}.pgm")
                   for i in range(4)]
        matches = refdb.load_coarse(traverse.coarse_path)
        outputs = refine_traverse(scene_db, queries, {i: matches[i] for i in range(4)},
                                  small_cfg)
        perm = [2, 0, 3, 1]
        permuted = refine_traverse(scene_db, [queries[i] for i in perm],
                                   {j: matches[perm[j]] for j in range(4)},
                                   small_cfg)
        for j, i in enumerate(perm):
            assert permuted[j].pose == outputs[i].pose
            assert permuted[j].reason == outputs[i].reason

    def test_missing_coarse_entry(self, scene_db, small_cfg, traverse):
        queries = [refdb.load_pgm(traverse.query_manifest.parent / "queries/query_00000.pgm")]
        outputs = refine_traverse(scene_db, queries, {}, small_cfg)
        assert outputs[0].reason == "no_coarse_match"
        assert not outputs[0].refined

    def test_confusion_matrix_route(self, scene_db, small_cfg, traverse):
        queries = [refdb.load_pgm(traverse.query_manifest.parent / f"queries/query_{i:05d}.pgm")
                   for i in range(3)]
        n = len(scene_db.entries)
        scores = np.zeros((3, n))
        matches = refdb.load_coarse(traverse.coarse_path)
        for i in range(3):
            scores[i, int(matches[i])] = 1.0
        outputs_cm = refine_traverse(scene_db, queries, ConfusionMatrix(scores), small_cfg)
        outputs_ml = refine_traverse(scene_db, queries,
                                     {i: matches[i] for i in range(3)}, small_cfg)
        for a, b in zip(outputs_cm, outputs_ml):
            assert a.pose == b.pose and a.reason == b.reason


class TestEvaluate:
    def _out(self, i, pose, refined=False, delta=None):
        return LocalisationOutput(query_index=i, pose=pose, refined=refined,
                                  reason="accepted" if refined else "low_inliers",
                                  inlier_ratio=1.0 if refined else 0.0, delta=delta)

    def test_zero_error(self):
        bench = [Pose2(i, 0, 0) for i in range(5)]
        outs = [self._out(i, p) for i, p in enumerate(bench)]
        rep = evaluate(outs, bench)
        assert rep.mean_error == 0.0
        assert rep.frames_excluded == 0

    def test_constructed_offsets_mean(self):
        bench = [Pose2(0, 0, 0)] * 3
        outs = [self._out(i, Pose2(d, 0, 0)) for i, d in enumerate([1.0, 2.0, 3.0])]
        rep = evaluate(outs, bench)
        assert rep.mean_error == pytest.approx(2.0)
        assert rep.median_error == pytest.approx(2.0)
        assert rep.max_error == pytest.approx(3.0)

    def test_exclusion_by_coarse_error(self):
        bench = [Pose2(0, 0, 0), Pose2(0, 0, 0)]
        outs = [self._out(0, Pose2(1.0, 0, 0)), self._out(1, Pose2(12.0, 0, 0))]
        rep = evaluate(outs, bench, exclusion_m=10.0)
        assert rep.frames_excluded == 1
        assert rep.frames_evaluated == 1
        assert rep.mean_error == pytest.approx(1.0)

    def test_exclusion_uses_coarse_not_refined_error(self):
        # refined frame at 12 m coarse error must be dropped even though its
        # refined error is small
        bench = [Pose2(0, 0, 0)]
        delta = delta_of(yaw=0.0, tx=-11.9, ty=0.0)
        refined_pose = apply_delta(Pose2(12.0, 0, 0), delta)
        outs = [self._out(0, refined_pose, refined=True, delta=delta)]
        assert math.hypot(refined_pose.x, refined_pose.y) < 1.0
        rep = evaluate(outs, bench, exclusion_m=10.0)
        assert rep.frames_excluded == 1 and rep.frames_evaluated == 0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            evaluate([], [Pose2(0, 0, 0)])

    def test_split_means(self):
        bench = [Pose2(0, 0, 0)] * 2
        outs = [
            self._out(0, Pose2(0.1, 0, 0), refined=True, delta=delta_of(tx=0.1)),
            self._out(1, Pose2(1.0, 0, 0)),
        ]
        rep = evaluate(outs, bench)
        assert rep.mean_error_refined == pytest.approx(0.1)
        assert rep.mean_error_fallback == pytest.approx(1.0)
        assert rep.acceptance_rate == pytest.approx(0.5)

    def test_coarse_pose_recovery(self):
        ref = Pose2(3.0, -1.0, 0.4)
        d = delta_of(yaw=0.12, tx=0.5, ty=-0.2)
        out = self._out(0, apply_delta(ref, d), refined=True, delta=d)
        back = coarse_pose_of(out)
        assert abs(back.x - ref.x) < 1e-9
        assert abs(back.y - ref.y) < 1e-9


class TestResultsFile:
    def test_round_trip(self, tmp_path):
        outs = [
            LocalisationOutput(0, Pose2(1.25, -0.5, 0.3), True, "accepted", 0.9,
                               delta=delta_of(0.05, 0.2, -0.1), elapsed_ms=12.5),
            LocalisationOutput(1, Pose2(2.0, 0.0, -0.1), False, "low_inliers", 0.4,
                               elapsed_ms=8.0),
        ]
        path = tmp_path / "results.csv"
        write_results(outs, path)
        back = load_results(path)
        assert len(back) == 2
        assert back[0].pose == outs[0].pose
        assert back[0].refined and back[1].reason == "low_inliers"
        assert back[0].delta is not None
        np.testing.assert_allclose(back[0].delta.t_metres, [0.2, -0.1])
        assert back[1].delta is None

    def test_header_has_spec_prefix(self, tmp_path):
        write_results([], tmp_path / "r.csv")
        header = (tmp_path / "r.csv").read_text().splitlines()[0]
        assert header.startswith(
            "query_index,refined,reason,x,y,theta,inlier_ratio,elapsed_ms")

    def test_invariant_enforced(self):
        with pytest.raises(ValueError):
            LocalisationOutput(0, Pose2(0, 0, 0), True, "low_inliers", 0.0)
