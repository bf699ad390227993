import numpy as np
import pytest

from ceilloc import matcher
from ceilloc.matcher import FlowVector, MatchConfig, MatchWindowError, match_all, match_point
from ceilloc.sampler import SamplePoint


def brute_force_match(ref, query, px, py, l_patch, l_sr):
    """Independent double loop over candidate centres; smallest (dy, dx) wins
    ties."""
    side = l_patch if l_patch % 2 == 1 else l_patch + 1
    half = side // 2
    h, w = query.shape
    patch = ref[py - half:py + half + 1, px - half:px + half + 1].astype(np.int64)
    r = l_sr // 2
    best = None
    for qy in range(py - r, py - r + l_sr):
        for qx in range(px - r, px - r + l_sr):
            if qx < half or qy < half or qx > w - 1 - half or qy > h - 1 - half:
                continue
            cand = query[qy - half:qy + half + 1, qx - half:qx + half + 1].astype(np.int64)
            sad = int(np.abs(cand - patch).sum())
            key = (sad, qy - py, qx - px)
            if best is None or key < best[0]:
                best = (key, qx, qy)
    return best  # ((sad, dy, dx), qx, qy)


def shifted(img, dx, dy):
    """Zero-filled integer translation: content at (x, y) moves to (x+dx, y+dy)."""
    out = np.zeros_like(img)
    h, w = img.shape
    xs0, xs1 = max(0, dx), min(w, w + dx)
    ys0, ys1 = max(0, dy), min(h, h + dy)
    out[ys0:ys1, xs0:xs1] = img[ys0 - dy:ys1 - dy, xs0 - dx:xs1 - dx]
    return out


class TestMatchConfig:
    def test_even_patch_adjusted_to_odd(self):
        assert MatchConfig(l_patch=40).patch_side == 41
        assert MatchConfig(l_patch=60).patch_side == 61
        assert MatchConfig(l_patch=41).patch_side == 41

    def test_deployed_configs_construct(self):
        a = MatchConfig(l_patch=40, l_sr=40)
        b = MatchConfig(l_patch=60, l_sr=70)
        assert a.margin == 20 and b.margin == 30

    def test_validation(self):
        with pytest.raises(ValueError):
            MatchConfig(l_patch=2)
        with pytest.raises(ValueError):
            MatchConfig(l_sr=0)


class TestFlowVector:
    def test_displacement_consistency(self):
        f = FlowVector(ref_x=10, ref_y=20, query_x=17, query_y=15,
                       sad_score=1.0, rejected=False)
        assert (f.dx, f.dy) == (7, -5)
        assert f.query_point == (17, 15)


class TestMatchPoint:
    def test_identity(self, rng):
        img = rng.integers(0, 256, (64, 64), dtype=np.uint8)
        f = match_point(img, img, SamplePoint(30, 30), MatchConfig(l_patch=9, l_sr=15))
        assert (f.dx, f.dy) == (0, 0)
        assert f.sad_score == 0.0
        assert not f.rejected

    def test_known_shift(self, rng):
        img = rng.integers(0, 256, (80, 90), dtype=np.uint8)
        query = shifted(img, 7, -3)
        f = match_point(img, query, SamplePoint(45, 40), MatchConfig(l_patch=11, l_sr=21))
        assert (f.dx, f.dy) == (7, -3)
        assert f.sad_score == 0.0

    def test_displacement_within_half_window(self, rng):
        cfg = MatchConfig(l_patch=9, l_sr=13)
        for _ in range(20):
            ref = rng.integers(0, 256, (48, 48), dtype=np.uint8)
            query = rng.integers(0, 256, (48, 48), dtype=np.uint8)
            f = match_point(ref, query, SamplePoint(24, 24), cfg)
            assert abs(f.dx) <= 6 and abs(f.dy) <= 6

    def test_matches_brute_force_oracle(self, rng):
        cfg = MatchConfig(l_patch=9, l_sr=15)
        for _ in range(30):
            ref = rng.integers(0, 256, (64, 64), dtype=np.uint8)
            query = rng.integers(0, 256, (64, 64), dtype=np.uint8)
            px, py = int(rng.integers(8, 56)), int(rng.integers(8, 56))
            f = match_point(ref, query, SamplePoint(px, py), cfg)
            (sad, dy, dx), qx, qy = brute_force_match(ref, query, px, py, 9, 15)
            assert (f.dx, f.dy) == (dx, dy)
            assert f.sad_score == pytest.approx(sad / 81.0)

    def test_oracle_near_borders(self, rng):
        # window clipping: point close to the query edge
        cfg = MatchConfig(l_patch=9, l_sr=15)
        ref = rng.integers(0, 256, (40, 40), dtype=np.uint8)
        query = rng.integers(0, 256, (40, 40), dtype=np.uint8)
        for px, py in [(5, 20), (34, 20), (20, 5), (34, 34)]:
            f = match_point(ref, query, SamplePoint(px, py), cfg)
            (sad, dy, dx), _, _ = brute_force_match(ref, query, px, py, 9, 15)
            assert (f.dx, f.dy) == (dx, dy)

    def test_numpy_and_numba_paths_agree(self, rng):
        if not matcher.HAVE_NUMBA:
            pytest.skip("numba unavailable")
        cfg = MatchConfig(l_patch=11, l_sr=17)
        ref = rng.integers(0, 256, (60, 60), dtype=np.uint8)
        query = rng.integers(0, 256, (60, 60), dtype=np.uint8)
        p = SamplePoint(30, 30)
        matcher.USE_NUMBA = True
        a = match_point(ref, query, p, cfg)
        matcher.USE_NUMBA = False
        try:
            b = match_point(ref, query, p, cfg)
        finally:
            matcher.USE_NUMBA = matcher.HAVE_NUMBA
        assert a == b

    def test_deterministic(self, rng):
        ref = rng.integers(0, 256, (50, 50), dtype=np.uint8)
        query = rng.integers(0, 256, (50, 50), dtype=np.uint8)
        p = SamplePoint(25, 25)
        cfg = MatchConfig(l_patch=9, l_sr=11)
        assert match_point(ref, query, p, cfg) == match_point(ref, query, p, cfg)

    def test_flat_surface_rejected(self):
        ref = np.full((40, 40), 128, dtype=np.uint8)
        f = match_point(ref, ref, SamplePoint(20, 20), MatchConfig(l_patch=9, l_sr=15))
        assert f.rejected

    def test_poor_absolute_score_rejected(self, rng):
        ref = rng.integers(0, 256, (40, 40), dtype=np.uint8)
        query = 255 - ref  # inverted: every candidate is a bad match
        f = match_point(ref, query, SamplePoint(20, 20),
                        MatchConfig(l_patch=9, l_sr=15, max_sad=40.0))
        assert f.rejected

    def test_window_too_small_raises(self):
        ref = np.zeros((21, 21), dtype=np.uint8)
        query = np.zeros((21, 21), dtype=np.uint8)
        # patch fits in ref at the centre but no candidate fits in the query
        with pytest.raises((MatchWindowError, ValueError)):
            match_point(ref, query, SamplePoint(1, 1), MatchConfig(l_patch=19, l_sr=1))


class TestSadProperties:
    def test_sad_zero_on_self_and_symmetry(self, rng):
        a = rng.integers(0, 256, (9, 9), dtype=np.uint8)
        b = rng.integers(0, 256, (9, 9), dtype=np.uint8)
        sad_ab = matcher._sad_map(a, b)[0, 0]
        sad_ba = matcher._sad_map(b, a)[0, 0]
        assert matcher._sad_map(a, a)[0, 0] == 0
        assert sad_ab == sad_ba
        assert sad_ab >= 0


class TestMatchAll:
    def test_empty_points(self, rng):
        img = rng.integers(0, 256, (40, 40), dtype=np.uint8)
        assert match_all(img, img, [], MatchConfig(l_patch=9, l_sr=9)) == []

    def test_identity_images_give_zero_vectors(self, rng):
        img = rng.integers(0, 256, (128, 128), dtype=np.uint8)
        pts = [SamplePoint(20 + 8 * i, 30 + 5 * i) for i in range(12)]
        flows = match_all(img, img, pts, MatchConfig(l_patch=9, l_sr=15))
        assert len(flows) == 12
        assert all((f.dx, f.dy) == (0, 0) for f in flows)

    def test_order_preserved_and_independent(self, rng):
        ref = rng.integers(0, 256, (60, 60), dtype=np.uint8)
        query = rng.integers(0, 256, (60, 60), dtype=np.uint8)
        pts = [SamplePoint(int(x), int(y))
               for x, y in rng.integers(10, 50, (8, 2))]
        cfg = MatchConfig(l_patch=9, l_sr=11)
        flows = match_all(ref, query, pts, cfg)
        rev = match_all(ref, query, pts[::-1], cfg)
        assert flows == rev[::-1]
