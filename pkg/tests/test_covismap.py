"""Covisibility maps: accumulation, refinement, scene score, lookups."""

import numpy as np
import pytest

from covis.covismap import (
    CorrespondenceSet,
    CovisMap,
    build_covis_map,
    covis_at,
    refine_covis_map,
    scene_covis_score,
)
from covis.errors import EmptyInput, InconsistentN, OutOfBounds, ViewIdMismatch

from conftest import build_maps, identity_view, toy_scene_dict, build_scene


def make_set(src_view, dst_view, pixels, conf=1.0):
    pixels = np.asarray(pixels, dtype=np.float64)
    return CorrespondenceSet(
        src_view=src_view,
        dst_view=dst_view,
        src=pixels,
        dst=pixels,  # destination is irrelevant to accumulation
        conf=np.full(len(pixels), conf),
    )


def naive_recount(view, matches, min_conf=0.0):
    """Brute-force per-pixel recount, independent of the accumulation path."""
    counts = np.zeros((view.height, view.width), dtype=np.int32)
    for y in range(view.height):
        for x in range(view.width):
            total = 0
            for cset in matches:
                hit = False
                for (sx, sy), c in zip(cset.src, cset.conf):
                    if int(sx) == x and int(sy) == y and c >= min_conf:
                        hit = True
                        break
                total += hit
            counts[y, x] = total
    return counts


class TestBuildCovisMap:
    def test_pixel_matched_in_two_views_counts_two(self):
        view = identity_view(0, width=8, height=8)
        matches = [
            make_set(0, 1, [(2.5, 3.5)]),
            make_set(0, 2, [(2.1, 3.9)]),
        ]
        cmap = build_covis_map(view, matches, n_views=3)
        assert cmap.counts[3, 2] == 2
        assert cmap.counts.sum() == 2

    def test_same_destination_multiplicity_clamps_to_one(self):
        view = identity_view(0, width=8, height=8)
        matches = [make_set(0, 1, [(2.5, 3.5), (2.2, 3.2), (2.8, 3.8)])]
        cmap = build_covis_map(view, matches, n_views=3)
        assert cmap.counts[3, 2] == 1

    def test_no_sets_gives_zero_map(self):
        view = identity_view(0, width=8, height=8)
        cmap = build_covis_map(view, [], n_views=3)
        assert cmap.counts.sum() == 0

    def test_min_conf_filters(self):
        view = identity_view(0, width=8, height=8)
        matches = [make_set(0, 1, [(2.5, 3.5)], conf=0.4)]
        assert build_covis_map(view, matches, 3, min_conf=0.5).counts.sum() == 0
        assert build_covis_map(view, matches, 3, min_conf=0.4).counts.sum() == 1

    def test_wrong_source_view_rejected(self):
        view = identity_view(0, width=8, height=8)
        with pytest.raises(ViewIdMismatch):
            build_covis_map(view, [make_set(1, 2, [(1.0, 1.0)])], n_views=3)

    def test_duplicate_destination_rejected(self):
        view = identity_view(0, width=8, height=8)
        sets = [make_set(0, 1, [(1.0, 1.0)]), make_set(0, 1, [(2.0, 2.0)])]
        with pytest.raises(ViewIdMismatch):
            build_covis_map(view, sets, n_views=3)

    def test_randomized_matches_equal_brute_force(self):
        rng = np.random.default_rng(21)
        view = identity_view(0, width=12, height=9)
        for _ in range(5):
            matches = []
            for dst in range(1, 5):
                n = int(rng.integers(1, 40))
                px = np.stack(
                    [rng.uniform(0, view.width, n), rng.uniform(0, view.height, n)],
                    axis=1,
                )
                matches.append(
                    CorrespondenceSet(
                        src_view=0, dst_view=dst, src=px, dst=px,
                        conf=rng.uniform(0, 1, n),
                    )
                )
            min_conf = float(rng.uniform(0, 1))
            got = build_covis_map(view, matches, n_views=5, min_conf=min_conf)
            np.testing.assert_array_equal(
                got.counts, naive_recount(view, matches, min_conf)
            )

    def test_symmetric_input_total_counts(self):
        # With exactly mutual correspondences (every match emitted in both
        # directions between bijectively-paired pixels) the total count over
        # all maps equals twice the number of unordered matched pixel pairs.
        rng = np.random.default_rng(33)
        n_views, w, h = 4, 16, 12
        views = [identity_view(i, width=w, height=h) for i in range(n_views)]
        forward = {}
        n_pairs = 0
        for i in range(n_views):
            for j in range(i + 1, n_views):
                n = int(rng.integers(1, 60))
                ci = rng.choice(w * h, size=n, replace=False)
                cj = rng.choice(w * h, size=n, replace=False)
                pi = np.stack([ci % w, ci // w], axis=1).astype(np.float64)
                pj = np.stack([cj % w, cj // w], axis=1).astype(np.float64)
                forward[(i, j)] = (pi, pj)
                n_pairs += n
        sets = []
        for (i, j), (pi, pj) in forward.items():
            conf = np.ones(len(pi))
            sets.append(CorrespondenceSet(src_view=i, dst_view=j, src=pi, dst=pj, conf=conf))
            sets.append(CorrespondenceSet(src_view=j, dst_view=i, src=pj, dst=pi, conf=conf))
        total = 0
        for view in views:
            cmap = build_covis_map(
                view, [s for s in sets if s.src_view == view.view_id], n_views
            )
            total += int(cmap.counts.sum())
        assert total == 2 * n_pairs


class TestRefine:
    def make(self, counts, n_views=4):
        counts = np.asarray(counts, dtype=np.int32)
        return CovisMap(view_id=0, width=counts.shape[1], height=counts.shape[0],
                        counts=counts, n_views=n_views)

    def test_radius_zero_is_identity(self):
        rng = np.random.default_rng(0)
        cmap = self.make(rng.integers(0, 4, size=(10, 12)))
        assert refine_covis_map(cmap, 0) is cmap

    def test_isolated_speckle_removed(self):
        counts = np.zeros((9, 9), dtype=np.int32)
        counts[4, 4] = 1
        refined = refine_covis_map(self.make(counts), 1)
        assert refined.counts.sum() == 0

    def test_saturated_map_unchanged(self):
        counts = np.full((9, 9), 3, dtype=np.int32)
        refined = refine_covis_map(self.make(counts), 1)
        np.testing.assert_array_equal(refined.counts, counts)

    def test_level_sets_nested_and_bounded(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            counts = rng.integers(0, 5, size=(20, 24))
            cmap = self.make(counts, n_views=6)
            refined = refine_covis_map(cmap, 1)
            assert refined.counts.max() <= counts.max()
            # nesting: {c >= t+1} subset of {c >= t}
            for t in range(1, 5):
                hi = refined.counts >= t + 1
                lo = refined.counts >= t
                assert np.all(lo[hi])

    def test_recomposition_matches_per_level_openings(self):
        from scipy import ndimage

        rng = np.random.default_rng(15)
        counts = rng.integers(0, 4, size=(16, 16))
        cmap = self.make(counts)
        refined = refine_covis_map(cmap, 2)
        expect = np.zeros_like(counts)
        st = np.ones((5, 5), dtype=bool)
        for t in range(1, 4):
            mask = counts >= t
            opened = ndimage.binary_dilation(
                ndimage.binary_erosion(mask, st, border_value=1), st, border_value=0
            )
            expect += opened
        np.testing.assert_array_equal(refined.counts, expect)


class TestSceneScore:
    def make(self, counts, n_views):
        counts = np.asarray(counts, dtype=np.int32)
        return CovisMap(view_id=0, width=counts.shape[1], height=counts.shape[0],
                        counts=counts, n_views=n_views)

    def test_saturated_scene_scores_one(self):
        maps = [self.make(np.full((4, 4), 2), 3) for _ in range(3)]
        assert scene_covis_score(maps).S == 1.0

    def test_zero_maps_score_zero(self):
        maps = [self.make(np.zeros((4, 4)), 3) for _ in range(3)]
        assert scene_covis_score(maps).S == 0.0

    def test_hand_computed_case(self):
        # n=3: counts {2,2,0,0} -> mean 1/2 after /2; {1,1,1,1} -> 1/2
        m1 = self.make([[2, 2], [0, 0]], 3)
        m2 = self.make([[1, 1], [1, 1]], 3)
        score = scene_covis_score([m1, m2])
        np.testing.assert_allclose(score.per_view_means, [0.5, 0.5])
        assert score.S == 0.5

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        maps = [self.make(rng.integers(0, 3, size=(6, 8)), 4) for _ in range(5)]
        s1 = scene_covis_score(maps).S
        s2 = scene_covis_score(maps[::-1]).S
        assert s1 == s2

    def test_score_is_mean_of_means(self):
        rng = np.random.default_rng(4)
        maps = [self.make(rng.integers(0, 4, size=(6, 8)), 5) for _ in range(4)]
        score = scene_covis_score(maps)
        assert abs(score.S - np.mean(score.per_view_means)) < 1e-12

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            scene_covis_score([])

    def test_inconsistent_n(self):
        maps = [self.make(np.zeros((2, 2)), 3), self.make(np.zeros((2, 2)), 4)]
        with pytest.raises(InconsistentN):
            scene_covis_score(maps)

    def test_single_view_scene_scores_zero(self):
        maps = [self.make(np.zeros((4, 4)), 1)]
        assert scene_covis_score(maps).S == 0.0


class TestCovisAt:
    def make(self):
        counts = np.arange(12, dtype=np.int32).reshape(3, 4) % 4
        return CovisMap(view_id=0, width=4, height=3, counts=counts, n_views=5)

    def test_floor_convention(self):
        cmap = self.make()
        assert covis_at(cmap, (0.9, 0.9)) == cmap.counts[0, 0]
        assert covis_at(cmap, (3.999, 2.999)) == cmap.counts[2, 3]

    def test_out_of_bounds(self):
        cmap = self.make()
        with pytest.raises(OutOfBounds):
            covis_at(cmap, (4.0, 0.0))
        with pytest.raises(OutOfBounds):
            covis_at(cmap, (-0.1, 0.0))

    def test_agreement_with_direct_indexing(self):
        rng = np.random.default_rng(8)
        cmap = self.make()
        for _ in range(200):
            x = rng.uniform(0, 4)
            y = rng.uniform(0, 3)
            assert covis_at(cmap, (x, y)) == cmap.counts[int(y), int(x)]
