"""Point-cloud enhancement stages against brute-force references."""

import numpy as np
import pytest
from scipy.spatial import cKDTree

from covis.cloud import SOURCE_COLMAP, SOURCE_MONO, SOURCE_TRIANGULATED, PointCloud
from covis.covismap import CovisMap
from covis.enhance import (
    apply_scale,
    assemble_final,
    default_epsilon,
    enhance_scene,
    fit_scale,
    merge_clouds,
    split_by_covisibility,
    triangulate_correspondences,
    unproject_depth,
)
from covis.errors import (
    DimensionMismatch,
    EmptyBase,
    FrameMismatch,
    InsufficientPairs,
    MapViewMismatch,
    NoCorrespondences,
    NonPositiveScale,
)
from covis.geometry import camera_to_world, project, world_to_camera
from covis.scene_io import DepthMap, SceneBundle
from covis.synth import SceneSpec, generate_scene, oracle_nearest_neighbor

from conftest import (
    build_maps,
    build_scene,
    identity_view,
    patch_scene_dict,
    toy_scene_dict,
    wide_scene_dict,
)


def cloud_of(positions, source=SOURCE_COLMAP):
    return PointCloud.build(np.asarray(positions, dtype=np.float64), source=source)


class TestTriangulateCorrespondences:
    def test_exact_matches_recover_ground_truth(self, wide_bundle):
        bundle, gt = wide_bundle
        tri = triangulate_correspondences(bundle, gate_px=2.0)
        assert len(tri) > 500
        errs = [
            np.linalg.norm(p - gt.points[int(v)][int(py), int(px)])
            for p, v, (px, py) in zip(tri.positions, tri.origin_views, tri.origin_pixels)
        ]
        assert max(errs) < 1e-5

    def test_no_duplicates(self, wide_bundle):
        bundle, _ = wide_bundle
        tri = triangulate_correspondences(bundle, gate_px=2.0)
        dist, _ = cKDTree(tri.positions).query(tri.positions, k=2)
        assert dist[:, 1].min() > 1e-9

    def test_heavy_noise_under_gate_yields_empty(self):
        # Full-visibility 8-view patch: every source pixel has 7 matches, so
        # 5 px noise cannot hide in any single pair's epipolar direction.
        bundle, _ = build_scene(patch_scene_dict(), noise_px=5.0, corr_seed=0)
        tri = triangulate_correspondences(bundle, gate_px=2.0)
        assert len(tri) == 0

    def test_single_view_rejected(self):
        bundle, _ = build_scene(toy_scene_dict())
        solo = SceneBundle(views=bundle.views[:1], colmap_points=bundle.colmap_points)
        with pytest.raises(NoCorrespondences):
            triangulate_correspondences(solo)

    def test_no_correspondence_sets_rejected(self):
        bundle, _ = build_scene(toy_scene_dict())
        bare = SceneBundle(views=bundle.views, colmap_points=bundle.colmap_points)
        with pytest.raises(NoCorrespondences):
            triangulate_correspondences(bare)

    def test_all_points_pass_gate_post_hoc(self, wide_bundle):
        from covis.geometry import reprojection_error

        bundle, _ = wide_bundle
        views = {v.view_id: v for v in bundle.views}
        tri = triangulate_correspondences(bundle, gate_px=2.0)
        # spot-check: the origin-view reprojection of each point stays gated
        for p, vid, px in zip(tri.positions, tri.origin_views, tri.origin_pixels):
            assert reprojection_error(views[int(vid)], p, px) <= 2.0


class TestMergeClouds:
    def test_coincident_point_excluded_for_any_epsilon(self):
        base = cloud_of([[0, 0, 0], [1, 0, 0]])
        extra = cloud_of([[0, 0, 0]], source=SOURCE_TRIANGULATED)
        for eps in (1e-12, 0.1, 2.0):
            merged = merge_clouds(base, extra, eps)
            assert len(merged) == 2

    def test_zero_epsilon_keeps_distinct_points(self):
        base = cloud_of([[0, 0, 0]])
        extra = cloud_of([[1e-9, 0, 0]], source=SOURCE_TRIANGULATED)
        merged = merge_clouds(base, extra, 0.0)
        assert len(merged) == 2

    def test_empty_base_rejected(self):
        with pytest.raises(EmptyBase):
            merge_clouds(PointCloud.empty(), cloud_of([[0, 0, 0]]), 0.5)

    def test_matches_brute_force_on_random_clouds(self):
        rng = np.random.default_rng(30)
        for _ in range(20):
            base = cloud_of(rng.uniform(-1, 1, size=(int(rng.integers(1, 200)), 3)))
            extra = cloud_of(
                rng.uniform(-1, 1, size=(int(rng.integers(1, 200)), 3)),
                source=SOURCE_TRIANGULATED,
            )
            eps = float(rng.uniform(0, 0.5))
            merged = merge_clouds(base, extra, eps)
            dists = oracle_nearest_neighbor(base, extra.positions)
            expect = len(base) + int(np.sum(dists > eps))
            assert len(merged) == expect

    def test_strictness_post_hoc(self):
        rng = np.random.default_rng(31)
        base = cloud_of(rng.uniform(-1, 1, size=(100, 3)))
        extra = cloud_of(rng.uniform(-1, 1, size=(300, 3)), source=SOURCE_TRIANGULATED)
        eps = 0.2
        merged = merge_clouds(base, extra, eps)
        added = merged.subset(merged.sources == SOURCE_TRIANGULATED)
        assert np.all(oracle_nearest_neighbor(base, added.positions) > eps)


class TestSplitByCovisibility:
    def make_map(self, view, counts):
        return CovisMap(view_id=view.view_id, width=view.width, height=view.height,
                        counts=counts, n_views=3)

    def test_point_on_covisible_pixel_is_low(self):
        view = identity_view(0, f=50, width=100, height=100)
        counts = np.zeros((100, 100), dtype=np.int32)
        counts[50, 50] = 2
        cloud = cloud_of([[0, 0, 2.0]])  # projects to pixel (50, 50)
        low, high = split_by_covisibility(cloud, [view], [self.make_map(view, counts)])
        assert len(low) == 1 and len(high) == 0

    def test_point_outside_all_frusta_is_high(self):
        view = identity_view(0, f=50, width=100, height=100)
        counts = np.full((100, 100), 2, dtype=np.int32)
        cloud = cloud_of([[0, 0, -5.0]])
        low, high = split_by_covisibility(cloud, [view], [self.make_map(view, counts)])
        assert len(low) == 0 and len(high) == 1

    def test_partition_is_exact(self, toy_bundle):
        bundle, _ = toy_bundle
        maps = build_maps(bundle)
        tri = triangulate_correspondences(bundle)
        merged = merge_clouds(bundle.colmap_points, tri, 0.01)
        low, high = split_by_covisibility(merged, bundle.views, maps)
        assert len(low) + len(high) == len(merged)
        joined = np.concatenate([low.positions, high.positions])
        assert np.array_equal(np.sort(joined, axis=0), np.sort(merged.positions, axis=0))

    def test_matches_brute_force(self, toy_bundle):
        from covis.covismap import covis_at

        bundle, _ = toy_bundle
        maps = build_maps(bundle)
        rng = np.random.default_rng(9)
        cloud = cloud_of(rng.uniform(-3, 3, size=(400, 3)) + np.array([0, 0, 4.0]))
        low, _high = split_by_covisibility(cloud, bundle.views, maps)
        low_set = {tuple(p) for p in low.positions}
        for p in cloud.positions:
            expect = False
            for view, cmap in zip(bundle.views, maps):
                pr = project(view, p)
                if pr is not None and covis_at(cmap, pr[:2]) >= 1:
                    expect = True
                    break
            assert (tuple(p) in low_set) == expect

    def test_mismatched_maps_rejected(self, toy_bundle):
        bundle, _ = toy_bundle
        maps = build_maps(bundle)
        with pytest.raises(MapViewMismatch):
            split_by_covisibility(cloud_of([[0, 0, 4]]), bundle.views, maps[:-1])


class TestUnprojectDepth:
    def setup_view(self):
        view = identity_view(0, f=50, width=40, height=30)
        rng = np.random.default_rng(12)
        values = rng.uniform(1.0, 5.0, size=(30, 40)).astype(np.float32)
        values[5:8, :] = -1.0  # invalid band
        depth = DepthMap.from_values(values)
        counts = rng.integers(0, 3, size=(30, 40)).astype(np.int32)
        cmap = CovisMap(view_id=0, width=40, height=30, counts=counts, n_views=3)
        return view, depth, cmap

    def test_all_covisible_gives_empty_mono(self):
        view = identity_view(0, f=50, width=8, height=8)
        depth = DepthMap.from_values(np.ones((8, 8), dtype=np.float32))
        counts = np.ones((8, 8), dtype=np.int32)
        cmap = CovisMap(view_id=0, width=8, height=8, counts=counts, n_views=2)
        covisible, mono = unproject_depth(view, depth, cmap, stride=1)
        assert len(mono) == 0 and len(covisible) == 64

    def test_principal_pixel_unprojects_on_axis(self):
        view = identity_view(0, f=50, width=9, height=9)  # cx=cy=4.5
        depth = DepthMap.from_values(np.ones((9, 9), dtype=np.float32))
        counts = np.zeros((9, 9), dtype=np.int32)
        cmap = CovisMap(view_id=0, width=9, height=9, counts=counts, n_views=2)
        covisible, mono = unproject_depth(view, depth, cmap, stride=1)
        # pixel (4, 4) is at (4 - 4.5)/50 offset; exact center would be 4.5
        idx = 4 * 9 + 4
        np.testing.assert_allclose(
            mono.positions[idx], [(4 - 4.5) / 50, (4 - 4.5) / 50, 1.0], atol=1e-12
        )

    def test_split_matches_count_histogram(self):
        view, depth, cmap = self.setup_view()
        for stride in (1, 2, 4, 5):
            covisible, mono = unproject_depth(view, depth, cmap, stride=stride)
            ys, xs = np.meshgrid(
                np.arange(0, 30, stride), np.arange(0, 40, stride), indexing="ij"
            )
            valid = depth.valid_mask[ys, xs]
            c = cmap.counts[ys, xs][valid]
            assert len(covisible) == int(np.sum(c >= 1))
            assert len(mono) == int(np.sum(c == 0))

    def test_dimension_mismatch_rejected(self):
        view, depth, cmap = self.setup_view()
        bad = DepthMap.from_values(np.ones((10, 10), dtype=np.float32))
        with pytest.raises(DimensionMismatch):
            unproject_depth(view, bad, cmap)


def make_pixel_cloud(view, rng, n, z_range=(2.0, 6.0)):
    """Camera-frame points lifted from distinct pixels of a view.

    Points are lifted from pixel-interior coordinates (offset 0.3/0.7) so the
    floored pixel used for pairing is stable under projection round-trips;
    the returned xs/ys are the integer pixel keys.
    """
    cells = rng.choice(view.width * view.height, size=n, replace=False)
    xs = (cells % view.width).astype(np.float64)
    ys = (cells // view.width).astype(np.float64)
    depths = rng.uniform(*z_range, size=n)
    cam = np.stack(
        [
            (xs + 0.3 - view.cx) / view.fx * depths,
            (ys + 0.7 - view.cy) / view.fy * depths,
            depths,
        ],
        axis=1,
    )
    return cam, xs, ys


class TestFitScale:
    def build_pair(self, scale, offset=(0, 0, 0), noise=0.0, seed=0, n=300):
        """Depth cloud = camera-frame truth scaled by `scale`, plus offset."""
        view = identity_view(0, f=50, width=64, height=48)
        rng = np.random.default_rng(seed)
        cam, xs, ys = make_pixel_cloud(view, rng, n)
        noisy = cam * (1.0 + rng.normal(0, noise, size=cam.shape)) if noise else cam
        depth_cloud = PointCloud.build(
            noisy * np.asarray(scale) + np.asarray(offset),
            source=SOURCE_MONO,
            origin_views=np.zeros(n, dtype=np.int64),
            origin_pixels=np.stack([xs, ys], axis=1),
        )
        scene_cloud = PointCloud.build(camera_to_world(view, cam), source=SOURCE_COLMAP)
        return view, depth_cloud, scene_cloud

    def test_identity_recovered(self):
        view, depth_cloud, scene_cloud = self.build_pair((1.0, 1.0, 1.0))
        t = fit_scale(depth_cloud, scene_cloud, view)
        np.testing.assert_allclose(t.scale, 1.0, atol=1e-9)
        np.testing.assert_allclose(t.offset, 0.0, atol=1e-9)
        assert t.fit_stats[1] < 1e-9

    def test_half_scale_inverts_to_two(self):
        view, depth_cloud, scene_cloud = self.build_pair((0.5, 0.5, 0.5))
        t = fit_scale(depth_cloud, scene_cloud, view)
        np.testing.assert_allclose(t.scale, 2.0, atol=1e-9)
        np.testing.assert_allclose(t.offset, 0.0, atol=1e-8)

    def test_anisotropic_with_noise_within_two_percent(self):
        for seed in range(5):
            view, depth_cloud, scene_cloud = self.build_pair(
                (0.5, 1.0, 2.0), noise=0.01, seed=seed
            )
            t = fit_scale(depth_cloud, scene_cloud, view)
            np.testing.assert_allclose(t.scale, (2.0, 1.0, 0.5), rtol=0.02)

    def test_insufficient_pairs(self):
        view, depth_cloud, scene_cloud = self.build_pair((1, 1, 1), n=5)
        with pytest.raises(InsufficientPairs):
            fit_scale(depth_cloud, scene_cloud, view)

    def test_negated_depth_gives_non_positive_scale(self):
        view, depth_cloud, scene_cloud = self.build_pair((1, 1, 1))
        flipped = PointCloud.build(
            -depth_cloud.positions + np.array([0, 0, 10.0]),
            source=SOURCE_MONO,
            origin_views=depth_cloud.origin_views,
            origin_pixels=depth_cloud.origin_pixels,
        )
        with pytest.raises(NonPositiveScale):
            fit_scale(flipped, scene_cloud, view)

    def test_offset_recovered(self):
        view, depth_cloud, scene_cloud = self.build_pair(
            (1.0, 1.0, 1.0), offset=(0.3, -0.2, 0.5)
        )
        t = fit_scale(depth_cloud, scene_cloud, view)
        np.testing.assert_allclose(t.scale, 1.0, atol=1e-9)
        np.testing.assert_allclose(t.offset, (-0.3, 0.2, -0.5), atol=1e-8)

    def test_without_offset_flag(self):
        view, depth_cloud, scene_cloud = self.build_pair((0.5, 0.5, 0.5))
        t = fit_scale(depth_cloud, scene_cloud, view, include_offset=False)
        np.testing.assert_allclose(t.scale, 2.0, atol=1e-9)
        np.testing.assert_array_equal(t.offset, 0.0)


class TestApplyScale:
    def test_identity_transform_maps_to_world(self):
        from covis.enhance import ScaleTransform

        view = identity_view(0, f=50, width=64, height=48, tz=2.0)
        t = ScaleTransform(scale=np.ones(3), offset=np.zeros(3), frame_view=0,
                           fit_stats=(10, 0.0, 1.0))
        cam = np.array([[0.0, 0.0, 3.0]])
        cloud = PointCloud.build(cam, source=SOURCE_MONO,
                                 origin_views=np.zeros(1, dtype=np.int64))
        out = apply_scale(t, cloud, view)
        np.testing.assert_allclose(out.positions, camera_to_world(view, cam))
        assert out.sources[0] == SOURCE_MONO

    def test_scale_arithmetic(self):
        from covis.enhance import ScaleTransform

        view = identity_view(0, f=50, width=64, height=48)
        t = ScaleTransform(scale=np.array([2.0, 2.0, 2.0]), offset=np.zeros(3),
                           frame_view=0, fit_stats=(10, 0.0, 1.0))
        cloud = PointCloud.build(np.array([[1.0, 1.0, 1.0]]), source=SOURCE_MONO,
                                 origin_views=np.zeros(1, dtype=np.int64))
        out = apply_scale(t, cloud, view)
        np.testing.assert_allclose(out.positions, [[2.0, 2.0, 2.0]])

    def test_frame_mismatch_rejected(self):
        from covis.enhance import ScaleTransform

        view = identity_view(3, f=50, width=64, height=48)
        t = ScaleTransform(scale=np.ones(3), offset=np.zeros(3), frame_view=0,
                           fit_stats=(10, 0.0, 1.0))
        cloud = PointCloud.build(np.array([[0.0, 0.0, 1.0]]), source=SOURCE_MONO,
                                 origin_views=np.full(1, 3, dtype=np.int64))
        with pytest.raises(FrameMismatch):
            apply_scale(t, cloud, view)

    def test_held_out_consistency(self):
        # A transform fitted on half the pairs maps the held-out half to
        # within the fit residual scale.
        view = identity_view(0, f=50, width=64, height=48)
        rng = np.random.default_rng(44)
        cam, xs, ys = make_pixel_cloud(view, rng, 400)
        noisy = cam * (1.0 + rng.normal(0, 0.01, size=cam.shape))
        depth_points = noisy * np.array([0.5, 1.0, 2.0])
        half = 200
        depth_cloud = PointCloud.build(
            depth_points[:half], source=SOURCE_MONO,
            origin_views=np.zeros(half, dtype=np.int64),
            origin_pixels=np.stack([xs[:half], ys[:half]], axis=1),
        )
        scene_cloud = PointCloud.build(
            camera_to_world(view, cam[:half]), source=SOURCE_COLMAP
        )
        t = fit_scale(depth_cloud, scene_cloud, view)
        held = PointCloud.build(
            depth_points[half:], source=SOURCE_MONO,
            origin_views=np.zeros(400 - half, dtype=np.int64),
            origin_pixels=np.stack([xs[half:], ys[half:]], axis=1),
        )
        out = apply_scale(t, held, view)
        target = camera_to_world(view, cam[half:])
        rms_held = np.sqrt(np.mean(np.sum((out.positions - target) ** 2, axis=1)))
        assert rms_held < t.fit_stats[1] + 3 * t.fit_stats[1]


def brute_force_dedup(low, monos, radius):
    kept = [p for p in low.positions]
    count = len(kept)
    for mono in monos:
        for p in mono.positions:
            if radius > 0 and kept:
                d = np.min(np.linalg.norm(np.asarray(kept) - p, axis=1))
                if d < radius:
                    continue
            kept.append(p)
            count += 1
    return count


class TestAssembleFinal:
    def test_empty_monos_is_low_cloud(self):
        low = cloud_of([[0, 0, 0], [1, 1, 1]])
        final = assemble_final(low, [], 0.5)
        np.testing.assert_array_equal(final.positions, low.positions)

    def test_zero_radius_is_plain_union(self):
        low = cloud_of([[0, 0, 0]])
        mono = cloud_of([[0, 0, 0], [1, 0, 0]], source=SOURCE_MONO)
        final = assemble_final(low, [mono], 0.0)
        assert len(final) == 3  # coincident point kept

    def test_matches_brute_force_greedy(self):
        rng = np.random.default_rng(50)
        for _ in range(10):
            low = cloud_of(rng.uniform(-1, 1, size=(int(rng.integers(5, 80)), 3)))
            monos = [
                cloud_of(rng.uniform(-1, 1, size=(int(rng.integers(1, 80)), 3)),
                         source=SOURCE_MONO)
                for _ in range(int(rng.integers(1, 4)))
            ]
            radius = float(rng.uniform(0.01, 0.6))
            final = assemble_final(low, monos, radius)
            assert len(final) == brute_force_dedup(low, monos, radius)

    def test_insertion_order_low_first(self):
        low = cloud_of([[0, 0, 0]])
        mono = cloud_of([[0.05, 0, 0]], source=SOURCE_MONO)
        final = assemble_final(low, [mono], 0.1)
        assert len(final) == 1
        assert final.sources[0] == SOURCE_COLMAP


class TestEnhancePipeline:
    def test_stats_consistent(self, toy_bundle):
        bundle, _ = toy_bundle
        maps = build_maps(bundle)
        result = enhance_scene(bundle, maps)
        stats = result.stats()
        assert stats["n_merged"] >= stats["n_colmap"]
        assert stats["n_merged_low"] + stats["n_merged_high"] == stats["n_merged"]
        assert len(result.final) > 0
        # every merged point appears in exactly one split
        assert stats["n_final"] <= stats["n_merged_low"] + sum(
            stats["n_mono_scaled"].values()
        )

    def test_no_depth_maps_final_equals_low(self, toy_bundle):
        bundle, _ = toy_bundle
        maps = build_maps(bundle)
        bare = SceneBundle(
            views=bundle.views,
            colmap_points=bundle.colmap_points,
            correspondences=bundle.correspondences,
        )
        result = enhance_scene(bare, maps)
        assert len(result.warnings) == len(bundle.views)
        np.testing.assert_array_equal(
            result.final.positions, result.merged_low.positions
        )

    def test_merged_strictness(self, toy_bundle):
        bundle, _ = toy_bundle
        maps = build_maps(bundle)
        result = enhance_scene(bundle, maps)
        added = result.merged.subset(result.merged.sources == SOURCE_TRIANGULATED)
        if len(added):
            dists = oracle_nearest_neighbor(bundle.colmap_points, added.positions)
            assert np.min(dists) > result.epsilon

    def test_default_epsilon_is_half_median_spacing(self):
        rng = np.random.default_rng(60)
        cloud = cloud_of(rng.uniform(0, 1, size=(100, 3)))
        tree = cKDTree(cloud.positions)
        d, _ = tree.query(cloud.positions, k=2)
        assert default_epsilon(cloud) == pytest.approx(0.5 * np.median(d[:, 1]))
