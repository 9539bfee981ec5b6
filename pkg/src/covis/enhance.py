"""Initial point-cloud enhancement.

Stages, in pipeline order:

1. triangulate_correspondences: lift dense matches to 3D points, gated by a
   reprojection-error threshold, deduplicating pixels consumed by earlier
   triangulations;
2. merge_clouds: add triangulated points that are farther than epsilon from
   the reconstruction cloud (strict nearest-neighbor filter);
3. split_by_covisibility: partition points into a low-uncertainty part (seen
   on some covisible pixel in at least one view) and the high-uncertainty
   rest;
4. unproject_depth / fit_scale / apply_scale: lift monocular depth to camera
   frames, fit a per-axis scale + offset against the low-uncertainty cloud,
   and rescale the mono-view-only points into the scene frame;
5. assemble_final: union of the low-uncertainty cloud with all rescaled mono
   clouds, with greedy radius deduplication.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import cloud as cloudmod
from .cloud import SOURCE_MONO, SOURCE_TRIANGULATED, PointCloud
from .covismap import CovisMap
from .errors import (
    DegenerateGeometry,
    DimensionMismatch,
    EmptyBase,
    FrameMismatch,
    InputError,
    InsufficientPairs,
    MapViewMismatch,
    NoCorrespondences,
    NonPositiveScale,
)
from .geometry import (
    CameraView,
    camera_points,
    camera_to_world,
    project_many,
    triangulate,
    world_to_camera,
)
from .scene_io import DepthMap, SceneBundle


@dataclass(frozen=True)
class ScaleTransform:
    """Per-axis linear map aligning depth-derived geometry to the scene scale.

    Applies diag(scale) * p + offset in the camera frame of frame_view.
    fit_stats is (inlier pair count, RMS residual over inliers in meters,
    inlier fraction).
    """

    scale: np.ndarray  # (3,) dimensionless, strictly positive
    offset: np.ndarray  # (3,) meters
    frame_view: int
    fit_stats: tuple

    def __post_init__(self):
        scale = np.array(self.scale, dtype=np.float64)
        offset = np.array(self.offset, dtype=np.float64)
        if scale.shape != (3,) or offset.shape != (3,):
            raise InputError("scale and offset must be 3-vectors")
        if np.any(scale <= 0):
            raise NonPositiveScale(f"scale components must be positive: {scale}")
        scale.setflags(write=False)
        offset.setflags(write=False)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "offset", offset)


def _pixel_keys(x, y):
    """Integer pixel keys a continuous observation may stand for.

    Returns the floored cell plus the nearest-sample cell; they differ only
    when the coordinate sits within rounding of a pixel boundary, which is
    exactly where float jitter would otherwise defeat deduplication.
    """
    fx_, fy_ = int(np.floor(x)), int(np.floor(y))
    rx_, ry_ = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
    return {(fx_, fy_), (rx_, fy_), (fx_, ry_), (rx_, ry_)}


def triangulate_correspondences(bundle: SceneBundle, gate_px: float = 2.0) -> PointCloud:
    """Triangulate every matched source pixel into a tagged cloud.

    Source views are processed in ascending id order. Each source pixel with
    matches into at least one other view is triangulated jointly from all of
    its observations; integer pixels (in any view) consumed by an earlier
    accepted triangulation are skipped so each surface patch is reconstructed
    once. Points must pass cheirality and the per-view reprojection gate.
    """
    if len(bundle.views) < 2:
        raise NoCorrespondences("need at least two views to triangulate")
    if not bundle.correspondences:
        raise NoCorrespondences("bundle has no correspondence sets")

    views = {v.view_id: v for v in bundle.views}
    by_src = {}
    for cset in bundle.correspondences:
        by_src.setdefault(cset.src_view, []).append(cset)

    consumed = set()
    positions, origin_views, origin_pixels = [], [], []
    for src_id in sorted(by_src):
        src_view = views[src_id]
        # Group matches of this source view by integer source pixel.
        groups = {}
        for cset in by_src[src_id]:
            dst_view = views[cset.dst_view]
            for (sx, sy), (dx, dy) in zip(cset.src, cset.dst):
                key = (int(np.floor(sx)), int(np.floor(sy)))
                groups.setdefault(key, ((sx, sy), []))[1].append(
                    (dst_view, (dx, dy))
                )
        for key in sorted(groups):
            if (src_id, key) in consumed:
                continue
            (sx, sy), matches = groups[key]
            use = [
                (dview, dpx)
                for dview, dpx in matches
                if not any(
                    (dview.view_id, k) in consumed for k in _pixel_keys(*dpx)
                )
            ]
            if not use:
                continue
            observations = [(src_view, (sx, sy))] + use
            try:
                result = triangulate(observations, gate_px=gate_px)
            except DegenerateGeometry:
                continue
            if result is None:
                continue
            positions.append(result.point)
            origin_views.append(src_id)
            origin_pixels.append((sx, sy))
            consumed.add((src_id, key))
            for dview, dpx in use:
                for k in _pixel_keys(*dpx):
                    consumed.add((dview.view_id, k))

    if not positions:
        return PointCloud.empty()
    return PointCloud.build(
        np.array(positions),
        source=SOURCE_TRIANGULATED,
        origin_views=np.array(origin_views, dtype=np.int64),
        origin_pixels=np.array(origin_pixels, dtype=np.float64),
    )


def merge_clouds(base: PointCloud, extra: PointCloud, epsilon: float) -> PointCloud:
    """Union of base with the extra points strictly farther than epsilon.

    Keeps every base point and exactly those extra points whose exact
    nearest-neighbor distance to the base exceeds epsilon.
    """
    if len(base) == 0:
        raise EmptyBase("base cloud is empty")
    if len(extra) == 0:
        return cloudmod.concat([base])
    tree = cKDTree(base.positions)
    dist, _ = tree.query(extra.positions, k=1)
    return cloudmod.concat([base, extra.subset(dist > epsilon)])


def median_nn_spacing(cloud: PointCloud) -> float:
    """Median distance from each point to its nearest other point."""
    if len(cloud) < 2:
        raise InputError("need at least two points for a spacing estimate")
    tree = cKDTree(cloud.positions)
    dist, _ = tree.query(cloud.positions, k=2)
    return float(np.median(dist[:, 1]))


def default_epsilon(cloud: PointCloud) -> float:
    """Scene-adaptive merge threshold: half the median nearest-neighbor spacing."""
    return 0.5 * median_nn_spacing(cloud)


def split_by_covisibility(cloud: PointCloud, views, maps):
    """Partition points by whether any view sees them on a covisible pixel.

    A point is low-uncertainty when there is at least one view where it
    projects in frustum onto a pixel with covisibility count >= 1; all other
    points (including those outside every frustum) are high-uncertainty.
    Returns (low, high); they partition the input.
    """
    views = list(views)
    maps = list(maps)
    if len(views) != len(maps) or any(
        v.view_id != m.view_id for v, m in zip(views, maps)
    ):
        raise MapViewMismatch("maps must align one-to-one with views")
    low = np.zeros(len(cloud), dtype=bool)
    for view, cmap in zip(views, maps):
        if (cmap.width, cmap.height) != (view.width, view.height):
            raise MapViewMismatch(f"map dims differ from view {view.view_id}")
        uv, _, inside = project_many(view, cloud.positions)
        if not np.any(inside):
            continue
        xs = np.floor(uv[inside, 0]).astype(np.int64)
        ys = np.floor(uv[inside, 1]).astype(np.int64)
        hit = cmap.counts[ys, xs] >= 1
        idx = np.flatnonzero(inside)
        low[idx[hit]] = True
    return cloud.subset(low), cloud.subset(~low)


def unproject_depth(
    view: CameraView, depth: DepthMap, cmap: CovisMap, stride: int = 4
):
    """Lift valid depth pixels on a stride grid into the view's camera frame.

    Returns (covisible, mono_only): points whose pixel has covisibility count
    >= 1 versus count 0. Positions are camera-frame; origin_views and
    origin_pixels record the source view and grid pixel.
    """
    if (depth.width, depth.height) != (view.width, view.height):
        raise DimensionMismatch(
            f"depth map {depth.width}x{depth.height} does not match view "
            f"{view.width}x{view.height}"
        )
    if (cmap.width, cmap.height) != (view.width, view.height):
        raise DimensionMismatch("covisibility map does not match view dims")
    if stride < 1:
        raise InputError("stride must be >= 1")
    xs, ys = np.meshgrid(
        np.arange(0, view.width, stride), np.arange(0, view.height, stride)
    )
    xs, ys = xs.ravel(), ys.ravel()
    valid = depth.valid_mask[ys, xs]
    xs, ys = xs[valid], ys[valid]
    d = depth.values[ys, xs].astype(np.float64)
    pts = camera_points(view, xs, ys, d)
    counts = cmap.counts[ys, xs]
    covisible = counts >= 1

    def _cloud(mask):
        return PointCloud.build(
            pts[mask],
            source=SOURCE_MONO,
            origin_views=np.full(int(mask.sum()), view.view_id, dtype=np.int64),
            origin_pixels=np.stack([xs[mask], ys[mask]], axis=1).astype(np.float64),
        )

    return _cloud(covisible), _cloud(~covisible)


def fit_scale(
    depth_cloud: PointCloud,
    scene_cloud: PointCloud,
    view: CameraView,
    include_offset: bool = True,
) -> ScaleTransform:
    """Fit the per-axis scale (+ optional offset) aligning depth points to the scene.

    Pairs are formed in the camera frame of `view`: each scene point is
    projected and paired with the depth point lifted from the same floored
    pixel when one exists. Each axis is fitted by independent 1-D least
    squares; one rejection round drops pairs with 3D residual above three
    times the RMS and refits.
    """
    px_to_idx = {}
    for i, (px, py) in enumerate(depth_cloud.origin_pixels):
        if np.isnan(px):
            raise InputError("depth cloud points must carry origin pixels")
        px_to_idx[(int(px), int(py))] = i

    uv, _, inside = project_many(view, scene_cloud.positions)
    scene_cam = world_to_camera(view, scene_cloud.positions)
    d_list, u_list = [], []
    for i in np.flatnonzero(inside):
        key = (int(np.floor(uv[i, 0])), int(np.floor(uv[i, 1])))
        j = px_to_idx.get(key)
        if j is not None:
            d_list.append(depth_cloud.positions[j])
            u_list.append(scene_cam[i])
    if len(d_list) < 10:
        raise InsufficientPairs(
            f"only {len(d_list)} pixel-aligned pairs for view {view.view_id}"
        )
    d = np.array(d_list)
    u = np.array(u_list)

    def _fit(d, u):
        scale = np.empty(3)
        offset = np.zeros(3)
        for a in range(3):
            da, ua = d[:, a], u[:, a]
            if include_offset:
                dm, um = da.mean(), ua.mean()
                var = np.mean((da - dm) ** 2)
                if var < 1e-20 * (1.0 + dm * dm):
                    raise InsufficientPairs(f"axis {a} has no spread in depth points")
                scale[a] = np.mean((da - dm) * (ua - um)) / var
                offset[a] = um - scale[a] * dm
            else:
                denom = np.mean(da * da)
                if denom < 1e-20:
                    raise InsufficientPairs(f"axis {a} has no spread in depth points")
                scale[a] = np.mean(da * ua) / denom
        return scale, offset

    scale, offset = _fit(d, u)
    res = d * scale + offset - u
    norms = np.linalg.norm(res, axis=1)
    sigma = float(np.sqrt(np.mean(norms**2)))
    inliers = norms <= 3.0 * sigma
    if inliers.sum() < 10:
        raise InsufficientPairs("fewer than 10 inlier pairs after rejection")
    scale, offset = _fit(d[inliers], u[inliers])
    if np.any(scale <= 0):
        raise NonPositiveScale(
            f"fitted scale {scale} for view {view.view_id}; depth and geometry "
            "disagree in sign"
        )
    res = d[inliers] * scale + offset - u[inliers]
    rms = float(np.sqrt(np.mean(np.sum(res**2, axis=1))))
    return ScaleTransform(
        scale=scale,
        offset=offset,
        frame_view=view.view_id,
        fit_stats=(int(inliers.sum()), rms, float(inliers.mean())),
    )


def apply_scale(
    transform: ScaleTransform, depth_cloud: PointCloud, view: CameraView
) -> PointCloud:
    """Rescale camera-frame depth points and move them to world coordinates."""
    if transform.frame_view != view.view_id:
        raise FrameMismatch(
            f"transform fitted in view {transform.frame_view}, applying in "
            f"view {view.view_id}"
        )
    if len(depth_cloud) and not np.all(depth_cloud.origin_views == view.view_id):
        raise FrameMismatch("depth cloud does not belong to this view")
    cam = depth_cloud.positions * transform.scale + transform.offset
    world = camera_to_world(view, cam)
    return PointCloud.build(
        world,
        source=SOURCE_MONO,
        origin_views=depth_cloud.origin_views,
        origin_pixels=depth_cloud.origin_pixels,
    )


class _GridIndex:
    """Incremental exact radius-lookup over a uniform grid."""

    def __init__(self, radius: float):
        self.radius = radius
        self.cell = radius if radius > 0 else 1.0
        self.cells = {}

    def _key(self, p):
        return tuple(np.floor(p / self.cell).astype(np.int64))

    def insert(self, p):
        self.cells.setdefault(self._key(p), []).append(np.asarray(p, dtype=np.float64))

    def any_within(self, p) -> bool:
        """True when some inserted point lies strictly closer than radius."""
        if self.radius <= 0:
            return False
        kx, ky, kz = self._key(p)
        r2 = self.radius * self.radius
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    for q in self.cells.get((kx + dx, ky + dy, kz + dz), ()):
                        d = p - q
                        if d @ d < r2:
                            return True
        return False


def assemble_final(low_cloud: PointCloud, mono_clouds, dedup_radius: float) -> PointCloud:
    """Union of the low-uncertainty cloud with rescaled mono clouds.

    Points are inserted greedily: the low cloud first, then mono clouds in the
    given (view id) order. A mono point is dropped when an already-inserted
    point lies strictly within dedup_radius; radius 0 keeps everything.
    """
    if dedup_radius < 0:
        raise InputError("dedup_radius must be >= 0")
    mono_clouds = list(mono_clouds)
    if dedup_radius == 0:
        return cloudmod.concat([low_cloud] + mono_clouds)
    index = _GridIndex(dedup_radius)
    for p in low_cloud.positions:
        index.insert(p)
    kept = [low_cloud]
    for mono in mono_clouds:
        keep = np.zeros(len(mono), dtype=bool)
        for i, p in enumerate(mono.positions):
            if not index.any_within(p):
                keep[i] = True
                index.insert(p)
        kept.append(mono.subset(keep))
    return cloudmod.concat(kept)


@dataclass
class EnhanceResult:
    """All intermediate clouds and per-view fit statistics of one enhancement run."""

    triangulated: PointCloud
    merged: PointCloud
    merged_low: PointCloud
    merged_high: PointCloud
    mono_scaled: dict  # view_id -> PointCloud (world frame)
    transforms: dict  # view_id -> ScaleTransform
    final: PointCloud
    epsilon: float
    dedup_radius: float
    warnings: list

    def stats(self) -> dict:
        return {
            "n_colmap": int(np.sum(self.merged.sources == 0)),
            "n_triangulated": len(self.triangulated),
            "n_merged": len(self.merged),
            "n_merged_low": len(self.merged_low),
            "n_merged_high": len(self.merged_high),
            "n_mono_scaled": {
                str(vid): len(c) for vid, c in sorted(self.mono_scaled.items())
            },
            "n_final": len(self.final),
            "final_sources": self.final.source_counts(),
            "epsilon": self.epsilon,
            "dedup_radius": self.dedup_radius,
            "fit_stats": {
                str(vid): {
                    "scale": list(t.scale),
                    "offset": list(t.offset),
                    "pairs": t.fit_stats[0],
                    "rms": t.fit_stats[1],
                    "inlier_fraction": t.fit_stats[2],
                }
                for vid, t in sorted(self.transforms.items())
            },
        }


def enhance_scene(
    bundle: SceneBundle,
    maps,
    gate_px: float = 2.0,
    epsilon: float | None = None,
    dedup_radius: float | None = None,
    stride: int = 4,
    include_offset: bool = True,
) -> EnhanceResult:
    """Run the full enhancement pipeline on a loaded scene.

    `maps` are the unrefined covisibility maps, aligned with bundle.views.
    epsilon defaults to half the median nearest-neighbor spacing of the
    reconstruction cloud; dedup_radius defaults to epsilon. Views without a
    depth map contribute no mono points (a warning is recorded); with no depth
    maps at all the final cloud is exactly the low-uncertainty part.
    """
    notes = []
    triangulated = triangulate_correspondences(bundle, gate_px=gate_px)
    if epsilon is None:
        epsilon = default_epsilon(bundle.colmap_points)
    if dedup_radius is None:
        dedup_radius = epsilon
    merged = merge_clouds(bundle.colmap_points, triangulated, epsilon)
    low, high = split_by_covisibility(merged, bundle.views, maps)

    maps_by_id = {m.view_id: m for m in maps}
    mono_scaled, transforms = {}, {}
    for view in bundle.views:
        depth = bundle.depth_maps.get(view.view_id)
        if depth is None:
            notes.append(f"view {view.view_id}: no depth map, skipping mono points")
            continue
        covisible_pts, mono_pts = unproject_depth(
            view, depth, maps_by_id[view.view_id], stride=stride
        )
        transform = fit_scale(covisible_pts, low, view, include_offset=include_offset)
        transforms[view.view_id] = transform
        mono_scaled[view.view_id] = apply_scale(transform, mono_pts, view)

    ordered = [mono_scaled[vid] for vid in sorted(mono_scaled)]
    final = assemble_final(low, ordered, dedup_radius)
    return EnhanceResult(
        triangulated=triangulated,
        merged=merged,
        merged_low=low,
        merged_high=high,
        mono_scaled=mono_scaled,
        transforms=transforms,
        final=final,
        epsilon=float(epsilon),
        dedup_radius=float(dedup_radius),
        warnings=notes,
    )
