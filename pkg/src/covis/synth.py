"""Fully ground-truthed synthetic scenes and brute-force reference checks.

Scenes are built from closed-form primitives (plane, sphere, axis-aligned box)
so depth, visibility and occlusion are exact: every pipeline stage can be
verified against an independent recomputation. Camera rigs mimic common
capture styles (forward-facing strips, outward-facing rings) or take explicit
poses.

The scene description is a JSON document::

    {
      "resolution": [64, 48],
      "focal": 48.0,              // optional; default 0.75 * width
      "seed": 7,
      "colmap_points": 300,       // sparse surface samples standing in for SfM
      "rig": {"kind": "forward_facing", "views": 3, "baseline": 0.5},
      "surfaces": [
        {"kind": "plane", "point": [0, 0, 6], "normal": [0, 0, -1],
         "color": [200, 80, 80]},
        {"kind": "sphere", "center": [0, 0, 4], "radius": 1.0,
         "color": [80, 200, 80]},
        {"kind": "box", "min": [-1, -1, 3], "max": [1, 1, 4],
         "color": [80, 80, 200]}
      ]
    }

Rig kinds: forward_facing {views, baseline}, outward_360 {views, radius},
explicit {poses: [{"position": [...], "look_at": [...]}, ...]}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import SOURCE_COLMAP, PointCloud
from .covismap import CorrespondenceSet, CovisMap
from .errors import DegenerateSpec, InputError, MalformedRecord
from .geometry import CameraView
from .scene_io import DepthMap, SceneBundle

_RAY_EPS = 1e-9
_OCCLUSION_TOL = 1e-6  # float64 ray-casting noise floor, meters


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Plane:
    point: np.ndarray
    normal: np.ndarray  # unit
    color: tuple

    def intersect(self, origin, dirs):
        denom = dirs @ self.normal
        offs = (self.point - origin) @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, offs / denom, np.inf)
        return np.where(t > _RAY_EPS, t, np.inf)

    def distance(self, points):
        return np.abs((points - self.point) @ self.normal)


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    color: tuple

    def intersect(self, origin, dirs):
        oc = origin - self.center
        b = dirs @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - c
        t = np.full(len(dirs), np.inf)
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t_near = -b - sq
        t_far = -b + sq
        t = np.where(hit & (t_near > _RAY_EPS), t_near, t)
        t = np.where(hit & (t_near <= _RAY_EPS) & (t_far > _RAY_EPS), t_far, t)
        return t

    def distance(self, points):
        return np.abs(np.linalg.norm(points - self.center, axis=1) - self.radius)


@dataclass(frozen=True)
class Box:
    bmin: np.ndarray
    bmax: np.ndarray
    color: tuple

    def intersect(self, origin, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(np.abs(dirs) > 1e-300, 1.0 / dirs, np.inf)
        t0 = (self.bmin - origin) * inv
        t1 = (self.bmax - origin) * inv
        # Axis-parallel rays: replace NaN slabs with the correct +-inf bounds.
        lo = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
        hi = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
        par = np.abs(dirs) <= 1e-300
        inside = (origin >= self.bmin) & (origin <= self.bmax)
        lo = np.where(par, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(par, np.where(inside, np.inf, -np.inf), hi)
        tmin = lo.max(axis=1)
        tmax = hi.min(axis=1)
        t = np.full(len(dirs), np.inf)
        ok = tmax >= tmin
        t = np.where(ok & (tmin > _RAY_EPS), tmin, t)
        t = np.where(ok & (tmin <= _RAY_EPS) & (tmax > _RAY_EPS), tmax, t)
        return t

    def distance(self, points):
        center = (self.bmin + self.bmax) / 2.0
        half = (self.bmax - self.bmin) / 2.0
        d = np.abs(points - center) - half
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.where(np.all(d < 0, axis=1), -np.max(d, axis=1), 0.0)
        return np.where(np.all(d < 0, axis=1), inside, outside)


def _surface_from_dict(rec: dict):
    kind = rec.get("kind")
    color = tuple(int(c) for c in rec.get("color", (200, 200, 200)))
    if kind == "plane":
        n = np.asarray(rec["normal"], dtype=np.float64)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise InputError("plane normal must be nonzero")
        return Plane(
            point=np.asarray(rec["point"], dtype=np.float64), normal=n / norm, color=color
        )
    if kind == "sphere":
        if rec["radius"] <= 0:
            raise InputError("sphere radius must be positive")
        return Sphere(
            center=np.asarray(rec["center"], dtype=np.float64),
            radius=float(rec["radius"]),
            color=color,
        )
    if kind == "box":
        bmin = np.asarray(rec["min"], dtype=np.float64)
        bmax = np.asarray(rec["max"], dtype=np.float64)
        if np.any(bmax <= bmin):
            raise InputError("box max must exceed min on every axis")
        return Box(bmin=bmin, bmax=bmax, color=color)
    raise InputError(f"unknown surface kind {kind!r}")


def _surface_to_dict(surface) -> dict:
    if isinstance(surface, Plane):
        return {
            "kind": "plane",
            "point": list(surface.point),
            "normal": list(surface.normal),
            "color": list(surface.color),
        }
    if isinstance(surface, Sphere):
        return {
            "kind": "sphere",
            "center": list(surface.center),
            "radius": surface.radius,
            "color": list(surface.color),
        }
    return {
        "kind": "box",
        "min": list(surface.bmin),
        "max": list(surface.bmax),
        "color": list(surface.color),
    }


def scene_distance(surfaces, points) -> np.ndarray:
    """Unsigned distance from each point to the nearest scene surface."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dists = np.stack([s.distance(points) for s in surfaces], axis=0)
    return dists.min(axis=0)


# ---------------------------------------------------------------------------
# Scene specification
# ---------------------------------------------------------------------------


def _look_rotation(forward) -> np.ndarray:
    """World-to-camera rotation for a camera looking along `forward` (y down)."""
    z = np.asarray(forward, dtype=np.float64)
    z = z / np.linalg.norm(z)
    down = np.array([0.0, 1.0, 0.0])
    if abs(z @ down) > 0.999:
        down = np.array([0.0, 0.0, 1.0])
    x = np.cross(down, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=0)


def _view_from_pose(view_id, position, forward, K, width, height) -> CameraView:
    R = _look_rotation(forward)
    H = np.eye(4)
    H[:3, :3] = R
    H[:3, 3] = -R @ np.asarray(position, dtype=np.float64)
    return CameraView(view_id=view_id, K=K, H=H, width=width, height=height)


@dataclass
class SceneSpec:
    width: int
    height: int
    focal: float
    rig: dict
    surfaces: list
    seed: int = 0
    colmap_points: int = 300

    @classmethod
    def from_dict(cls, rec: dict) -> "SceneSpec":
        try:
            width, height = (int(v) for v in rec["resolution"])
            rig = dict(rec["rig"])
            surfaces = [_surface_from_dict(s) for s in rec["surfaces"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad scene spec: {exc}")
        if width < 2 or height < 2:
            raise InputError("resolution must be at least 2x2")
        if not surfaces:
            raise DegenerateSpec("scene spec lists no surfaces")
        return cls(
            width=width,
            height=height,
            focal=float(rec.get("focal", 0.75 * width)),
            rig=rig,
            surfaces=surfaces,
            seed=int(rec.get("seed", 0)),
            colmap_points=int(rec.get("colmap_points", 300)),
        )

    @classmethod
    def from_json(cls, path) -> "SceneSpec":
        path = Path(path)
        try:
            with open(path, "r") as fh:
                rec = json.load(fh)
        except FileNotFoundError:
            raise InputError(f"missing scene spec {path}")
        except json.JSONDecodeError as exc:
            raise MalformedRecord(path, exc.lineno, f"invalid JSON: {exc.msg}")
        return cls.from_dict(rec)

    def to_dict(self) -> dict:
        return {
            "resolution": [self.width, self.height],
            "focal": self.focal,
            "seed": self.seed,
            "colmap_points": self.colmap_points,
            "rig": self.rig,
            "surfaces": [_surface_to_dict(s) for s in self.surfaces],
        }

    def intrinsics(self) -> np.ndarray:
        return np.array(
            [
                [self.focal, 0.0, self.width / 2.0],
                [0.0, self.focal, self.height / 2.0],
                [0.0, 0.0, 1.0],
            ]
        )

    def build_views(self) -> list:
        K = self.intrinsics()
        kind = self.rig.get("kind")
        if kind == "forward_facing":
            k = int(self.rig["views"])
            baseline = float(self.rig["baseline"])
            if k < 1:
                raise InputError("rig needs at least one view")
            return [
                _view_from_pose(
                    i,
                    ((i - (k - 1) / 2.0) * baseline, 0.0, 0.0),
                    (0.0, 0.0, 1.0),
                    K,
                    self.width,
                    self.height,
                )
                for i in range(k)
            ]
        if kind == "outward_360":
            k = int(self.rig["views"])
            radius = float(self.rig["radius"])
            if k < 1:
                raise InputError("rig needs at least one view")
            views = []
            for i in range(k):
                theta = 2.0 * np.pi * i / k
                outward = (np.sin(theta), 0.0, np.cos(theta))
                position = radius * np.asarray(outward)
                views.append(
                    _view_from_pose(i, position, outward, K, self.width, self.height)
                )
            return views
        if kind == "explicit":
            views = []
            for i, pose in enumerate(self.rig["poses"]):
                position = np.asarray(pose["position"], dtype=np.float64)
                target = np.asarray(pose["look_at"], dtype=np.float64)
                views.append(
                    _view_from_pose(
                        i, position, target - position, K, self.width, self.height
                    )
                )
            if not views:
                raise InputError("explicit rig lists no poses")
            return views
        raise InputError(f"unknown rig kind {kind!r}")


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


@dataclass
class GroundTruth:
    """Exact per-pixel geometry for every view of a synthetic scene."""

    surfaces: list
    points: dict  # view_id -> (H, W, 3) float64 surface point per pixel
    masks: dict  # view_id -> (H, W) bool hit mask
    depths: dict  # view_id -> (H, W) float64 exact camera depth
    surface_index: dict  # view_id -> (H, W) int32, -1 where no hit


def _cast_view(view: CameraView, surfaces):
    """Ray-cast every pixel of a view; rays go through integer coordinates."""
    xs, ys = np.meshgrid(np.arange(view.width), np.arange(view.height))
    d_cam = np.stack(
        [
            (xs.ravel() - view.cx) / view.fx,
            (ys.ravel() - view.cy) / view.fy,
            np.ones(xs.size),
        ],
        axis=1,
    )
    dirs = d_cam @ view.R  # rows: R^T @ d
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs_unit = dirs / norms
    origin = view.center

    t_all = np.stack([s.intersect(origin, dirs_unit) for s in surfaces], axis=0)
    idx = np.argmin(t_all, axis=0)
    t = t_all[idx, np.arange(t_all.shape[1])]
    hit = np.isfinite(t)

    points = origin + dirs_unit * np.where(hit, t, 0.0)[:, None]
    cam_z = (points @ view.R.T + view.t)[:, 2]
    shape = (view.height, view.width)
    return (
        points.reshape(view.height, view.width, 3),
        hit.reshape(shape),
        np.where(hit, cam_z, 0.0).reshape(shape),
        np.where(hit, idx, -1).astype(np.int32).reshape(shape),
    )


def generate_scene(spec: SceneSpec):
    """Build a SceneBundle plus exact ground truth from a scene description.

    Geometry (views, depth, ground-truth points) is fully determined by the
    spec; the seed only drives the sparse surface sampling that stands in for
    an SfM point cloud.
    """
    views = spec.build_views()
    gt = GroundTruth(
        surfaces=list(spec.surfaces),
        points={},
        masks={},
        depths={},
        surface_index={},
    )
    depth_maps = {}
    for view in views:
        points, mask, depth, sidx = _cast_view(view, spec.surfaces)
        if not np.any(mask):
            raise DegenerateSpec(f"view {view.view_id} sees no surface")
        gt.points[view.view_id] = points
        gt.masks[view.view_id] = mask
        gt.depths[view.view_id] = depth
        gt.surface_index[view.view_id] = sidx
        values = np.where(mask, depth, 0.0).astype(np.float32)
        depth_maps[view.view_id] = DepthMap.from_values(values)

    rng = np.random.default_rng(spec.seed)
    positions, colors = [], []
    per_view = max(1, int(np.ceil(spec.colmap_points / len(views))))
    for view in views:
        mask = gt.masks[view.view_id]
        hit_idx = np.flatnonzero(mask.ravel())
        take = min(per_view, hit_idx.size)
        chosen = rng.choice(hit_idx, size=take, replace=False)
        pts = gt.points[view.view_id].reshape(-1, 3)[chosen]
        sidx = gt.surface_index[view.view_id].ravel()[chosen]
        positions.append(pts)
        colors.append(
            np.array([spec.surfaces[i].color for i in sidx], dtype=np.uint8)
        )
    positions = np.concatenate(positions)[: spec.colmap_points]
    colors = np.concatenate(colors)[: spec.colmap_points]
    cloud = PointCloud.build(
        positions,
        source=SOURCE_COLMAP,
        colors=colors,
        ids=np.arange(1, len(positions) + 1),
    )
    bundle = SceneBundle(views=views, colmap_points=cloud, depth_maps=depth_maps)
    return bundle, gt


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def _visible_in_view(points, view: CameraView, surfaces):
    """Exact frustum + occlusion test for world points against one view.

    A point is visible when it projects in front of the camera inside the
    image bounds and no surface blocks the ray from the camera center,
    within the occlusion tolerance.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pc = points @ view.R.T + view.t
    z = pc[:, 2]
    front = z > 0
    zsafe = np.where(front, z, 1.0)
    u = view.fx * pc[:, 0] / zsafe + view.cx
    v = view.fy * pc[:, 1] / zsafe + view.cy
    inside = front & (u >= 0) & (u < view.width) & (v >= 0) & (v < view.height)

    origin = view.center
    offs = points - origin
    dist = np.linalg.norm(offs, axis=1)
    dsafe = np.where(dist > 0, dist, 1.0)
    dirs = offs / dsafe[:, None]
    t_near = np.full(len(points), np.inf)
    for s in surfaces:
        t_near = np.minimum(t_near, s.intersect(origin, dirs))
    unoccluded = t_near >= dist - _OCCLUSION_TOL
    return inside & unoccluded, u, v


def oracle_correspondences(
    bundle: SceneBundle,
    gt: GroundTruth,
    noise_px: float = 0.0,
    dropout: float = 0.0,
    seed: int = 0,
):
    """Exact dense matches for every ordered view pair.

    A pixel of the source view matches the destination view when its
    ground-truth surface point is visible there (in frustum and unoccluded).
    Source coordinates are the integer pixel coordinates; destination
    coordinates are the exact projection, optionally perturbed by Gaussian
    noise of std noise_px (matches pushed outside the destination bounds are
    dropped, as is the `dropout` fraction chosen at random).
    """
    rng = np.random.default_rng(seed)
    sets = []
    for src_view in bundle.views:
        mask = gt.masks[src_view.view_id]
        ys, xs = np.nonzero(mask)
        pts = gt.points[src_view.view_id][ys, xs]
        for dst_view in bundle.views:
            if dst_view.view_id == src_view.view_id:
                continue
            visible, u, v = _visible_in_view(pts, dst_view, gt.surfaces)
            src = np.stack([xs, ys], axis=1).astype(np.float64)[visible]
            dst = np.stack([u, v], axis=1)[visible]
            if noise_px > 0 and len(dst):
                dst = dst + rng.normal(0.0, noise_px, size=dst.shape)
                ok = (
                    (dst[:, 0] >= 0)
                    & (dst[:, 0] < dst_view.width)
                    & (dst[:, 1] >= 0)
                    & (dst[:, 1] < dst_view.height)
                )
                src, dst = src[ok], dst[ok]
            if dropout > 0 and len(src):
                keep = rng.random(len(src)) >= dropout
                src, dst = src[keep], dst[keep]
            sets.append(
                CorrespondenceSet(
                    src_view=src_view.view_id,
                    dst_view=dst_view.view_id,
                    src=src,
                    dst=dst,
                    conf=np.ones(len(src)),
                )
            )
    return sets


def oracle_covis_map(bundle: SceneBundle, gt: GroundTruth):
    """Brute-force covisibility counts straight from ground truth.

    Independent of the correspondence-accumulation path: for every pixel of
    every view, count the other views where the pixel's exact surface point is
    visible. Intended as a test reference.
    """
    maps = []
    n = len(bundle.views)
    for view in bundle.views:
        counts = np.zeros((view.height, view.width), dtype=np.int32)
        mask = gt.masks[view.view_id]
        ys, xs = np.nonzero(mask)
        pts = gt.points[view.view_id][ys, xs]
        for other in bundle.views:
            if other.view_id == view.view_id:
                continue
            visible, _, _ = _visible_in_view(pts, other, gt.surfaces)
            counts[ys[visible], xs[visible]] += 1
        maps.append(
            CovisMap(
                view_id=view.view_id,
                width=view.width,
                height=view.height,
                counts=counts,
                n_views=n,
            )
        )
    return maps


def oracle_nearest_neighbor(cloud, queries) -> np.ndarray:
    """Exact nearest-neighbor distances by full O(|queries| * |cloud|) scan."""
    if isinstance(cloud, PointCloud):
        cloud = cloud.positions
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    if cloud.shape[0] == 0:
        raise InputError("reference cloud is empty")
    out = np.empty(len(queries))
    # Chunked to bound the (Q, N) distance matrix size.
    step = max(1, int(2e7) // max(cloud.shape[0], 1))
    for start in range(0, len(queries), step):
        q = queries[start : start + step]
        d2 = ((q[:, None, :] - cloud[None, :, :]) ** 2).sum(axis=2)
        out[start : start + step] = np.sqrt(d2.min(axis=1))
    return out


# ---------------------------------------------------------------------------
# Ground-truth sidecar files
# ---------------------------------------------------------------------------


def write_ground_truth(gt: GroundTruth, dir_path) -> None:
    """Persist exact geometry as plain .npy files plus the surface list."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    with open(dir_path / "surfaces.json", "w") as fh:
        json.dump([_surface_to_dict(s) for s in gt.surfaces], fh, indent=2, sort_keys=True)
        fh.write("\n")
    for vid in sorted(gt.points):
        np.save(dir_path / f"points_{vid:04d}.npy", gt.points[vid])
        np.save(dir_path / f"mask_{vid:04d}.npy", gt.masks[vid])
        np.save(dir_path / f"depth_{vid:04d}.npy", gt.depths[vid])
        np.save(dir_path / f"surface_{vid:04d}.npy", gt.surface_index[vid])


def read_ground_truth(dir_path) -> GroundTruth:
    dir_path = Path(dir_path)
    surf_path = dir_path / "surfaces.json"
    if not surf_path.is_file():
        raise InputError(f"missing ground-truth sidecar {surf_path}")
    with open(surf_path, "r") as fh:
        surfaces = [_surface_from_dict(rec) for rec in json.load(fh)]
    gt = GroundTruth(
        surfaces=surfaces, points={}, masks={}, depths={}, surface_index={}
    )
    for path in sorted(dir_path.glob("points_*.npy")):
        vid = int(path.stem.split("_")[1])
        gt.points[vid] = np.load(path)
        gt.masks[vid] = np.load(dir_path / f"mask_{vid:04d}.npy")
        gt.depths[vid] = np.load(dir_path / f"depth_{vid:04d}.npy")
        gt.surface_index[vid] = np.load(dir_path / f"surface_{vid:04d}.npy")
    return gt
