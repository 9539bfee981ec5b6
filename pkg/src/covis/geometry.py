"""Pinhole camera math: projection, unprojection, and multi-view triangulation.

Conventions used throughout the package:

* world-to-camera transforms are 4x4 rigid matrices; camera frame is
  x-right / y-down / z-forward, so points in front of the camera have z > 0;
* pixel coordinates are continuous, the integer pixel (x, y) covers the
  continuous square [x, x+1) x [y, y+1), and lookups floor continuous
  coordinates;
* a projection is "in frustum" when its depth is positive and the continuous
  coordinates fall inside [0, W) x [0, H).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateGeometry,
    InputError,
    NonPositiveDepth,
)

_ROT_TOL = 1e-8


def _frozen(a, dtype=np.float64):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CameraView:
    """A pinhole camera: intrinsics, world-to-camera pose, and image size."""

    view_id: int
    K: np.ndarray  # 3x3 intrinsics, pixels
    H: np.ndarray  # 4x4 world-to-camera rigid transform, meters
    width: int
    height: int

    def __post_init__(self):
        K = _frozen(self.K)
        H = _frozen(self.H)
        if K.shape != (3, 3):
            raise InputError(f"intrinsics must be 3x3, got {K.shape}")
        if H.shape != (4, 4):
            raise InputError(f"pose must be 4x4, got {H.shape}")
        if not np.allclose(H[3], (0.0, 0.0, 0.0, 1.0), atol=1e-12):
            raise InputError("pose last row must be [0, 0, 0, 1]")
        fx, fy, cx, cy = K[0, 0], K[1, 1], K[0, 2], K[1, 2]
        if fx <= 0 or fy <= 0:
            raise InputError(f"focal lengths must be positive, got fx={fx} fy={fy}")
        if not (0 < cx < self.width and 0 < cy < self.height):
            raise InputError(
                f"principal point ({cx}, {cy}) outside image {self.width}x{self.height}"
            )
        R = H[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=_ROT_TOL):
            raise InputError("rotation block is not orthonormal")
        if np.linalg.det(R) < 0:
            raise InputError("rotation block has negative determinant")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "H", H)

    @property
    def fx(self):
        return float(self.K[0, 0])

    @property
    def fy(self):
        return float(self.K[1, 1])

    @property
    def cx(self):
        return float(self.K[0, 2])

    @property
    def cy(self):
        return float(self.K[1, 2])

    @property
    def R(self):
        return self.H[:3, :3]

    @property
    def t(self):
        return self.H[:3, 3]

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.R.T @ self.t


@dataclass(frozen=True)
class Ray:
    """A world-space ray with unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = _frozen(self.origin)
        d = _frozen(self.direction)
        if o.shape != (3,) or d.shape != (3,):
            raise InputError("ray origin and direction must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise InputError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class TriangulationResult:
    point: np.ndarray  # (3,) world
    errors: np.ndarray  # (m,) per-view reprojection error, pixels

    def __post_init__(self):
        object.__setattr__(self, "point", _frozen(self.point))
        object.__setattr__(self, "errors", _frozen(self.errors))


def world_to_camera(view: CameraView, points) -> np.ndarray:
    """Map (N, 3) world points into the camera frame."""
    points = np.asarray(points, dtype=np.float64)
    return points @ view.R.T + view.t


def camera_to_world(view: CameraView, points) -> np.ndarray:
    """Map (N, 3) camera-frame points back to world coordinates."""
    points = np.asarray(points, dtype=np.float64)
    return (points - view.t) @ view.R


def project(view: CameraView, p):
    """Project a world point; returns (x, y, depth) or None.

    None means the point is behind the camera or its projection falls outside
    [0, W) x [0, H); absence is the out-of-frustum result, not an error.
    """
    pc = view.R @ np.asarray(p, dtype=np.float64) + view.t
    z = pc[2]
    if z <= 0:
        return None
    u = view.fx * pc[0] / z + view.cx
    v = view.fy * pc[1] / z + view.cy
    if not (0.0 <= u < view.width and 0.0 <= v < view.height):
        return None
    return (float(u), float(v), float(z))


def project_many(view: CameraView, points):
    """Vectorized projection of (N, 3) world points.

    Returns (uv, depth, in_frustum): continuous pixel coordinates, camera
    depths, and the combined cheirality + bounds mask. uv rows are only
    meaningful where depth > 0.
    """
    pc = world_to_camera(view, points)
    z = pc[:, 2]
    front = z > 0
    zsafe = np.where(front, z, 1.0)
    u = view.fx * pc[:, 0] / zsafe + view.cx
    v = view.fy * pc[:, 1] / zsafe + view.cy
    inside = front & (u >= 0) & (u < view.width) & (v >= 0) & (v < view.height)
    return np.stack([u, v], axis=1), z, inside


def unproject(view: CameraView, pixel, depth: float) -> np.ndarray:
    """Lift a continuous pixel at a camera depth back to a world point."""
    if depth <= 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    x, y = pixel
    pc = np.array(
        [(x - view.cx) / view.fx * depth, (y - view.cy) / view.fy * depth, depth]
    )
    return view.R.T @ (pc - view.t)


def camera_points(view: CameraView, xs, ys, depths) -> np.ndarray:
    """Vectorized unprojection to the camera frame (does not apply the pose)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    if np.any(depths <= 0):
        raise NonPositiveDepth("all depths must be positive")
    return np.stack(
        [(xs - view.cx) / view.fx * depths, (ys - view.cy) / view.fy * depths, depths],
        axis=1,
    )


def pixel_ray(view: CameraView, pixel) -> Ray:
    """World-space ray through a continuous pixel coordinate."""
    x, y = pixel
    d_cam = np.array([(x - view.cx) / view.fx, (y - view.cy) / view.fy, 1.0])
    d = view.R.T @ d_cam
    return Ray(origin=view.center, direction=d / np.linalg.norm(d))


def _project_unchecked(view: CameraView, p):
    """Projection without the frustum bounds test; BehindCamera if depth <= 0."""
    pc = view.R @ np.asarray(p, dtype=np.float64) + view.t
    if pc[2] <= 0:
        raise BehindCamera(f"point has non-positive depth {pc[2]} in view {view.view_id}")
    return pc[0] / pc[2] * view.fx + view.cx, pc[1] / pc[2] * view.fy + view.cy


def reprojection_error(view: CameraView, p, pixel) -> float:
    """Euclidean pixel distance between the projection of p and a pixel."""
    u, v = _project_unchecked(view, p)
    return float(np.hypot(u - pixel[0], v - pixel[1]))


def triangulate(observations, gate_px: float = 2.0):
    """Triangulate one world point from >= 2 pixel observations.

    Solves the homogeneous DLT least-squares system over all observations,
    refines with a single Gauss-Newton step on the stacked reprojection
    residuals, then applies cheirality and the reprojection gate. Returns a
    TriangulationResult, or None when the point is behind any camera or any
    per-view error exceeds gate_px.

    Raises DegenerateGeometry when all observation rays are mutually parallel
    within 1e-10 radians (a baseline-free configuration).
    """
    if len(observations) < 2:
        raise InputError("triangulation needs at least two observations")

    dirs = np.stack(
        [pixel_ray(view, px).direction for view, px in observations], axis=0
    )
    max_sep = 0.0
    for i in range(len(dirs) - 1):
        cross = np.cross(dirs[i], dirs[i + 1 :])
        max_sep = max(max_sep, float(np.max(np.linalg.norm(cross, axis=1))))
    if max_sep < 1e-10:
        raise DegenerateGeometry("observation rays are parallel; no baseline")

    rows = []
    for view, (u, v) in observations:
        P = view.K @ view.H[:3, :]
        rows.append(u * P[2] - P[0])
        rows.append(v * P[2] - P[1])
    A = np.stack(rows, axis=0)
    _, _, vt = np.linalg.svd(A)
    Xh = vt[-1]
    if abs(Xh[3]) < 1e-14 * np.linalg.norm(Xh[:3]):
        return None
    X = Xh[:3] / Xh[3]

    if any(
        (view.R @ X + view.t)[2] <= 0 for view, _ in observations
    ):
        return None

    X = X + _gauss_newton_step(observations, X)

    errors = np.empty(len(observations))
    for i, (view, px) in enumerate(observations):
        pc = view.R @ X + view.t
        if pc[2] <= 0:
            return None
        u = view.fx * pc[0] / pc[2] + view.cx
        v = view.fy * pc[1] / pc[2] + view.cy
        errors[i] = np.hypot(u - px[0], v - px[1])
    if np.any(errors > gate_px):
        return None
    return TriangulationResult(point=X, errors=errors)


def _gauss_newton_step(observations, X):
    """One Gauss-Newton update for the stacked reprojection residuals at X."""
    m = len(observations)
    r = np.empty(2 * m)
    J = np.empty((2 * m, 3))
    for i, (view, (u_obs, v_obs)) in enumerate(observations):
        R = view.R
        x, y, z = R @ X + view.t
        r[2 * i] = view.fx * x / z + view.cx - u_obs
        r[2 * i + 1] = view.fy * y / z + view.cy - v_obs
        J[2 * i] = view.fx * (R[0] * z - x * R[2]) / (z * z)
        J[2 * i + 1] = view.fy * (R[1] * z - y * R[2]) / (z * z)
    JtJ = J.T @ J
    step, *_ = np.linalg.lstsq(JtJ, -J.T @ r, rcond=None)
    return step
