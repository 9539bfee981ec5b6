"""Readers and writers for everything the pipeline touches on disk.

Formats:

* COLMAP text reconstructions: cameras.txt / images.txt / points3D.txt with
  the documented text schema. Only PINHOLE, SIMPLE_PINHOLE and SIMPLE_RADIAL
  camera models are accepted; the radial coefficient is dropped with a
  warning. Binary reconstructions are not supported.
* Correspondences: JSON lines, one match per line:
  {"src_view": int, "dst_view": int, "sx": float, "sy": float,
   "dx": float, "dy": float, "conf": float}
  Pixel coordinates are continuous with the origin at the top-left pixel;
  every line of a file must belong to the same ordered view pair.
* Covisibility maps: 16-bit big-endian binary PGM (P5) holding raw counts,
  with view metadata in a header comment, plus a companion 8-bit PGM where
  counts are rescaled so n_views - 1 maps to 255 (half-up rounding).
* Depth maps: single-channel little-endian PFM. Rows are stored bottom-up per
  the PFM convention and flipped to top-down order in memory. Non-positive or
  non-finite values mark invalid pixels.
* Point clouds: PLY, ascii or binary little-endian, with float64 positions,
  uint8 colors and a uint8 "source" property (0=colmap, 1=triangulated,
  2=mono). Clouds without colors are written white.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import SOURCE_COLMAP, PointCloud
from .covismap import CorrespondenceSet, CovisMap
from .errors import (
    DuplicateSourcePixel,
    EmptyInput,
    InputError,
    IoError,
    MalformedHeader,
    MalformedRecord,
    MissingFile,
    OutOfBoundsPixel,
    UnsupportedCameraModel,
)
from .geometry import CameraView


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel metric depth in a camera frame, with a validity mask."""

    width: int
    height: int
    values: np.ndarray  # (H, W) float32
    valid_mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32)
        mask = np.array(self.valid_mask, dtype=bool)
        if values.shape != (self.height, self.width) or mask.shape != values.shape:
            raise InputError("depth map arrays must be (H, W)")
        valid = values[mask]
        if valid.size and not (np.all(np.isfinite(valid)) and np.all(valid > 0)):
            raise InputError("valid depths must be strictly positive and finite")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid_mask", mask)

    @classmethod
    def from_values(cls, values) -> "DepthMap":
        """Build a map where positive finite values are valid."""
        values = np.asarray(values, dtype=np.float32)
        mask = np.isfinite(values) & (values > 0)
        return cls(
            width=values.shape[1], height=values.shape[0], values=values, valid_mask=mask
        )


@dataclass
class SceneBundle:
    """Everything loaded for one scene: views, sparse points, optional extras."""

    views: list
    colmap_points: PointCloud
    depth_maps: dict = field(default_factory=dict)  # view_id -> DepthMap
    correspondences: list = field(default_factory=list)

    def __post_init__(self):
        ids = {v.view_id for v in self.views}
        if len(ids) != len(self.views):
            raise InputError("duplicate view ids in bundle")
        for cset in self.correspondences:
            if cset.src_view not in ids or cset.dst_view not in ids:
                raise InputError(
                    f"correspondence pair {cset.src_view}->{cset.dst_view} "
                    "references unknown views"
                )
        for vid, depth in self.depth_maps.items():
            view = self.view_by_id(vid)
            if (depth.width, depth.height) != (view.width, view.height):
                raise InputError(
                    f"depth map for view {vid} is {depth.width}x{depth.height}, "
                    f"view is {view.width}x{view.height}"
                )

    def view_by_id(self, view_id: int) -> CameraView:
        for v in self.views:
            if v.view_id == view_id:
                return v
        raise InputError(f"no view with id {view_id}")


# ---------------------------------------------------------------------------
# COLMAP text reconstructions
# ---------------------------------------------------------------------------

_SUPPORTED_MODELS = {"PINHOLE", "SIMPLE_PINHOLE", "SIMPLE_RADIAL"}


def qvec_to_rotmat(qvec) -> np.ndarray:
    w, x, y, z = qvec
    return np.array(
        [
            [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * z * x + 2 * w * y],
            [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
            [2 * z * x - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
        ]
    )


def rotmat_to_qvec(R) -> np.ndarray:
    Rxx, Ryx, Rzx, Rxy, Ryy, Rzy, Rxz, Ryz, Rzz = np.asarray(R).flat
    K = (
        np.array(
            [
                [Rxx - Ryy - Rzz, 0, 0, 0],
                [Ryx + Rxy, Ryy - Rxx - Rzz, 0, 0],
                [Rzx + Rxz, Rzy + Ryz, Rzz - Rxx - Ryy, 0],
                [Ryz - Rzy, Rzx - Rxz, Rxy - Ryx, Rxx + Ryy + Rzz],
            ]
        )
        / 3.0
    )
    eigvals, eigvecs = np.linalg.eigh(K)
    qvec = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if qvec[0] < 0:
        qvec *= -1
    return qvec


def _data_lines(path: Path):
    """Yield (1-based line number, stripped content) skipping comments/blanks."""
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def _require_file(path: Path) -> Path:
    if not path.is_file():
        raise MissingFile(f"missing {path}")
    return path


def read_colmap_reconstruction(dir_path) -> SceneBundle:
    """Load cameras.txt / images.txt / points3D.txt from a directory."""
    dir_path = Path(dir_path)
    cameras_path = _require_file(dir_path / "cameras.txt")
    images_path = _require_file(dir_path / "images.txt")
    points_path = _require_file(dir_path / "points3D.txt")

    cameras = {}
    for lineno, line in _data_lines(cameras_path):
        elems = line.split()
        try:
            cam_id = int(elems[0])
            model = elems[1]
            width, height = int(elems[2]), int(elems[3])
            params = [float(p) for p in elems[4:]]
        except (ValueError, IndexError) as exc:
            raise MalformedRecord(cameras_path, lineno, f"bad camera record: {exc}")
        if model not in _SUPPORTED_MODELS:
            raise UnsupportedCameraModel(f"{cameras_path}:{lineno}: model {model}")
        if model == "PINHOLE":
            if len(params) != 4:
                raise MalformedRecord(cameras_path, lineno, "PINHOLE needs 4 params")
            fx, fy, cx, cy = params
        elif model == "SIMPLE_PINHOLE":
            if len(params) != 3:
                raise MalformedRecord(
                    cameras_path, lineno, "SIMPLE_PINHOLE needs 3 params"
                )
            fx, cx, cy = params
            fy = fx
        else:  # SIMPLE_RADIAL
            if len(params) != 4:
                raise MalformedRecord(
                    cameras_path, lineno, "SIMPLE_RADIAL needs 4 params"
                )
            fx, cx, cy, k = params
            fy = fx
            if k != 0.0:
                warnings.warn(
                    f"camera {cam_id}: dropping radial coefficient {k}", stacklevel=2
                )
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        cameras[cam_id] = (K, width, height)

    views = []
    # Two lines per image; the observation line may be empty, so blanks only
    # count as separators while a pose line is expected.
    pose_lines = []
    expecting_pose = True
    with open(images_path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line.startswith("#"):
                continue
            if expecting_pose:
                if not line:
                    continue
                pose_lines.append((lineno, line))
                expecting_pose = False
            else:
                expecting_pose = True  # observation line, possibly empty
    if not expecting_pose:
        raise MalformedRecord(
            images_path, pose_lines[-1][0], "image record missing observation line"
        )
    for lineno, line in pose_lines:
        elems = line.split()
        try:
            image_id = int(elems[0])
            qvec = np.array([float(e) for e in elems[1:5]])
            tvec = np.array([float(e) for e in elems[5:8]])
            camera_id = int(elems[8])
        except (ValueError, IndexError) as exc:
            raise MalformedRecord(images_path, lineno, f"bad image record: {exc}")
        if camera_id not in cameras:
            raise MalformedRecord(images_path, lineno, f"unknown camera {camera_id}")
        K, width, height = cameras[camera_id]
        H = np.eye(4)
        H[:3, :3] = qvec_to_rotmat(qvec)
        H[:3, 3] = tvec
        views.append(
            CameraView(view_id=image_id, K=K, H=H, width=width, height=height)
        )
    views.sort(key=lambda v: v.view_id)

    ids, xyz, rgb = [], [], []
    for lineno, line in _data_lines(points_path):
        elems = line.split()
        try:
            ids.append(int(elems[0]))
            xyz.append([float(e) for e in elems[1:4]])
            rgb.append([int(e) for e in elems[4:7]])
            float(elems[7])  # reprojection error column must be present
        except (ValueError, IndexError) as exc:
            raise MalformedRecord(points_path, lineno, f"bad point record: {exc}")
    if not ids:
        raise EmptyInput(f"{points_path} contains no points")
    points = PointCloud.build(
        np.array(xyz),
        source=SOURCE_COLMAP,
        colors=np.array(rgb, dtype=np.uint8),
        ids=np.array(ids, dtype=np.int64),
    )
    return SceneBundle(views=views, colmap_points=points)


def write_colmap_reconstruction(views, points: PointCloud, dir_path) -> None:
    """Write cameras.txt / images.txt / points3D.txt (PINHOLE model)."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    with open(dir_path / "cameras.txt", "w") as fh:
        fh.write("# Camera list with one line of data per camera:\n")
        fh.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        for view in views:
            fh.write(
                f"{view.view_id} PINHOLE {view.width} {view.height} "
                f"{view.fx:.17g} {view.fy:.17g} {view.cx:.17g} {view.cy:.17g}\n"
            )
    with open(dir_path / "images.txt", "w") as fh:
        fh.write("# Image list with two lines of data per image:\n")
        fh.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        fh.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        for view in views:
            q = rotmat_to_qvec(view.R)
            t = view.t
            fh.write(
                f"{view.view_id} "
                f"{q[0]:.17g} {q[1]:.17g} {q[2]:.17g} {q[3]:.17g} "
                f"{t[0]:.17g} {t[1]:.17g} {t[2]:.17g} "
                f"{view.view_id} view_{view.view_id:04d}.png\n\n"
            )
    with open(dir_path / "points3D.txt", "w") as fh:
        fh.write("# 3D point list with one line of data per point:\n")
        fh.write("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n")
        ids = points.ids if points.ids is not None else np.arange(1, len(points) + 1)
        colors = (
            points.colors
            if points.colors is not None
            else np.full((len(points), 3), 255, dtype=np.uint8)
        )
        for pid, p, c in zip(ids, points.positions, colors):
            fh.write(
                f"{int(pid)} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g} "
                f"{int(c[0])} {int(c[1])} {int(c[2])} 0\n"
            )


# ---------------------------------------------------------------------------
# Correspondence JSONL
# ---------------------------------------------------------------------------

_CORR_KEYS = ("src_view", "dst_view", "sx", "sy", "dx", "dy", "conf")


def read_correspondences(path, views) -> CorrespondenceSet:
    """Read one ordered view pair's matches from a JSONL file.

    `views` supplies image bounds: a mapping view_id -> CameraView or a
    sequence of CameraView. Rejects out-of-bounds pixels, confidences outside
    [0, 1], and files listing the same (floored) source pixel twice.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing {path}")
    if not isinstance(views, dict):
        views = {v.view_id: v for v in views}

    pair = None
    src, dst, conf = [], [], []
    seen_px = set()
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(path, lineno, f"invalid JSON: {exc}")
            if not all(k in rec for k in _CORR_KEYS):
                raise MalformedRecord(path, lineno, "missing keys")
            try:
                sv, dv = int(rec["src_view"]), int(rec["dst_view"])
                sx, sy = float(rec["sx"]), float(rec["sy"])
                dx, dy = float(rec["dx"]), float(rec["dy"])
                c = float(rec["conf"])
            except (TypeError, ValueError) as exc:
                raise MalformedRecord(path, lineno, f"bad field: {exc}")
            if pair is None:
                if sv not in views or dv not in views:
                    raise MalformedRecord(path, lineno, f"unknown views {sv}->{dv}")
                pair = (sv, dv)
            elif (sv, dv) != pair:
                raise MalformedRecord(
                    path, lineno, f"mixed view pairs {pair} and {(sv, dv)}"
                )
            if not (0.0 <= c <= 1.0):
                raise MalformedRecord(path, lineno, f"confidence {c} outside [0, 1]")
            sview, dview = views[pair[0]], views[pair[1]]
            if not (0.0 <= sx < sview.width and 0.0 <= sy < sview.height):
                raise OutOfBoundsPixel(
                    f"{path}:{lineno}: source pixel ({sx}, {sy}) outside "
                    f"{sview.width}x{sview.height}"
                )
            if not (0.0 <= dx < dview.width and 0.0 <= dy < dview.height):
                raise OutOfBoundsPixel(
                    f"{path}:{lineno}: destination pixel ({dx}, {dy}) outside "
                    f"{dview.width}x{dview.height}"
                )
            key = (int(np.floor(sx)), int(np.floor(sy)))
            if key in seen_px:
                raise DuplicateSourcePixel(
                    f"{path}:{lineno}: source pixel {key} listed twice"
                )
            seen_px.add(key)
            src.append((sx, sy))
            dst.append((dx, dy))
            conf.append(c)
    if pair is None:
        raise MalformedRecord(path, 1, "file contains no matches")
    return CorrespondenceSet(
        src_view=pair[0],
        dst_view=pair[1],
        src=np.array(src),
        dst=np.array(dst),
        conf=np.array(conf),
    )


def write_correspondences(cset: CorrespondenceSet, path) -> None:
    with open(path, "w") as fh:
        for (sx, sy), (dx, dy), c in zip(cset.src, cset.dst, cset.conf):
            fh.write(
                json.dumps(
                    {
                        "src_view": cset.src_view,
                        "dst_view": cset.dst_view,
                        "sx": sx,
                        "sy": sy,
                        "dx": dx,
                        "dy": dy,
                        "conf": c,
                    }
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# PLY point clouds
# ---------------------------------------------------------------------------

_PLY_PROPS = [
    ("double", "x"),
    ("double", "y"),
    ("double", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
    ("uchar", "source"),
]


def write_ply(cloud: PointCloud, path, binary: bool = True) -> None:
    """Write a cloud as PLY with the uchar `source` extension property."""
    colors = (
        cloud.colors
        if cloud.colors is not None
        else np.full((len(cloud), 3), 255, dtype=np.uint8)
    )
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {len(cloud)}"]
    header += [f"property {typ} {name}" for typ, name in _PLY_PROPS]
    header.append("end_header")
    try:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            if binary:
                packer = struct.Struct("<dddBBBB")
                for p, c, s in zip(cloud.positions, colors, cloud.sources):
                    fh.write(packer.pack(p[0], p[1], p[2], c[0], c[1], c[2], s))
            else:
                for p, c, s in zip(cloud.positions, colors, cloud.sources):
                    fh.write(
                        f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g} "
                        f"{c[0]} {c[1]} {c[2]} {s}\n".encode("ascii")
                    )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}")


def read_ply(path) -> PointCloud:
    """Read a PLY written by write_ply (either format variant)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise MalformedHeader(f"{path}: not a PLY file")
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n") :]

    fmt = None
    count = None
    props = []
    for line in header_lines[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise MalformedHeader(f"{path}: unsupported element {parts[1]}")
            count = int(parts[2])
        elif parts[0] == "property":
            props.append((parts[1], parts[2]))
    if fmt not in ("ascii", "binary_little_endian") or count is None:
        raise MalformedHeader(f"{path}: unsupported PLY layout")
    if props != _PLY_PROPS:
        raise MalformedHeader(f"{path}: unexpected vertex properties {props}")

    if fmt == "binary_little_endian":
        packer = struct.Struct("<dddBBBB")
        expect = packer.size * count
        if len(body) < expect:
            raise MalformedHeader(f"{path}: truncated body")
        rows = [packer.unpack_from(body, i * packer.size) for i in range(count)]
    else:
        lines = body.decode("ascii", errors="replace").splitlines()
        if len(lines) < count:
            raise MalformedHeader(f"{path}: truncated body")
        rows = []
        for lineno, line in enumerate(lines[:count], start=1):
            parts = line.split()
            if len(parts) != 7:
                raise MalformedRecord(path, lineno, "vertex row needs 7 fields")
            try:
                rows.append(tuple(float(v) for v in parts[:3]) + tuple(int(v) for v in parts[3:]))
            except ValueError as exc:
                raise MalformedRecord(path, lineno, f"bad vertex row: {exc}")
    if count == 0:
        return PointCloud.empty()
    arr = np.array(rows, dtype=np.float64)
    positions = arr[:, :3]
    colors = arr[:, 3:6].astype(np.uint8)
    sources = arr[:, 6].astype(np.uint8)
    if np.any(arr[:, 6] > 2):
        raise MalformedHeader(f"{path}: unknown source tag")
    return PointCloud(positions=positions, sources=sources, colors=colors)


# ---------------------------------------------------------------------------
# Covisibility map PGM
# ---------------------------------------------------------------------------


def _vis_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_vis" + path.suffix)


def write_covis_map_image(cmap: CovisMap, path) -> None:
    """Write raw counts as 16-bit PGM plus an 8-bit visualization companion.

    The raw file goes to `path`; the visualization goes to `<stem>_vis<ext>`
    with counts rescaled so n_views - 1 maps to 255 (half-up rounding).
    """
    path = Path(path)
    meta = f"# covis view_id={cmap.view_id} n_views={cmap.n_views}\n"
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{meta}{cmap.width} {cmap.height}\n65535\n".encode("ascii"))
            fh.write(cmap.counts.astype(">u2").tobytes())
        denom = max(cmap.n_views - 1, 1)
        vis = np.floor(cmap.counts.astype(np.float64) * 255.0 / denom + 0.5)
        vis = np.clip(vis, 0, 255).astype(np.uint8)
        with open(_vis_path(path), "wb") as fh:
            fh.write(f"P5\n{meta}{cmap.width} {cmap.height}\n255\n".encode("ascii"))
            fh.write(vis.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}")


def read_covis_map_image(path) -> CovisMap:
    """Read a raw 16-bit covisibility PGM written by write_covis_map_image."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    # Header tokens: magic, width, height, maxval; comments may appear between.
    pos = 0
    tokens = []
    meta = {}
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise MalformedHeader(f"{path}: truncated PGM header")
        if data[pos : pos + 1] == b"#":
            eol = data.find(b"\n", pos)
            if eol < 0:
                raise MalformedHeader(f"{path}: unterminated comment")
            comment = data[pos + 1 : eol].decode("ascii", errors="replace")
            for part in comment.split():
                if "=" in part:
                    key, _, value = part.partition("=")
                    meta[key] = value
            pos = eol + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise MalformedHeader(f"{path}: not a binary PGM")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise MalformedHeader(f"{path}: bad PGM dimensions")
    if maxval != 65535:
        raise MalformedHeader(f"{path}: expected 16-bit PGM, maxval {maxval}")
    try:
        view_id = int(meta["view_id"])
        n_views = int(meta["n_views"])
    except (KeyError, ValueError):
        raise MalformedHeader(f"{path}: missing covisibility metadata comment")
    pos += 1  # single whitespace after maxval
    body = data[pos : pos + width * height * 2]
    if len(body) != width * height * 2:
        raise MalformedHeader(f"{path}: truncated pixel data")
    counts = np.frombuffer(body, dtype=">u2").reshape(height, width).astype(np.int32)
    return CovisMap(
        view_id=view_id,
        width=width,
        height=height,
        counts=counts,
        n_views=n_views,
    )


# ---------------------------------------------------------------------------
# PFM depth maps
# ---------------------------------------------------------------------------


def read_depth_map(path) -> DepthMap:
    """Read a single-channel little-endian PFM into a top-down DepthMap."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4:
        raise MalformedHeader(f"{path}: truncated PFM header")
    magic, dims, scale_str, body = parts
    if magic.strip() != b"Pf":
        raise MalformedHeader(f"{path}: expected single-channel PFM magic 'Pf'")
    try:
        width, height = (int(v) for v in dims.split())
        scale = float(scale_str)
    except ValueError:
        raise MalformedHeader(f"{path}: bad PFM dimensions or scale")
    if scale >= 0:
        raise MalformedHeader(f"{path}: only little-endian PFM supported")
    expect = width * height * 4
    if len(body) < expect:
        raise MalformedHeader(f"{path}: truncated pixel data")
    values = np.frombuffer(body[:expect], dtype="<f4").reshape(height, width)
    return DepthMap.from_values(values[::-1])  # bottom-up file to top-down memory


def write_depth_map(depth: DepthMap, path) -> None:
    """Write a DepthMap as little-endian PFM; invalid pixels keep their values."""
    try:
        with open(path, "wb") as fh:
            fh.write(f"Pf\n{depth.width} {depth.height}\n-1.0\n".encode("ascii"))
            fh.write(depth.values[::-1].astype("<f4").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}")


# ---------------------------------------------------------------------------
# Directory-level loading conventions
# ---------------------------------------------------------------------------


def correspondence_path(dir_path, src_view: int, dst_view: int) -> Path:
    return Path(dir_path) / f"corr_{src_view:04d}_{dst_view:04d}.jsonl"


def depth_path(dir_path, view_id: int) -> Path:
    return Path(dir_path) / f"depth_{view_id:04d}.pfm"


def covis_path(dir_path, view_id: int, refined: bool = False) -> Path:
    suffix = "_refined" if refined else ""
    return Path(dir_path) / f"covis_{view_id:04d}{suffix}.pgm"


def load_scene(scene_dir, corr_dir=None, depth_dir=None) -> SceneBundle:
    """Load a reconstruction plus any correspondence / depth files present.

    Correspondences are looked up as corr_{src:04d}_{dst:04d}.jsonl for every
    ordered view pair and depth maps as depth_{view:04d}.pfm; absent files
    simply mean "no data".
    """
    bundle = read_colmap_reconstruction(scene_dir)
    corr_dir = Path(corr_dir) if corr_dir is not None else Path(scene_dir)
    depth_dir = Path(depth_dir) if depth_dir is not None else Path(scene_dir)
    views = {v.view_id: v for v in bundle.views}
    correspondences = []
    for src in sorted(views):
        for dst in sorted(views):
            if src == dst:
                continue
            path = correspondence_path(corr_dir, src, dst)
            if path.is_file():
                correspondences.append(read_correspondences(path, views))
    depth_maps = {}
    for vid in sorted(views):
        path = depth_path(depth_dir, vid)
        if path.is_file():
            depth_maps[vid] = read_depth_map(path)
    return SceneBundle(
        views=bundle.views,
        colmap_points=bundle.colmap_points,
        depth_maps=depth_maps,
        correspondences=correspondences,
    )
