"""Covisibility maps: per-pixel counts of how many other views match a pixel.

A map for view i holds, at each pixel, the number of destination views j != i
for which the pixel has at least one correspondence. Counts therefore range
from 0 (seen only in view i) to n_views - 1 (matched everywhere).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    EmptyInput,
    InconsistentN,
    InputError,
    OutOfBounds,
    OutOfBoundsPixel,
    ViewIdMismatch,
)
from .geometry import CameraView


def _frozen(a, dtype):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CorrespondenceSet:
    """Pixel-to-pixel matches for one ordered view pair (source -> destination).

    src / dst are (N, 2) continuous pixel coordinates, conf holds per-match
    confidences in [0, 1].
    """

    src_view: int
    dst_view: int
    src: np.ndarray
    dst: np.ndarray
    conf: np.ndarray

    def __post_init__(self):
        if self.src_view == self.dst_view:
            raise InputError("correspondence set must link two distinct views")
        src = _frozen(self.src, np.float64)
        dst = _frozen(self.dst, np.float64)
        conf = _frozen(self.conf, np.float64)
        n = src.shape[0]
        if src.shape != (n, 2) or dst.shape != (n, 2) or conf.shape != (n,):
            raise InputError("match arrays must be (N, 2), (N, 2), (N,)")
        if n and (conf.min() < 0.0 or conf.max() > 1.0):
            raise InputError("confidences must lie in [0, 1]")
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "conf", conf)

    def __len__(self):
        return self.src.shape[0]


@dataclass(frozen=True)
class CovisMap:
    view_id: int
    width: int
    height: int
    counts: np.ndarray  # (H, W) int32
    n_views: int

    def __post_init__(self):
        counts = _frozen(self.counts, np.int32)
        if counts.shape != (self.height, self.width):
            raise InputError(
                f"counts shape {counts.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if self.n_views < 1:
            raise InputError("n_views must be >= 1")
        if counts.size and (counts.min() < 0 or counts.max() > self.n_views - 1):
            raise InputError(
                f"counts must lie in [0, {self.n_views - 1}], "
                f"got [{counts.min()}, {counts.max()}]"
            )
        object.__setattr__(self, "counts", counts)


@dataclass(frozen=True)
class SceneCovisScore:
    """Scene-level covisibility score: mean of per-view normalized count means."""

    S: float
    per_view_means: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "per_view_means", _frozen(self.per_view_means, np.float64))


def build_covis_map(
    view: CameraView,
    matches,
    n_views: int,
    min_conf: float = 0.0,
) -> CovisMap:
    """Accumulate correspondence hits into a covisibility map for one view.

    A pixel's count is the number of destination views with at least one match
    of confidence >= min_conf landing on it; several matches into the same
    destination view still contribute 1.
    """
    if n_views < 1:
        raise InputError("n_views must be >= 1")
    counts = np.zeros((view.height, view.width), dtype=np.int32)
    seen_dst = set()
    for cset in matches:
        if cset.src_view != view.view_id:
            raise ViewIdMismatch(
                f"set source {cset.src_view} does not match view {view.view_id}"
            )
        if cset.dst_view in seen_dst:
            raise ViewIdMismatch(f"duplicate destination view {cset.dst_view}")
        seen_dst.add(cset.dst_view)
        keep = cset.conf >= min_conf
        if not np.any(keep):
            continue
        xs = np.floor(cset.src[keep, 0]).astype(np.int64)
        ys = np.floor(cset.src[keep, 1]).astype(np.int64)
        if (
            xs.min() < 0
            or ys.min() < 0
            or xs.max() >= view.width
            or ys.max() >= view.height
        ):
            raise OutOfBoundsPixel(
                f"match outside {view.width}x{view.height} in set "
                f"{cset.src_view}->{cset.dst_view}"
            )
        present = np.zeros_like(counts, dtype=bool)
        present[ys, xs] = True
        counts += present
    return CovisMap(
        view_id=view.view_id,
        width=view.width,
        height=view.height,
        counts=counts,
        n_views=n_views,
    )


def refine_covis_map(cmap: CovisMap, kernel_radius: int = 1) -> CovisMap:
    """Morphologically open every count level set and recompose the map.

    Each level t in [1, n_views - 1] is binarized (counts >= t), opened with a
    square (2r+1)^2 structuring element, and the opened masks are summed back
    into counts. Pixels beyond the image border count as foreground during
    erosion, so a saturated map stays saturated. Radius 0 is the identity.
    """
    if kernel_radius < 0:
        raise InputError("kernel_radius must be >= 0")
    if kernel_radius == 0:
        return cmap
    size = 2 * kernel_radius + 1
    structure = np.ones((size, size), dtype=bool)
    out = np.zeros_like(cmap.counts)
    max_level = int(cmap.counts.max()) if cmap.counts.size else 0
    for level in range(1, max_level + 1):
        mask = cmap.counts >= level
        eroded = ndimage.binary_erosion(mask, structure=structure, border_value=1)
        opened = ndimage.binary_dilation(eroded, structure=structure, border_value=0)
        out += opened
    return CovisMap(
        view_id=cmap.view_id,
        width=cmap.width,
        height=cmap.height,
        counts=out,
        n_views=cmap.n_views,
    )


def scene_covis_score(maps) -> SceneCovisScore:
    """Average normalized covisibility over all views.

    Per-view mean is mean(counts) / (n_views - 1); the scene score is the mean
    of the per-view means, so it lies in [0, 1] regardless of scene size.
    """
    maps = list(maps)
    if not maps:
        raise EmptyInput("no covisibility maps given")
    n_views = maps[0].n_views
    if any(m.n_views != n_views for m in maps):
        raise InconsistentN("maps disagree on the number of views")
    means = np.empty(len(maps))
    for i, m in enumerate(maps):
        if n_views == 1:
            means[i] = 0.0
        else:
            means[i] = float(np.mean(m.counts)) / (n_views - 1)
    return SceneCovisScore(S=float(np.mean(means)), per_view_means=means)


def covis_at(cmap: CovisMap, pixel) -> int:
    """Count at a continuous pixel coordinate (floored to its integer pixel)."""
    x, y = pixel
    if not (0.0 <= x < cmap.width and 0.0 <= y < cmap.height):
        raise OutOfBounds(
            f"pixel ({x}, {y}) outside {cmap.width}x{cmap.height}"
        )
    return int(cmap.counts[int(np.floor(y)), int(np.floor(x))])
