"""Tagged point clouds shared by the enhancement pipeline and the I/O layer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

SOURCE_COLMAP = 0
SOURCE_TRIANGULATED = 1
SOURCE_MONO = 2

SOURCE_NAMES = {
    SOURCE_COLMAP: "colmap",
    SOURCE_TRIANGULATED: "triangulated",
    SOURCE_MONO: "mono",
}


def _frozen(a, dtype):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PointCloud:
    """Points with a provenance tag per point.

    positions are (N, 3) float64; the frame (world or a camera frame) is
    determined by the producing operation. colors are (N, 3) uint8 or None
    when unknown. origin_views / origin_pixels record, where applicable, the
    view and continuous pixel a point was lifted from (-1 / NaN when absent).
    ids carries reconstruction point ids when the cloud came from one.
    """

    positions: np.ndarray
    sources: np.ndarray
    colors: np.ndarray | None = None
    origin_views: np.ndarray = field(default=None)  # type: ignore[assignment]
    origin_pixels: np.ndarray = field(default=None)  # type: ignore[assignment]
    ids: np.ndarray | None = None

    def __post_init__(self):
        pos = _frozen(self.positions, np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InputError(f"positions must be (N, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise InputError("positions must be finite")
        n = pos.shape[0]
        src = _frozen(self.sources, np.uint8)
        if src.shape != (n,):
            raise InputError("sources must be (N,)")
        if n and not np.all(src <= SOURCE_MONO):
            raise InputError("unknown source tag")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "sources", src)
        if self.colors is not None:
            col = _frozen(self.colors, np.uint8)
            if col.shape != (n, 3):
                raise InputError("colors must be (N, 3)")
            object.__setattr__(self, "colors", col)
        ov = self.origin_views if self.origin_views is not None else np.full(n, -1)
        opx = (
            self.origin_pixels
            if self.origin_pixels is not None
            else np.full((n, 2), np.nan)
        )
        ov = _frozen(ov, np.int64)
        opx = _frozen(opx, np.float64)
        if ov.shape != (n,) or opx.shape != (n, 2):
            raise InputError("origin arrays must be (N,) and (N, 2)")
        object.__setattr__(self, "origin_views", ov)
        object.__setattr__(self, "origin_pixels", opx)
        if self.ids is not None:
            ids = _frozen(self.ids, np.int64)
            if ids.shape != (n,):
                raise InputError("ids must be (N,)")
            object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.positions.shape[0]

    @classmethod
    def build(
        cls,
        positions,
        source: int,
        colors=None,
        origin_views=None,
        origin_pixels=None,
        ids=None,
    ) -> "PointCloud":
        """Cloud with a single source tag for every point."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = positions.shape[0]
        return cls(
            positions=positions,
            sources=np.full(n, source, dtype=np.uint8),
            colors=colors,
            origin_views=origin_views,
            origin_pixels=origin_pixels,
            ids=ids,
        )

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(positions=np.empty((0, 3)), sources=np.empty(0, dtype=np.uint8))

    def subset(self, index) -> "PointCloud":
        return PointCloud(
            positions=self.positions[index],
            sources=self.sources[index],
            colors=None if self.colors is None else self.colors[index],
            origin_views=self.origin_views[index],
            origin_pixels=self.origin_pixels[index],
            ids=None if self.ids is None else self.ids[index],
        )

    def with_colors(self, colors) -> "PointCloud":
        return PointCloud(
            positions=self.positions,
            sources=self.sources,
            colors=colors,
            origin_views=self.origin_views,
            origin_pixels=self.origin_pixels,
            ids=self.ids,
        )

    def source_counts(self) -> dict:
        """Number of points per source tag name."""
        return {
            name: int(np.sum(self.sources == tag))
            for tag, name in SOURCE_NAMES.items()
        }


UNKNOWN_COLOR = (128, 128, 128)


def concat(clouds) -> PointCloud:
    """Concatenate clouds in order.

    If any non-empty part carries colors, the result has colors; points from
    colorless parts get the neutral UNKNOWN_COLOR fill.
    """
    clouds = [c for c in clouds]
    if not clouds:
        return PointCloud.empty()
    colors = None
    if any(c.colors is not None and len(c) for c in clouds):
        parts = []
        for c in clouds:
            if c.colors is not None:
                parts.append(c.colors)
            else:
                parts.append(np.full((len(c), 3), UNKNOWN_COLOR, dtype=np.uint8))
        colors = np.concatenate(parts)
    return PointCloud(
        positions=np.concatenate([c.positions for c in clouds]),
        sources=np.concatenate([c.sources for c in clouds]),
        colors=colors,
        origin_views=np.concatenate([c.origin_views for c in clouds]),
        origin_pixels=np.concatenate([c.origin_pixels for c in clouds]),
        ids=None,
    )
