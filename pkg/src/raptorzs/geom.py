"""Geometric primitives and the world/grid mappings shared by every stage.

Pixel membership follows one rule everywhere in the package: a pixel belongs
to a polygon iff its center, as returned by :func:`g2w`, is inside the polygon
under the even-odd rule over all rings.  A scanline at latitude ``lat``
crosses a segment iff exactly one endpoint satisfies ``y <= lat`` (half-open
latitude span ``[min, max)``), and the crossing abscissa is always computed by
:func:`crossing_lon`.  Keeping these expressions in one place is what makes
the different join algorithms agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


class WorldPoint(NamedTuple):
    lon: float
    lat: float


class GridPoint(NamedTuple):
    x: int
    y: int


@dataclass(frozen=True)
class MBR:
    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def __post_init__(self):
        if self.min_lon > self.max_lon or self.min_lat > self.max_lat:
            raise ValueError(f"inverted MBR {self}")

    @property
    def width(self) -> float:
        return self.max_lon - self.min_lon

    @property
    def height(self) -> float:
        return self.max_lat - self.min_lat

    @property
    def area(self) -> float:
        return self.width * self.height

    def union(self, other: "MBR") -> "MBR":
        return MBR(
            min(self.min_lon, other.min_lon),
            min(self.min_lat, other.min_lat),
            max(self.max_lon, other.max_lon),
            max(self.max_lat, other.max_lat),
        )

    def intersects(self, other: "MBR") -> bool:
        return not (
            other.min_lon > self.max_lon
            or other.max_lon < self.min_lon
            or other.min_lat > self.max_lat
            or other.max_lat < self.min_lat
        )

    def contains_point(self, lon: float, lat: float) -> bool:
        return self.min_lon <= lon <= self.max_lon and self.min_lat <= lat <= self.max_lat


@dataclass(frozen=True)
class AffineGeo:
    """North-up affine georeference: west edge, north edge and pixel size."""

    lon0: float
    lat0: float
    p: float

    def __post_init__(self):
        if not (self.p > 0 and math.isfinite(self.p)):
            raise ValueError(f"pixel size must be positive, got {self.p}")
        if not (math.isfinite(self.lon0) and math.isfinite(self.lat0)):
            raise ValueError("origin must be finite")


class Segment(NamedTuple):
    a: WorldPoint
    b: WorldPoint
    pid: int


class Polygon:
    """A polygon made of one or more closed rings (outer ring plus holes).

    Rings are stored as read-only ``(n, 2)`` float64 arrays of ``(lon, lat)``
    with the first point repeated at the end.
    """

    __slots__ = ("pid", "rings", "mbr", "num_segments", "_segments")

    def __init__(self, pid: int, rings: Sequence[Sequence[Sequence[float]]]):
        if int(pid) != pid or pid < 0 or pid >= 2**32:
            raise ValueError(f"pid must be an integer in [0, 2**32), got {pid!r}")
        if not rings:
            raise ValueError(f"polygon {pid} has no rings")
        arrs = []
        for ring in rings:
            arr = np.array(ring, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise ValueError(f"polygon {pid}: ring must be a list of (lon, lat) pairs")
            if len(arr) < 4:
                raise ValueError(f"polygon {pid}: ring has {len(arr)} points, need at least 4")
            if not np.array_equal(arr[0], arr[-1]):
                raise ValueError(f"polygon {pid}: ring is not closed")
            if not np.isfinite(arr).all():
                raise ValueError(f"polygon {pid}: non-finite coordinate")
            arr.setflags(write=False)
            arrs.append(arr)
        self.pid = int(pid)
        self.rings = tuple(arrs)
        allpts = np.concatenate(self.rings)
        lo = allpts.min(axis=0)
        hi = allpts.max(axis=0)
        self.mbr = MBR(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))
        self.num_segments = sum(len(r) - 1 for r in self.rings)
        self._segments = None

    def __repr__(self):
        return f"Polygon(pid={self.pid}, rings={len(self.rings)}, segments={self.num_segments})"

    def __eq__(self, other):
        if not isinstance(other, Polygon):
            return NotImplemented
        return self.pid == other.pid and len(self.rings) == len(other.rings) and all(
            np.array_equal(a, b) for a, b in zip(self.rings, other.rings)
        )

    def __hash__(self):
        return hash((self.pid, len(self.rings)))

    def segment_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Endpoints of every ring edge as four arrays ``(x1, y1, x2, y2)``."""
        if self._segments is None:
            x1 = np.concatenate([r[:-1, 0] for r in self.rings])
            y1 = np.concatenate([r[:-1, 1] for r in self.rings])
            x2 = np.concatenate([r[1:, 0] for r in self.rings])
            y2 = np.concatenate([r[1:, 1] for r in self.rings])
            for a in (x1, y1, x2, y2):
                a.setflags(write=False)
            self._segments = (x1, y1, x2, y2)
        return self._segments

    def segments(self) -> list[Segment]:
        out = []
        for ring in self.rings:
            for (ax, ay), (bx, by) in zip(ring[:-1], ring[1:]):
                if ax == bx and ay == by:
                    continue
                out.append(Segment(WorldPoint(float(ax), float(ay)), WorldPoint(float(bx), float(by)), self.pid))
        return out


def w2g(geo: AffineGeo, pt: WorldPoint) -> GridPoint:
    """Map a world coordinate to the grid cell containing it (rows grow southward)."""
    lon, lat = pt
    return GridPoint(math.floor((lon - geo.lon0) / geo.p), math.floor((geo.lat0 - lat) / geo.p))


def g2w(geo: AffineGeo, gp: GridPoint) -> WorldPoint:
    """Map a grid cell to the world coordinate of its center."""
    x, y = gp
    return WorldPoint(pixel_center_lon(geo, x), pixel_center_lat(geo, y))


def pixel_center_lon(geo: AffineGeo, x):
    return geo.lon0 + (x + 0.5) * geo.p


def pixel_center_lat(geo: AffineGeo, y):
    return geo.lat0 - (y + 0.5) * geo.p


def polygon_mbr(poly: Polygon) -> MBR:
    return poly.mbr


def crossing_lon(x1, y1, x2, y2, lat):
    """Longitude where the line through a segment meets latitude ``lat``."""
    return x1 + (lat - y1) * (x2 - x1) / (y2 - y1)


def crosses(y1, y2, lat):
    """True where a segment's half-open latitude span ``[min, max)`` holds ``lat``."""
    return (y1 <= lat) != (y2 <= lat)


def first_column_at_or_after(geo: AffineGeo, lon: np.ndarray) -> np.ndarray:
    """Smallest column index whose pixel-center longitude is ``>= lon``.

    Evaluated with the exact same float expression as :func:`pixel_center_lon`,
    so the result never disagrees with a direct center comparison.
    """
    lon = np.asarray(lon, dtype=np.float64)
    k = np.ceil((lon - geo.lon0) / geo.p - 0.5).astype(np.int64)
    # the closed form can be off by one after rounding; settle it exactly
    for _ in range(3):
        back = pixel_center_lon(geo, k - 1) >= lon
        fwd = pixel_center_lon(geo, k) < lon
        if not (back.any() or fwd.any()):
            break
        k = k - back + fwd
    return k


def rows_spanned(geo: AffineGeo, lat_lo: float, lat_hi: float, nrows: int) -> range:
    """Rows ``y`` in ``[0, nrows)`` whose center latitude lies in ``[lat_lo, lat_hi)``."""
    if not lat_lo < lat_hi:
        return range(0)
    # center_lat decreases with y: lat_lo <= center  <=>  y <= (lat0 - lat_lo)/p - 0.5
    y_first = math.ceil((geo.lat0 - lat_hi) / geo.p - 0.5) - 1
    y_last = math.floor((geo.lat0 - lat_lo) / geo.p - 0.5) + 1
    while y_first <= y_last and not (pixel_center_lat(geo, y_first) < lat_hi):
        y_first += 1
    while y_last >= y_first and not (pixel_center_lat(geo, y_last) >= lat_lo):
        y_last -= 1
    return range(max(y_first, 0), min(y_last, nrows - 1) + 1)


def points_in_polygon(poly: Polygon, lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
    """Vectorized even-odd containment test for many points."""
    lons = np.asarray(lons, dtype=np.float64)
    lats = np.asarray(lats, dtype=np.float64)
    inside = np.zeros(np.broadcast(lons, lats).shape, dtype=bool)
    x1, y1, x2, y2 = poly.segment_arrays()
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(len(x1)):
            hit = crosses(y1[i], y2[i], lats)
            if not hit.any():
                continue
            xc = crossing_lon(x1[i], y1[i], x2[i], y2[i], lats)
            inside ^= hit & (xc <= lons)
    return inside


def point_in_polygon(poly: Polygon, lon: float, lat: float) -> bool:
    inside = False
    x1, y1, x2, y2 = poly.segment_arrays()
    for ax, ay, bx, by in zip(x1.tolist(), y1.tolist(), x2.tolist(), y2.tolist()):
        if crosses(ay, by, lat) and crossing_lon(ax, ay, bx, by, lat) <= lon:
            inside = not inside
    return inside
