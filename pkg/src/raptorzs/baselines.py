"""Reference join algorithms: raster clipping (RDA), indexed point-in-polygon
(VDA) and the single-machine scanline method.

All three share the pixel-center even-odd rule from :mod:`raptorzs.geom`.
VDA is the correctness oracle used throughout the test suite.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .aggregation import Accumulator, PartialTable, ZonalResult, finalize
from .errors import MalformedPolygonError, MaskTooLargeError
from .geom import (
    Polygon,
    crosses,
    crossing_lon,
    first_column_at_or_after,
    pixel_center_lat,
    pixel_center_lon,
    points_in_polygon,
    rows_spanned,
)
from .raster import RasterFile, RasterMetadata
from .pipeline import RunReport

DEFAULT_MASK_CAP = 256 * 2**20


def _template(meta: RasterMetadata, histogram=False, bin_width=None) -> Accumulator:
    return Accumulator("int" if meta.value_type == "int32" else "float", histogram, bin_width)


# -- spatial index ---------------------------------------------------------

@dataclass
class _Node:
    bounds: np.ndarray          # (k, 4) child boxes: min_lon, min_lat, max_lon, max_lat
    children: list              # _Node for inner nodes, Polygon for leaves
    leaf: bool


def _str_groups(boxes: np.ndarray, capacity: int) -> list[np.ndarray]:
    n = len(boxes)
    cx = (boxes[:, 0] + boxes[:, 2]) / 2
    cy = (boxes[:, 1] + boxes[:, 3]) / 2
    leaves = -(-n // capacity)
    nslices = math.ceil(math.sqrt(leaves))
    slice_len = -(-leaves // nslices) * capacity
    order = np.lexsort((cy, cx))
    groups = []
    for s in range(0, n, slice_len):
        part = order[s:s + slice_len]
        part = part[np.lexsort((cx[part], cy[part]))]
        groups.extend(part[k:k + capacity] for k in range(0, len(part), capacity))
    return groups


class PolygonIndex:
    """Sort-tile-recursive packed R-tree over polygon MBRs.

    Queries return candidates whose MBR contains the point; the caller
    confirms containment with the ring test.
    """

    def __init__(self, polygons: Sequence[Polygon], capacity: int = 16):
        self.size = len(polygons)
        if not polygons:
            self.root = None
            return
        boxes = np.array([[p.mbr.min_lon, p.mbr.min_lat, p.mbr.max_lon, p.mbr.max_lat] for p in polygons])
        items = list(polygons)
        leaf = True
        while True:
            nodes, nboxes = [], []
            for g in _str_groups(boxes, capacity):
                b = boxes[g]
                nodes.append(_Node(b, [items[i] for i in g], leaf))
                nboxes.append([b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max()])
            leaf = False
            if len(nodes) == 1:
                self.root = nodes[0]
                break
            items, boxes = nodes, np.array(nboxes)

    def query(self, lon: float, lat: float) -> list[Polygon]:
        return [p for p, _ in self.query_points(np.array([lon]), np.array([lat]))]

    def query_points(self, lons: np.ndarray, lats: np.ndarray) -> Iterator[tuple[Polygon, np.ndarray]]:
        """Yield ``(polygon, indices of points inside its MBR)`` for a batch of points."""
        if self.root is None or not len(lons):
            return
        stack = [(self.root, np.arange(len(lons)))]
        while stack:
            node, idx = stack.pop()
            x, y = lons[idx], lats[idx]
            for b, child in zip(node.bounds, node.children):
                hit = idx[(x >= b[0]) & (x <= b[2]) & (y >= b[1]) & (y <= b[3])]
                if not len(hit):
                    continue
                if node.leaf:
                    yield child, hit
                else:
                    stack.append((child, hit))


# -- VDA -------------------------------------------------------------------

def run_vda(raster: RasterFile, polygons: Sequence[Polygon], histogram=False, bin_width=None) -> ZonalResult:
    """Scan every pixel of the raster and look each center up in an index."""
    meta = raster.metadata
    geo = meta.geo
    index = PolygonIndex(polygons)
    table = PartialTable(*_template(meta, histogram, bin_width).variant)
    for tid in range(meta.num_tiles):
        tile = raster.read_tile(tid)
        x0, y0 = meta.tile_origin(tid)
        h, w = tile.shape
        lon = np.tile(pixel_center_lon(geo, np.arange(x0, x0 + w)), h)
        lat = np.repeat(pixel_center_lat(geo, np.arange(y0, y0 + h)), w)
        flat = tile.reshape(-1)
        for poly, idx in index.query_points(lon, lat):
            inside = idx[points_in_polygon(poly, lon[idx], lat[idx])]
            if len(inside):
                table.add_pairs(np.full(len(inside), poly.pid, dtype=np.int64), flat[inside])
    return finalize([table], [p.pid for p in polygons], table.template)


# -- RDA -------------------------------------------------------------------

def _pixel_window(meta: RasterMetadata, poly: Polygon):
    """Rows and columns of the raster that can hold pixel centers of ``poly``."""
    geo = meta.geo
    rows = rows_spanned(geo, poly.mbr.min_lat, poly.mbr.max_lat, meta.rows)
    # one spare column each side absorbs rounding of interpolated crossings
    c0 = int(first_column_at_or_after(geo, np.array([poly.mbr.min_lon]))[0]) - 1
    c1 = int(first_column_at_or_after(geo, np.array([poly.mbr.max_lon]))[0]) + 1
    c0, c1 = max(c0, 0), min(c1, meta.cols)
    return rows, c0, c1


def rasterize_mask(meta: RasterMetadata, poly: Polygon, rows: range, c0: int, c1: int) -> np.ndarray:
    """Bit mask of ``poly`` over ``rows x [c0, c1)`` using an active edge table.

    Edges are sorted by their northern extent and swept from north to south.
    """
    geo = meta.geo
    x1, y1, x2, y2 = poly.segment_arrays()
    keep = y1 != y2
    x1, y1, x2, y2 = x1[keep], y1[keep], x2[keep], y2[keep]
    hi = np.maximum(y1, y2)
    lo = np.minimum(y1, y2)
    order = np.argsort(-hi, kind="stable")
    x1, y1, x2, y2, hi, lo = x1[order], y1[order], x2[order], y2[order], hi[order], lo[order]
    mask = np.zeros((len(rows), c1 - c0), dtype=bool)
    active = np.empty(0, dtype=np.int64)
    nxt = 0
    for r, y in enumerate(rows):
        lat = pixel_center_lat(geo, y)
        start = nxt
        while nxt < len(hi) and hi[nxt] > lat:
            nxt += 1
        if nxt > start:
            active = np.concatenate([active, np.arange(start, nxt)])
        active = active[lo[active] <= lat]
        live = active[crosses(y1[active], y2[active], lat)]
        if not len(live):
            continue
        if len(live) % 2:
            raise MalformedPolygonError(poly.pid, y)
        xc = np.sort(crossing_lon(x1[live], y1[live], x2[live], y2[live], lat))
        cols = first_column_at_or_after(geo, xc)
        for a, b in zip(cols[0::2].tolist(), cols[1::2].tolist()):
            a, b = max(a, c0), min(b, c1)
            if a < b:
                mask[r, a - c0:b - c0] = True
    return mask


def run_rda(raster: RasterFile, polygons: Sequence[Polygon], mask_cap: int = DEFAULT_MASK_CAP,
            histogram=False, bin_width=None) -> ZonalResult:
    """Rasterize each polygon on its own and clip every overlapping tile.

    Tiles are re-read for every polygon they overlap.
    """
    meta = raster.metadata
    tmpl = _template(meta, histogram, bin_width)
    out = {}
    for poly in polygons:
        acc = out[poly.pid] = Accumulator.like(tmpl)
        rows, c0, c1 = _pixel_window(meta, poly)
        if not len(rows) or c0 >= c1:
            continue
        if len(rows) * (c1 - c0) > mask_cap:
            raise MaskTooLargeError(
                f"mask for polygon {poly.pid} needs {len(rows) * (c1 - c0)} bytes (cap {mask_cap}); use RZS instead")
        mask = rasterize_mask(meta, poly, rows, c0, c1)
        on_rows = np.flatnonzero(mask.any(axis=1))
        on_cols = np.flatnonzero(mask.any(axis=0))
        if not len(on_rows):
            continue
        # tighten the MBR window to the mask's own bounding box
        mask = mask[on_rows[0]:on_rows[-1] + 1, on_cols[0]:on_cols[-1] + 1]
        r0, r1 = rows.start + int(on_rows[0]), rows.start + int(on_rows[-1]) + 1
        c0, c1 = c0 + int(on_cols[0]), c0 + int(on_cols[-1]) + 1
        for tr in range(r0 // meta.tile_h, (r1 - 1) // meta.tile_h + 1):
            for tc in range(c0 // meta.tile_w, (c1 - 1) // meta.tile_w + 1):
                tid = meta.tile_id(tr, tc)
                tile = raster.read_tile(tid)
                tx, ty = meta.tile_origin(tid)
                h, w = tile.shape
                ya, yb = max(ty, r0), min(ty + h, r1)
                xa, xb = max(tx, c0), min(tx + w, c1)
                sub = mask[ya - r0:yb - r0, xa - c0:xb - c0]
                if sub.any():
                    acc.add_values(tile[ya - ty:yb - ty, xa - tx:xb - tx][sub])
    return ZonalResult(out)


# -- Scanline --------------------------------------------------------------

def _polygon_runs(meta: RasterMetadata, poly: Polygon):
    """Per-row pixel runs of one polygon: arrays ``(y, x_start, x_end)``."""
    geo = meta.geo
    rows = rows_spanned(geo, poly.mbr.min_lat, poly.mbr.max_lat, meta.rows)
    if not len(rows):
        return None
    ys = np.arange(rows.start, rows.stop)
    lat = pixel_center_lat(geo, ys)
    x1, y1, x2, y2 = poly.segment_arrays()
    out_y, out_x = [], []
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(len(x1)):
            hit = crosses(y1[i], y2[i], lat)
            if hit.any():
                out_y.append(ys[hit])
                out_x.append(crossing_lon(x1[i], y1[i], x2[i], y2[i], lat[hit]))
    if not out_y:
        return None
    y = np.concatenate(out_y)
    xw = np.concatenate(out_x)
    order = np.lexsort((xw, y))
    y, xw = y[order], xw[order]
    _, counts = np.unique(y, return_counts=True)
    if np.any(counts % 2):
        raise MalformedPolygonError(poly.pid, int(np.unique(y)[np.flatnonzero(counts % 2)[0]]))
    cols = first_column_at_or_after(geo, xw)
    xs = np.clip(cols[0::2], 0, meta.cols)
    xe = np.clip(cols[1::2], 0, meta.cols)
    keep = xs < xe
    return y[0::2][keep], xs[keep], xe[keep]


def run_scanline(raster: RasterFile, polygons: Sequence[Polygon], histogram=False, bin_width=None) -> ZonalResult:
    """Single pass over the raster, row band by row band.

    All polygons' intersections for a band of tile rows are collected first,
    then each tile of the band that holds any run is read exactly once.
    """
    meta = raster.metadata
    table = PartialTable(*_template(meta, histogram, bin_width).variant)
    ys, xss, xes, pids = [], [], [], []
    for poly in polygons:
        runs = _polygon_runs(meta, poly)
        if runs is not None:
            ys.append(runs[0])
            xss.append(runs[1])
            xes.append(runs[2])
            pids.append(np.full(len(runs[0]), poly.pid, dtype=np.int64))
    if ys:
        y = np.concatenate(ys)
        xs = np.concatenate(xss)
        xe = np.concatenate(xes)
        pid = np.concatenate(pids)
        order = np.lexsort((xs, y))
        y, xs, xe, pid = y[order], xs[order], xe[order], pid[order]
        band = y // meta.tile_h
        for b in np.unique(band).tolist():
            sel = band == b
            by, bxs, bxe, bpid = y[sel], xs[sel], xe[sel], pid[sel]
            for tc in range(int(bxs.min()) // meta.tile_w, (int(bxe.max()) - 1) // meta.tile_w + 1):
                lo, hi = tc * meta.tile_w, (tc + 1) * meta.tile_w
                a = np.maximum(bxs, lo)
                z = np.minimum(bxe, hi)
                m = a < z
                if not m.any():
                    continue
                tid = meta.tile_id(b, tc)
                tile = raster.read_tile(tid)
                ty = b * meta.tile_h
                lengths = z[m] - a[m]
                idx = np.repeat(np.arange(len(lengths)), lengths)
                starts = np.cumsum(lengths) - lengths
                cols = (a[m] - lo)[idx] + (np.arange(int(lengths.sum())) - starts[idx])
                table.add_pairs(bpid[m][idx], tile[(by[m] - ty)[idx], cols])
    return finalize([table], [p.pid for p in polygons], table.template)


METHODS = {"rda": run_rda, "vda": run_vda, "scanline": run_scanline}


def run_baseline(method: str, raster: RasterFile, polygons: Sequence[Polygon], **kw) -> tuple[ZonalResult, RunReport]:
    if method not in METHODS:
        raise ValueError(f"unknown baseline {method!r}; choose from {sorted(METHODS)}")
    before = raster.counter.loads, raster.counter.bytes_read
    t0 = time.perf_counter()
    result = METHODS[method](raster, polygons, **kw)
    elapsed = time.perf_counter() - t0
    report = RunReport(method=method, wall_time={"total": elapsed},
                       tile_loads=raster.counter.loads - before[0],
                       tile_bytes_read=raster.counter.bytes_read - before[1], config=dict(kw))
    return result, report
