"""Polygon datasets: parsing, summary statistics, chunking and synthesis."""

from __future__ import annotations

import csv
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import VectorParseError
from .geom import MBR, AffineGeo, Polygon

DEFAULT_CHUNK_SIZE = 5000


@dataclass(frozen=True)
class VectorStats:
    np: int
    ns: int
    ns_bar: float
    wp_bar: float
    hp_bar: float
    hs: float
    input_bytes: int


@dataclass
class VectorDataset:
    polygons: list[Polygon]
    input_bytes: int | None = None
    stats: VectorStats | None = field(default=None, repr=False)

    def __post_init__(self):
        seen = set()
        for poly in self.polygons:
            if poly.pid in seen:
                raise ValueError(f"duplicate pid {poly.pid}")
            seen.add(poly.pid)
        if self.stats is None:
            self.stats = compute_stats(self)

    def __len__(self):
        return len(self.polygons)

    @property
    def pids(self) -> list[int]:
        return [p.pid for p in self.polygons]


@dataclass(frozen=True)
class VectorChunk:
    chunk_id: int
    polygons: tuple[Polygon, ...]
    mbr: MBR | None

    def extent_pixels(self, geo: AffineGeo) -> tuple[int, int]:
        """Chunk MBR size in pixels of ``geo``: ``(w_c, h_c)``."""
        if self.mbr is None:
            return 0, 0
        return math.ceil(self.mbr.width / geo.p), math.ceil(self.mbr.height / geo.p)

    @property
    def num_segments(self) -> int:
        return sum(p.num_segments for p in self.polygons)


# -- WKT -------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\()|(\))|(,)|([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)|([A-Za-z]+))")


def _tokenize(text: str):
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"unexpected character {text[pos:pos + 10]!r}")
        pos = m.end()
        open_, close, comma, num, word = m.groups()
        if open_:
            yield "("
        elif close:
            yield ")"
        elif comma:
            yield ","
        elif num:
            yield float(num)
        else:
            yield word.upper()


def _parse_ring(tokens, i):
    if tokens[i] != "(":
        raise ValueError("expected '(' to open ring")
    i += 1
    pts = []
    while True:
        if not (isinstance(tokens[i], float) and isinstance(tokens[i + 1], float)):
            raise ValueError("expected coordinate pair")
        pts.append((tokens[i], tokens[i + 1]))
        i += 2
        if tokens[i] == ",":
            i += 1
        elif tokens[i] == ")":
            return pts, i + 1
        elif tokens[i] is None:
            raise ValueError("unexpected end of geometry")
        else:
            raise ValueError(f"unexpected token {tokens[i]!r} in ring")


def _parse_polygon_body(tokens, i):
    if tokens[i] != "(":
        raise ValueError("expected '(' to open polygon")
    i += 1
    rings = []
    while True:
        ring, i = _parse_ring(tokens, i)
        rings.append(ring)
        if tokens[i] == ",":
            i += 1
        elif tokens[i] == ")":
            return rings, i + 1
        elif tokens[i] is None:
            raise ValueError("unexpected end of geometry")
        else:
            raise ValueError(f"unexpected token {tokens[i]!r} between rings")


def parse_wkt(text: str) -> list[list[tuple[float, float]]]:
    """Parse a POLYGON or MULTIPOLYGON into a flat list of rings."""
    try:
        tokens = list(_tokenize(text))
        tokens.append(None)
        kind = tokens[0]
        if kind == "POLYGON":
            rings, i = _parse_polygon_body(tokens, 1)
        elif kind == "MULTIPOLYGON":
            if tokens[1] != "(":
                raise ValueError("expected '(' after MULTIPOLYGON")
            i = 2
            rings = []
            while True:
                part, i = _parse_polygon_body(tokens, i)
                rings.extend(part)
                if tokens[i] == ",":
                    i += 1
                elif tokens[i] == ")":
                    i += 1
                    break
                else:
                    raise ValueError("malformed MULTIPOLYGON")
        else:
            raise ValueError(f"unsupported geometry {kind!r}")
        if tokens[i] is not None:
            raise ValueError("trailing text after geometry")
    except IndexError:
        raise ValueError("unexpected end of geometry") from None
    return rings


def to_wkt(poly: Polygon) -> str:
    rings = ",".join("(" + ",".join(f"{x!r} {y!r}" for x, y in ring.tolist()) + ")" for ring in poly.rings)
    return f"POLYGON({rings})"


def _make_polygon(pid, rings, line):
    try:
        return Polygon(pid, rings)
    except ValueError as exc:
        raise VectorParseError(str(exc), line) from None


def _load_wkt_csv(path: Path) -> list[Polygon]:
    polys = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise VectorParseError(f"expected 2 columns 'pid,wkt', got {len(row)}", line)
            pid_s, wkt = row
            if line == 1 and pid_s.strip().lower() == "pid":
                continue
            try:
                pid = int(pid_s)
            except ValueError:
                raise VectorParseError(f"bad pid {pid_s!r}", line) from None
            try:
                rings = parse_wkt(wkt)
            except ValueError as exc:
                raise VectorParseError(str(exc), line) from None
            polys.append(_make_polygon(pid, rings, line))
    return polys


def _load_geojson(path: Path) -> list[Polygon]:
    try:
        with open(path) as f:
            text = f.read()
        if not text.strip():
            return []
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise VectorParseError(exc.msg, exc.lineno) from None
    if doc.get("type") != "FeatureCollection":
        raise VectorParseError("top-level object must be a FeatureCollection")
    polys = []
    for k, feat in enumerate(doc.get("features", [])):
        geom = feat.get("geometry") or {}
        pid = feat.get("id", (feat.get("properties") or {}).get("pid", k))
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        if gtype == "Polygon":
            rings = coords
        elif gtype == "MultiPolygon":
            rings = [ring for part in coords for ring in part]
        else:
            raise VectorParseError(f"feature {k}: unsupported geometry type {gtype!r}")
        try:
            polys.append(Polygon(int(pid), rings))
        except (TypeError, ValueError) as exc:
            raise VectorParseError(f"feature {k}: {exc}") from None
    return polys


def load_vector(path, format: str | None = None) -> VectorDataset:
    """Load ``pid,wkt`` CSV or a GeoJSON FeatureCollection; pids keep input order."""
    path = Path(path)
    if format is None:
        format = "geojson" if path.suffix.lower() in (".json", ".geojson") else "wkt-csv"
    if format == "wkt-csv":
        polys = _load_wkt_csv(path)
    elif format == "geojson":
        polys = _load_geojson(path)
    else:
        raise ValueError(f"unknown vector format {format!r}")
    try:
        return VectorDataset(polys, input_bytes=os.path.getsize(path))
    except ValueError as exc:
        raise VectorParseError(str(exc)) from None


def write_wkt_csv(path, ds: VectorDataset) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["pid", "wkt"])
        for poly in ds.polygons:
            w.writerow([poly.pid, to_wkt(poly)])
    return path


# -- statistics ------------------------------------------------------------

def compute_stats(ds: VectorDataset, measure_hs: bool = False) -> VectorStats:
    """Dataset summary used by the cost model.

    Unless ``measure_hs`` is set, the mean segment height is approximated as
    polygon height over twice the segments per polygon.
    """
    polys = ds.polygons
    n_p = len(polys)
    n_s = sum(p.num_segments for p in polys)
    if n_p == 0:
        return VectorStats(0, 0, 0.0, 0.0, 0.0, 0.0, ds.input_bytes or 0)
    ns_bar = n_s / n_p
    wp = float(np.mean([p.mbr.width for p in polys]))
    hp = float(np.mean([p.mbr.height for p in polys]))
    if measure_hs:
        heights = np.concatenate([np.abs(p.segment_arrays()[3] - p.segment_arrays()[1]) for p in polys])
        hs = float(heights.mean())
    else:
        hs = hp / (2 * ns_bar)
    size = ds.input_bytes
    if size is None:
        size = sum(len(to_wkt(p)) + 12 for p in polys)
    return VectorStats(n_p, n_s, ns_bar, wp, hp, hs, int(size))


# -- partitioning ----------------------------------------------------------

def _mbr_array(polys: Sequence[Polygon]) -> np.ndarray:
    """``(n, 4)`` array of ``min_lon, min_lat, max_lon, max_lat``."""
    return np.array([(p.mbr.min_lon, p.mbr.min_lat, p.mbr.max_lon, p.mbr.max_lat) for p in polys],
                    dtype=np.float64).reshape(-1, 4)


def _union_mbr(boxes: np.ndarray) -> MBR | None:
    if not len(boxes):
        return None
    lo = boxes[:, :2].min(axis=0)
    hi = boxes[:, 2:].max(axis=0)
    return MBR(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def _str_order(boxes: np.ndarray, capacity: int) -> np.ndarray:
    n = len(boxes)
    cx = (boxes[:, 0] + boxes[:, 2]) / 2
    cy = (boxes[:, 1] + boxes[:, 3]) / 2
    leaves = -(-n // capacity)
    slices = math.ceil(math.sqrt(leaves))
    slice_len = -(-leaves // slices) * capacity
    by_x = np.lexsort((cy, cx))
    order = np.empty(n, dtype=np.int64)
    for s in range(0, n, slice_len):
        part = by_x[s:s + slice_len]
        order[s:s + len(part)] = part[np.lexsort((cx[part], cy[part]))]
    return order


def partition(ds: VectorDataset, chunk_size: int = DEFAULT_CHUNK_SIZE, spatial: bool = True) -> list[VectorChunk]:
    """Split polygons into chunks of ``chunk_size``.

    ``spatial=True`` orders polygons with sort-tile-recursive packing of MBR
    centers before cutting; otherwise input order is kept.  Only the final
    chunk can be short.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    polys = ds.polygons
    boxes = _mbr_array(polys)
    order = _str_order(boxes, chunk_size) if spatial and polys else np.arange(len(polys))
    boxes = boxes[order]
    order = order.tolist()
    chunks = []
    for cid, s in enumerate(range(0, len(order), chunk_size)):
        members = tuple(polys[i] for i in order[s:s + chunk_size])
        chunks.append(VectorChunk(cid, members, _union_mbr(boxes[s:s + chunk_size])))
    return chunks


# -- synthesis -------------------------------------------------------------

def gen_vector(num_polygons: int, ns_bar: int = 8, extent: MBR = MBR(0.0, 0.0, 1.0, 1.0),
               size: tuple[float, float] = (0.05, 0.05), shape: str = "star", clusters: int = 0,
               cluster_spread: float = 0.02, seed: int = 0, first_pid: int = 0) -> VectorDataset:
    """Seeded random convex or star-shaped polygons.

    Each polygon has ``ns_bar`` segments and an MBR of roughly ``size``
    (width, height) in degrees.  With ``clusters > 0`` centers are drawn
    around that many random cluster centers.  Output order is the draw
    order, which is unrelated to position.
    """
    if ns_bar < 3:
        raise ValueError("ns_bar must be >= 3")
    if shape not in ("star", "convex"):
        raise ValueError(f"unknown shape {shape!r}")
    rng = np.random.default_rng(seed)
    w, h = size
    if clusters > 0:
        cc = np.column_stack([
            rng.uniform(extent.min_lon + w, extent.max_lon - w, clusters),
            rng.uniform(extent.min_lat + h, extent.max_lat - h, clusters),
        ])
        which = rng.integers(0, clusters, num_polygons)
        centers = cc[which] + rng.normal(0.0, cluster_spread, (num_polygons, 2))
    else:
        centers = np.column_stack([
            rng.uniform(extent.min_lon, extent.max_lon, num_polygons),
            rng.uniform(extent.min_lat, extent.max_lat, num_polygons),
        ])
    scale = rng.uniform(0.5, 1.5, (num_polygons, 1))
    polys = []
    base = np.arange(ns_bar) * (2 * np.pi / ns_bar)
    for i in range(num_polygons):
        if shape == "convex":
            ang = base + rng.uniform(0, 2 * np.pi)
            rad = np.ones(ns_bar)
        else:
            ang = np.sort(rng.uniform(0, 2 * np.pi, ns_bar))
            rad = rng.uniform(0.4, 1.0, ns_bar)
        xs = centers[i, 0] + 0.5 * w * scale[i, 0] * rad * np.cos(ang)
        ys = centers[i, 1] + 0.5 * h * scale[i, 0] * rad * np.sin(ang)
        ring = np.column_stack([xs, ys])
        ring = np.vstack([ring, ring[:1]])
        polys.append(Polygon(first_pid + i, [ring]))
    return VectorDataset(polys)
