"""Tiled raster model and the RTIL on-disk format.

Layout (little-endian)::

    header   magic "RTIL", version u16, cols u64, rows u64, tile_w u32,
             tile_h u32, order u8, value_type u8, compression u8,
             lon0 f64, lat0 f64, pixel_size f64
    table    (offset u64, byte_len u64) for every tid
    payload  tile blocks in tid order, each optionally deflated on its own

Tiles are numbered row-major over the tile grid.  Edge tiles are ragged,
never padded.
"""

from __future__ import annotations

import math
import os
import struct
import threading
import zlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import RasterFormatError
from .geom import MBR, AffineGeo

MAGIC = b"RTIL"
VERSION = 1
HEADER = struct.Struct("<4sHQQIIBBBddd")
TABLE_ENTRY = struct.Struct("<QQ")

ORDERS = ("row", "column")
VALUE_TYPES = {"int32": np.dtype("<i4"), "float64": np.dtype("<f8")}
COMPRESSIONS = ("none", "deflate")


@dataclass(frozen=True)
class RasterMetadata:
    cols: int
    rows: int
    tile_w: int
    tile_h: int
    geo: AffineGeo
    order: str = "row"
    value_type: str = "int32"

    def __post_init__(self):
        for name in ("cols", "rows", "tile_w", "tile_h"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")
        if self.value_type not in VALUE_TYPES:
            raise ValueError(f"value_type must be one of {tuple(VALUE_TYPES)}")

    @property
    def tiles_per_row(self) -> int:
        return -(-self.cols // self.tile_w)

    @property
    def tiles_per_col(self) -> int:
        return -(-self.rows // self.tile_h)

    @property
    def num_tiles(self) -> int:
        return self.tiles_per_row * self.tiles_per_col

    @property
    def dtype(self) -> np.dtype:
        return VALUE_TYPES[self.value_type]

    @property
    def extent(self) -> MBR:
        g = self.geo
        return MBR(g.lon0, g.lat0 - self.rows * g.p, g.lon0 + self.cols * g.p, g.lat0)

    def tile_id(self, tile_row: int, tile_col: int) -> int:
        return tile_row * self.tiles_per_row + tile_col

    def tile_position(self, tid: int) -> tuple[int, int]:
        """``(tile_row, tile_col)`` of a tile id."""
        self.check_tid(tid)
        return divmod(tid, self.tiles_per_row)

    def tile_origin(self, tid: int) -> tuple[int, int]:
        """Global ``(x, y)`` of the tile's top-left pixel."""
        tr, tc = self.tile_position(tid)
        return tc * self.tile_w, tr * self.tile_h

    def tile_shape(self, tid: int) -> tuple[int, int]:
        """``(height, width)`` of a tile, clipped at the ragged edges."""
        tr, tc = self.tile_position(tid)
        return min(self.tile_h, self.rows - tr * self.tile_h), min(self.tile_w, self.cols - tc * self.tile_w)

    def tile_of_pixel(self, x: int, y: int) -> int:
        return (y // self.tile_h) * self.tiles_per_row + x // self.tile_w

    def check_tid(self, tid: int) -> None:
        if not 0 <= tid < self.num_tiles:
            raise IndexError(f"tile id {tid} out of range [0, {self.num_tiles})")


class TileCounter:
    """Thread-safe IO accounting shared by everything reading one raster."""

    def __init__(self):
        self._lock = threading.Lock()
        self.loads = 0
        self.bytes_read = 0
        self.per_tile = Counter()

    def record(self, tid: int, nbytes: int) -> None:
        with self._lock:
            self.loads += 1
            self.bytes_read += nbytes
            self.per_tile[tid] += 1

    def reset(self) -> None:
        with self._lock:
            self.loads = 0
            self.bytes_read = 0
            self.per_tile.clear()


def _encode_tile(meta: RasterMetadata, values: np.ndarray, compress: bool) -> bytes:
    arr = np.ascontiguousarray(values if meta.order == "row" else values.T, dtype=meta.dtype)
    raw = arr.tobytes()
    return zlib.compress(raw, 6) if compress else raw


def _decode_tile(meta: RasterMetadata, tid: int, blob: bytes, compressed: bool) -> np.ndarray:
    if compressed:
        blob = zlib.decompress(blob)
    h, w = meta.tile_shape(tid)
    if len(blob) != h * w * meta.dtype.itemsize:
        raise RasterFormatError(f"tile {tid}: payload has {len(blob)} bytes, expected {h * w * meta.dtype.itemsize}")
    arr = np.frombuffer(blob, dtype=meta.dtype)
    if meta.order == "row":
        return arr.reshape(h, w)
    return arr.reshape(w, h).T


def write_raster(path, meta: RasterMetadata, tiles: Iterable[tuple[int, np.ndarray]], compress: bool = False) -> Path:
    """Write every tile yielded by ``tiles`` as ``(tid, values)`` pairs.

    Out-of-order tiles are buffered so payloads always land in tid order.
    """
    path = Path(path)
    n = meta.num_tiles
    g = meta.geo
    header = HEADER.pack(
        MAGIC, VERSION, meta.cols, meta.rows, meta.tile_w, meta.tile_h,
        ORDERS.index(meta.order), list(VALUE_TYPES).index(meta.value_type), int(bool(compress)),
        g.lon0, g.lat0, g.p,
    )
    table = [(0, 0)] * n
    pending: dict[int, bytes] = {}
    seen = set()
    next_tid = 0
    with open(path, "wb") as f:
        f.write(header)
        f.write(b"\0" * (TABLE_ENTRY.size * n))
        offset = HEADER.size + TABLE_ENTRY.size * n
        for tid, values in tiles:
            tid = int(tid)
            meta.check_tid(tid)
            if tid in seen:
                raise RasterFormatError(f"tile {tid} produced twice")
            seen.add(tid)
            values = np.asarray(values)
            if values.shape != meta.tile_shape(tid):
                raise RasterFormatError(f"tile {tid}: shape {values.shape}, expected {meta.tile_shape(tid)}")
            pending[tid] = _encode_tile(meta, values, compress)
            while next_tid in pending:
                blob = pending.pop(next_tid)
                f.write(blob)
                table[next_tid] = (offset, len(blob))
                offset += len(blob)
                next_tid += 1
        if next_tid != n:
            missing = sorted(set(range(n)) - seen)
            raise RasterFormatError(f"missing tiles: {missing[:10]}{'...' if len(missing) > 10 else ''}")
        f.seek(HEADER.size)
        f.write(b"".join(TABLE_ENTRY.pack(o, l) for o, l in table))
    return path


def _parse_header(buf: bytes) -> tuple[RasterMetadata, bool]:
    if len(buf) < HEADER.size:
        raise RasterFormatError("truncated RTIL header")
    magic, version, c, r, wt, ht, order, vtype, comp, lon0, lat0, p = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise RasterFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise RasterFormatError(f"unsupported RTIL version {version}")
    try:
        meta = RasterMetadata(c, r, wt, ht, AffineGeo(lon0, lat0, p), ORDERS[order], list(VALUE_TYPES)[vtype])
    except (ValueError, IndexError) as exc:
        raise RasterFormatError(f"invalid header field: {exc}") from None
    if comp >= len(COMPRESSIONS):
        raise RasterFormatError(f"unknown compression code {comp}")
    return meta, bool(comp)


def read_metadata(path) -> RasterMetadata:
    """Read only the fixed-size header of an RTIL file."""
    with open(path, "rb") as f:
        return _parse_header(f.read(HEADER.size))[0]


class RasterFile:
    """Read-only handle on an RTIL file; safe to share across threads."""

    def __init__(self, path, counter: TileCounter | None = None):
        self.path = Path(path)
        self.counter = counter if counter is not None else TileCounter()
        self._fd = os.open(self.path, os.O_RDONLY)
        try:
            self.metadata, self.compressed = _parse_header(os.pread(self._fd, HEADER.size, 0))
            n = self.metadata.num_tiles
            raw = os.pread(self._fd, TABLE_ENTRY.size * n, HEADER.size)
            if len(raw) != TABLE_ENTRY.size * n:
                raise RasterFormatError("truncated tile lookup table")
            self.table = np.frombuffer(raw, dtype="<u8").reshape(n, 2)
        except BaseException:
            os.close(self._fd)
            raise

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def read_tile(self, tid: int) -> np.ndarray:
        self.metadata.check_tid(tid)
        offset, length = (int(v) for v in self.table[tid])
        blob = os.pread(self._fd, length, offset)
        if len(blob) != length:
            raise RasterFormatError(f"tile {tid}: truncated payload")
        self.counter.record(tid, length)
        return _decode_tile(self.metadata, tid, blob, self.compressed)

    def read_all(self) -> np.ndarray:
        """Assemble the full raster; test helper, counts every tile load."""
        m = self.metadata
        out = np.empty((m.rows, m.cols), dtype=m.dtype)
        for tid in range(m.num_tiles):
            x0, y0 = m.tile_origin(tid)
            t = self.read_tile(tid)
            out[y0:y0 + t.shape[0], x0:x0 + t.shape[1]] = t
        return out


def read_tile(raster: RasterFile, tid: int) -> np.ndarray:
    return raster.read_tile(tid)


def iter_tiles_from_array(meta: RasterMetadata, values: np.ndarray) -> Iterator[tuple[int, np.ndarray]]:
    if values.shape != (meta.rows, meta.cols):
        raise ValueError(f"array shape {values.shape} does not match raster {(meta.rows, meta.cols)}")
    for tid in range(meta.num_tiles):
        x0, y0 = meta.tile_origin(tid)
        h, w = meta.tile_shape(tid)
        yield tid, values[y0:y0 + h, x0:x0 + w]


def _pattern_tile(meta: RasterMetadata, tid: int, pattern: str, value, seed: int) -> np.ndarray:
    h, w = meta.tile_shape(tid)
    if pattern == "constant":
        return np.full((h, w), value, dtype=meta.dtype)
    if pattern == "gradient":
        x0, y0 = meta.tile_origin(tid)
        yy, xx = np.mgrid[y0:y0 + h, x0:x0 + w]
        return (xx + yy).astype(meta.dtype)
    if pattern == "random":
        rng = np.random.default_rng([seed, tid])
        if meta.value_type == "int32":
            return rng.integers(0, 256, size=(h, w), dtype=np.int32)
        return rng.random((h, w))
    raise ValueError(f"unknown pattern {pattern!r}")


def gen_raster(path, meta: RasterMetadata, pattern: str = "random", value=0, seed: int = 0,
               compress: bool = False) -> Path:
    """Write a synthetic raster: ``constant`` (``value``), ``gradient`` (x + y) or seeded ``random``."""
    if pattern not in ("constant", "gradient", "random"):
        raise ValueError(f"unknown pattern {pattern!r}")
    tiles = ((tid, _pattern_tile(meta, tid, pattern, value, seed)) for tid in range(meta.num_tiles))
    return write_raster(path, meta, tiles, compress=compress)


def tile_grid_size(cols: int, rows: int, tile_w: int, tile_h: int) -> tuple[int, int]:
    return math.ceil(cols / tile_w), math.ceil(rows / tile_h)
