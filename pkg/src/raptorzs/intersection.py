"""Intersection step: scanline runs of each chunk, sorted to match raster tiles.

Only :class:`RasterMetadata` is consulted here, never tile data.

File layout (little-endian)::

    records  fixed-width (tid u32, y u32, pid u32, x_start u32, x_end u32),
             grouped by tid in sort order
    footer   chunk_id u32, n_pids u32, pid u32 * n_pids,
             n_tiles u32, (tid u32, offset u64) * n_tiles
    trailer  footer_offset u64, magic

Magic ``RIF1`` marks plain record blocks.  ``RIFZ`` marks files whose
per-tile record blocks are each deflated separately, in which case footer
offsets point at the compressed blocks.
"""

from __future__ import annotations

import heapq
import os
import struct
import tempfile
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .errors import IntersectionFormatError, MalformedPolygonError
from .geom import crosses, crossing_lon, first_column_at_or_after, pixel_center_lat
from .raster import RasterMetadata
from .vector import VectorChunk

MAGIC = b"RIF1"
MAGIC_DEFLATE = b"RIFZ"
TRAILER = struct.Struct("<Q4s")
RECORD = np.dtype([("tid", "<u4"), ("y", "<u4"), ("pid", "<u4"), ("x_start", "<u4"), ("x_end", "<u4")])
TILE_ENTRY = np.dtype([("tid", "<u4"), ("offset", "<u8")])
DEFAULT_MEMORY_BUDGET = 10_000_000
_BATCH_SEGMENTS = 200_000


class Crossings(NamedTuple):
    """Scanline crossings sorted by ``(pid, y, x)``.

    ``x`` is the first column whose center lies at or east of the crossing;
    it is not clipped to the raster.
    """

    pid: np.ndarray
    y: np.ndarray
    x: np.ndarray

    def __len__(self):
        return len(self.pid)


def _segment_table(polygons) -> tuple[np.ndarray, ...]:
    rings = [r for p in polygons for r in p.rings]
    if not rings:
        empty = np.empty(0)
        return empty, empty, empty, empty, np.empty(0, dtype=np.int64)
    pts = np.concatenate(rings)
    lens = np.array([len(r) for r in rings])
    # an edge starts at every point except the closing point of each ring
    edge = np.ones(len(pts) - 1, dtype=bool)
    edge[np.cumsum(lens)[:-1] - 1] = False
    x1, y1 = pts[:-1, 0][edge], pts[:-1, 1][edge]
    x2, y2 = pts[1:, 0][edge], pts[1:, 1][edge]
    pid = np.repeat(np.array([p.pid for p in polygons], dtype=np.int64), [p.num_segments for p in polygons])
    return x1, y1, x2, y2, pid


def _crossings(polygons, meta: RasterMetadata) -> Crossings:
    geo = meta.geo
    x1, y1, x2, y2, pid = _segment_table(polygons)
    lo = np.minimum(y1, y2)
    hi = np.maximum(y1, y2)
    # widened row window per segment, trimmed exactly below
    with np.errstate(invalid="ignore"):
        y_first = np.ceil((geo.lat0 - hi) / geo.p - 0.5) - 1
        y_last = np.floor((geo.lat0 - lo) / geo.p - 0.5) + 1
    y_first = np.clip(y_first, 0, meta.rows).astype(np.int64)
    y_last = np.clip(y_last, -1, meta.rows - 1).astype(np.int64)
    counts = np.where(lo < hi, np.maximum(y_last - y_first + 1, 0), 0)
    total = int(counts.sum())
    if total == 0:
        e = np.empty(0, dtype=np.int64)
        return Crossings(e, e, e)
    seg = np.repeat(np.arange(len(counts)), counts)
    starts = np.cumsum(counts) - counts
    y = y_first[seg] + (np.arange(total) - starts[seg])
    lat = pixel_center_lat(geo, y)
    ya, yb = y1[seg], y2[seg]
    keep = crosses(ya, yb, lat)
    seg, y, lat = seg[keep], y[keep], lat[keep]
    xw = crossing_lon(x1[seg], y1[seg], x2[seg], y2[seg], lat)
    x = first_column_at_or_after(geo, xw)
    p = pid[seg]
    order = np.lexsort((x, y, p))
    p, y, x = p[order], y[order], x[order]
    if len(p):
        newgroup = np.empty(len(p), dtype=bool)
        newgroup[0] = True
        newgroup[1:] = (p[1:] != p[:-1]) | (y[1:] != y[:-1])
        gstart = np.flatnonzero(newgroup)
        sizes = np.diff(np.append(gstart, len(p)))
        odd = np.flatnonzero(sizes % 2)
        if len(odd):
            k = gstart[odd[0]]
            raise MalformedPolygonError(int(p[k]), int(y[k]))
    return Crossings(p, y, x)


def compute_crossings(chunk: VectorChunk, meta: RasterMetadata) -> Crossings:
    """All crossings between the chunk's segments and the raster's scanlines."""
    return _crossings(chunk.polygons, meta)


def pair_runs(cr: Crossings, meta: RasterMetadata) -> tuple[np.ndarray, ...]:
    """Pair consecutive crossings into ``[x_start, x_end)`` runs clipped to the raster."""
    pid, y = cr.pid[0::2], cr.y[0::2]
    xs = np.clip(cr.x[0::2], 0, meta.cols)
    xe = np.clip(cr.x[1::2], 0, meta.cols)
    keep = xs < xe
    return pid[keep], y[keep], xs[keep], xe[keep]


def split_runs(pid, y, xs, xe, meta: RasterMetadata) -> np.ndarray:
    """Cut runs at tile-column boundaries and return unsorted records."""
    wt = meta.tile_w
    tc_lo = xs // wt
    tc_hi = (xe - 1) // wt
    n = tc_hi - tc_lo + 1
    idx = np.repeat(np.arange(len(n)), n)
    starts = np.cumsum(n) - n
    tc = tc_lo[idx] + (np.arange(int(n.sum())) - starts[idx])
    rec = np.empty(len(idx), dtype=RECORD)
    rec["tid"] = (y[idx] // meta.tile_h) * meta.tiles_per_row + tc
    rec["y"] = y[idx]
    rec["pid"] = pid[idx]
    rec["x_start"] = np.maximum(xs[idx], tc * wt)
    rec["x_end"] = np.minimum(xe[idx], (tc + 1) * wt)
    return rec


def sort_key_fields(meta: RasterMetadata) -> tuple[str, ...]:
    """Record sort key, most significant first."""
    if meta.order == "column":
        return ("tid", "x_start", "pid", "y")
    return ("tid", "y", "pid", "x_start")


def sort_records(rec: np.ndarray, meta: RasterMetadata) -> np.ndarray:
    keys = [rec[f] for f in reversed(sort_key_fields(meta))]
    return rec[np.lexsort(keys)]


def chunk_records(chunk: VectorChunk, meta: RasterMetadata) -> np.ndarray:
    """Sorted records for a whole chunk, computed in memory."""
    cr = compute_crossings(chunk, meta)
    return sort_records(split_runs(*pair_runs(cr, meta), meta), meta)


# -- writing ---------------------------------------------------------------

@dataclass(frozen=True)
class Footer:
    chunk_id: int
    pids: np.ndarray
    tids: np.ndarray
    offsets: np.ndarray

    def __len__(self):
        return len(self.tids)


def _write_file(path: Path, chunk_id: int, blocks: Iterable[np.ndarray], compress: bool) -> tuple[int, Footer]:
    """Stream sorted record blocks to ``path``; returns (record count, footer)."""
    tids, offsets = [], []
    pids = set()
    count = 0
    offset = 0
    pending = None  # records of the tile still being accumulated (compressed mode)
    with open(path, "wb") as f:
        def flush_tile(block):
            nonlocal offset
            data = zlib.compress(block.tobytes(), 6)
            f.write(data)
            offset += len(data)

        for block in blocks:
            if not len(block):
                continue
            count += len(block)
            pids.update(np.unique(block["pid"]).tolist())
            tid = block["tid"]
            change = np.flatnonzero(np.diff(tid.astype(np.int64))) + 1
            heads = np.concatenate([[0], change])
            for k, h in enumerate(heads):
                end = heads[k + 1] if k + 1 < len(heads) else len(block)
                t = int(tid[h])
                part = block[h:end]
                if tids and tids[-1] == t:
                    if compress:
                        pending = np.concatenate([pending, part])
                    else:
                        f.write(part.tobytes())
                        offset += part.nbytes
                    continue
                if compress and pending is not None:
                    flush_tile(pending)
                tids.append(t)
                offsets.append(offset)
                if compress:
                    pending = part.copy()
                else:
                    f.write(part.tobytes())
                    offset += part.nbytes
        if compress and pending is not None:
            flush_tile(pending)
        footer_offset = offset
        pid_arr = np.array(sorted(pids), dtype="<u4")
        entries = np.empty(len(tids), dtype=TILE_ENTRY)
        entries["tid"] = tids
        entries["offset"] = offsets
        f.write(struct.pack("<II", chunk_id, len(pid_arr)))
        f.write(pid_arr.tobytes())
        f.write(struct.pack("<I", len(entries)))
        f.write(entries.tobytes())
        f.write(TRAILER.pack(footer_offset, MAGIC_DEFLATE if compress else MAGIC))
    footer = Footer(chunk_id, pid_arr, entries["tid"].copy(), entries["offset"].copy())
    return count, footer


def _merge_runs(run_paths: list[Path], meta: RasterMetadata, block: int = 65536) -> Iterator[np.ndarray]:
    fields = sort_key_fields(meta)
    runs = [np.memmap(p, dtype=RECORD, mode="r") for p in run_paths]

    def keyed(run):
        for r in run:
            yield tuple(int(r[f]) for f in fields), r

    buf = []
    for _, r in heapq.merge(*(keyed(r) for r in runs), key=lambda kv: kv[0]):
        buf.append(r)
        if len(buf) == block:
            yield np.array(buf, dtype=RECORD)
            buf = []
    if buf:
        yield np.array(buf, dtype=RECORD)
    del runs


def _polygon_batches(polygons, target=None):
    target = target or _BATCH_SEGMENTS
    batch, nseg = [], 0
    for p in polygons:
        batch.append(p)
        nseg += p.num_segments
        if nseg >= target:
            yield batch
            batch, nseg = [], 0
    if batch:
        yield batch


@dataclass(frozen=True)
class BuildResult:
    path: Path
    chunk_id: int
    records: int
    footer: Footer
    spilled_runs: int


def build_intersection_file(chunk: VectorChunk, meta: RasterMetadata, path, compress: bool = False,
                            memory_budget: int = DEFAULT_MEMORY_BUDGET) -> BuildResult:
    """Compute, sort and write the intersection file of one chunk.

    When more than ``memory_budget`` records are buffered, sorted runs are
    spilled to temporary files and merged at the end.
    """
    path = Path(path)
    held, held_n = [], 0
    runs: list[Path] = []
    tmpdir = None
    try:
        for batch in _polygon_batches(chunk.polygons):
            rec = split_runs(*pair_runs(_crossings(batch, meta), meta), meta)
            held.append(rec)
            held_n += len(rec)
            if held_n > memory_budget:
                if tmpdir is None:
                    tmpdir = tempfile.TemporaryDirectory(prefix="rif-spill-", dir=path.parent)
                run = Path(tmpdir.name) / f"run{len(runs):04d}.bin"
                sort_records(np.concatenate(held), meta).tofile(run)
                runs.append(run)
                held, held_n = [], 0
        rest = sort_records(np.concatenate(held), meta) if held else np.empty(0, dtype=RECORD)
        if runs:
            if len(rest):
                run = Path(tmpdir.name) / f"run{len(runs):04d}.bin"
                rest.tofile(run)
                runs.append(run)
            blocks = _merge_runs(runs, meta)
        else:
            blocks = [rest]
        count, footer = _write_file(path, chunk.chunk_id, blocks, compress)
    finally:
        if tmpdir is not None:
            tmpdir.cleanup()
    return BuildResult(path, chunk.chunk_id, count, footer, len(runs))


def build_intersection_files(chunks, meta: RasterMetadata, out_dir, compress: bool = False, workers: int = 1,
                             memory_budget: int = DEFAULT_MEMORY_BUDGET) -> list[BuildResult]:
    """One intersection file per chunk, built by independent workers."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(chunk):
        return build_intersection_file(chunk, meta, out_dir / f"chunk-{chunk.chunk_id:06d}.rif",
                                       compress=compress, memory_budget=memory_budget)

    if workers <= 1:
        return [one(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, chunks))


# -- reading ---------------------------------------------------------------

class IntersectionFile:
    """Read-only access to an intersection file with byte-level IO accounting."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.bytes_read = 0
        self._fd = os.open(self.path, os.O_RDONLY)
        try:
            self.size = os.fstat(self._fd).st_size
            self.footer_offset, self.compressed = self._read_trailer()
            self.footer = self._read_footer()
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

    def _pread(self, n: int, offset: int) -> bytes:
        data = os.pread(self._fd, n, offset)
        with self._lock:
            self.bytes_read += len(data)
        if len(data) != n:
            raise IntersectionFormatError(f"{self.path}: short read at offset {offset}")
        return data

    def _read_trailer(self):
        if self.size < TRAILER.size:
            raise IntersectionFormatError(f"{self.path}: file too small for trailer")
        footer_offset, magic = TRAILER.unpack(self._pread(TRAILER.size, self.size - TRAILER.size))
        if magic not in (MAGIC, MAGIC_DEFLATE):
            raise IntersectionFormatError(f"{self.path}: bad magic {magic!r}")
        if footer_offset > self.size - TRAILER.size:
            raise IntersectionFormatError(f"{self.path}: footer offset past end of file")
        return footer_offset, magic == MAGIC_DEFLATE

    def _read_footer(self) -> Footer:
        n = self.size - TRAILER.size - self.footer_offset
        buf = self._pread(n, self.footer_offset)
        try:
            chunk_id, npids = struct.unpack_from("<II", buf, 0)
            pos = 8
            pids = np.frombuffer(buf, dtype="<u4", count=npids, offset=pos)
            pos += 4 * npids
            (ntiles,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            entries = np.frombuffer(buf, dtype=TILE_ENTRY, count=ntiles, offset=pos)
            pos += entries.nbytes
        except (struct.error, ValueError):
            raise IntersectionFormatError(f"{self.path}: corrupt footer") from None
        if pos != n:
            raise IntersectionFormatError(f"{self.path}: footer length mismatch")
        tids = entries["tid"].copy()
        offs = entries["offset"].copy()
        if len(tids) and (np.any(np.diff(tids.astype(np.int64)) <= 0) or np.any(offs > self.footer_offset)):
            raise IntersectionFormatError(f"{self.path}: footer tile index is not ascending")
        return Footer(int(chunk_id), pids.copy(), tids, offs)

    def tile_byte_range(self, tid: int) -> tuple[int, int] | None:
        k = int(np.searchsorted(self.footer.tids, tid))
        if k == len(self.footer.tids) or self.footer.tids[k] != tid:
            return None
        start = int(self.footer.offsets[k])
        end = int(self.footer.offsets[k + 1]) if k + 1 < len(self.footer.tids) else self.footer_offset
        return start, end

    def records_for_tile(self, tid: int) -> np.ndarray:
        """Records of one tile in sort order; empty when the tile is absent."""
        rng = self.tile_byte_range(tid)
        if rng is None:
            return np.empty(0, dtype=RECORD)
        start, end = rng
        blob = self._pread(end - start, start)
        if self.compressed:
            try:
                blob = zlib.decompress(blob)
            except zlib.error as exc:
                raise IntersectionFormatError(f"{self.path}: tile {tid}: {exc}") from None
        if len(blob) % RECORD.itemsize:
            raise IntersectionFormatError(f"{self.path}: tile {tid}: partial record")
        return np.frombuffer(blob, dtype=RECORD)

    def records(self) -> np.ndarray:
        parts = [self.records_for_tile(int(t)) for t in self.footer.tids]
        return np.concatenate(parts) if parts else np.empty(0, dtype=RECORD)


def read_footer(path) -> Footer:
    with IntersectionFile(path) as f:
        return f.footer


def read_records_for_tile(f: IntersectionFile, tid: int) -> Iterator[np.void]:
    yield from f.records_for_tile(tid)
