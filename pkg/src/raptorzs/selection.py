"""Selection step: split generation from footers and per-split pixel extraction."""

from __future__ import annotations

import bisect
import queue
import threading
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .aggregation import PartialTable
from .errors import CorruptionError, IntersectionFormatError
from .intersection import Footer, IntersectionFile
from .raster import RasterFile

DEFAULT_SPLIT_SIZE = 64


class RaptorObject(NamedTuple):
    chunk_id: int
    tid: int


class PixelPair(NamedTuple):
    pid: int
    m: float


@dataclass(frozen=True)
class RaptorSplit:
    """One map task: a chunk paired with a run of its present tile ids."""

    chunk_id: int
    raster_file_id: int
    tids: tuple[int, ...]

    @property
    def tid_lo(self) -> int:
        return self.tids[0]

    @property
    def tid_hi(self) -> int:
        return self.tids[-1]

    @property
    def workload(self) -> int:
        return len(self.tids)

    def objects(self) -> Iterator[RaptorObject]:
        for tid in self.tids:
            yield RaptorObject(self.chunk_id, tid)


def generate_splits(footers: Sequence[Footer], split_size: int = DEFAULT_SPLIT_SIZE,
                    file_tile_counts: Sequence[int] | None = None, bridge_gaps: bool = False) -> list[RaptorSplit]:
    """Group each chunk's present tiles into splits of at most ``split_size``.

    ``file_tile_counts`` describes a raster layer stored as consecutive tid
    ranges across several files; a split never crosses a file.  Splits break
    at tid gaps unless ``bridge_gaps`` is set.  Tiles absent from every
    footer never appear.
    """
    if split_size < 1:
        raise ValueError("split_size must be >= 1")
    bounds = np.cumsum(file_tile_counts).tolist() if file_tile_counts else None
    splits = []
    for footer in footers:
        if footer is None:
            raise IntersectionFormatError("unreadable footer")
        cur: list[int] = []
        cur_file = None
        for tid in footer.tids.tolist():
            fid = 0
            if bounds is not None:
                fid = bisect.bisect_right(bounds, tid)
                if fid >= len(bounds):
                    raise ValueError(f"tile {tid} beyond the last raster file")
            gap = bool(cur) and tid != cur[-1] + 1 and not bridge_gaps
            if cur and (fid != cur_file or len(cur) == split_size or gap):
                splits.append(RaptorSplit(footer.chunk_id, cur_file, tuple(cur)))
                cur = []
            cur_file = fid
            cur.append(tid)
        if cur:
            splits.append(RaptorSplit(footer.chunk_id, cur_file, tuple(cur)))
    return splits


def tile_pairs(raster: RasterFile, tid: int, tile: np.ndarray, records: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(pids, values)`` for every pixel covered by ``records`` inside one tile."""
    meta = raster.metadata
    x0, y0 = meta.tile_origin(tid)
    h, w = tile.shape
    y = records["y"].astype(np.int64) - y0
    xs = records["x_start"].astype(np.int64) - x0
    xe = records["x_end"].astype(np.int64) - x0
    bad = (records["tid"] != tid) | (y < 0) | (y >= h) | (xs < 0) | (xe > w) | (xs >= xe)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise CorruptionError(f"record {records[k]} lies outside tile {tid}")
    lengths = xe - xs
    idx = np.repeat(np.arange(len(records)), lengths)
    starts = np.cumsum(lengths) - lengths
    cols = xs[idx] + (np.arange(int(lengths.sum())) - starts[idx])
    return records["pid"][idx].astype(np.int64), tile[y[idx], cols]


def process_split(split: RaptorSplit, raster: RasterFile, ifile: IntersectionFile) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Stream ``(pids, values)`` batches, one per tile; each tile is loaded once."""
    if ifile.footer.chunk_id != split.chunk_id:
        raise ValueError(f"split for chunk {split.chunk_id} given file of chunk {ifile.footer.chunk_id}")
    for tid in split.tids:
        recs = ifile.records_for_tile(tid)
        if not len(recs):
            continue
        tile = raster.read_tile(tid)
        yield tile_pairs(raster, tid, tile, recs)


def iter_pixel_pairs(split: RaptorSplit, raster: RasterFile, ifile: IntersectionFile) -> Iterator[PixelPair]:
    for pids, values in process_split(split, raster, ifile):
        for pid, m in zip(pids.tolist(), values.tolist()):
            yield PixelPair(pid, m)


def run_splits(splits: Sequence[RaptorSplit], rasters: Sequence[RasterFile], ifiles: dict[int, IntersectionFile],
               workers: int, table_factory) -> list[PartialTable]:
    """Drain ``splits`` with a fixed pool of threads; one partial table per worker."""
    tasks: queue.Queue = queue.Queue()
    for s in splits:
        tasks.put(s)
    workers = max(1, int(workers))
    tables = [table_factory() for _ in range(workers)]
    errors: list[BaseException] = []

    def work(table: PartialTable):
        while not errors:
            try:
                split = tasks.get_nowait()
            except queue.Empty:
                return
            try:
                raster = rasters[split.raster_file_id]
                for pids, values in process_split(split, raster, ifiles[split.chunk_id]):
                    table.add_pairs(pids, values)
            except BaseException as exc:
                errors.append(exc)
                return

    if workers == 1:
        work(tables[0])
    else:
        threads = [threading.Thread(target=work, args=(t,), daemon=True) for t in tables]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if errors:
        raise errors[0]
    return tables
