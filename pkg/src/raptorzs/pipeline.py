"""End-to-end zonal statistics: partition, intersect, select, aggregate."""

from __future__ import annotations

import os
import tempfile
import time
from contextlib import ExitStack
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .aggregation import Accumulator, PartialTable, ZonalResult, finalize
from .intersection import DEFAULT_MEMORY_BUDGET, IntersectionFile, build_intersection_files
from .raster import RasterFile, TileCounter
from .selection import DEFAULT_SPLIT_SIZE, generate_splits, run_splits
from .vector import DEFAULT_CHUNK_SIZE, VectorDataset, partition


@dataclass
class RunReport:
    method: str = "rzs"
    wall_time: dict = field(default_factory=dict)
    tile_loads: int = 0
    tile_loads_by_step: dict = field(default_factory=dict)
    tile_bytes_read: int = 0
    records_written: int = 0
    chunks: int = 0
    splits: int = 0
    workers: int = 1
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def total_time(self) -> float:
        return sum(self.wall_time.values())


def default_workers() -> int:
    return os.cpu_count() or 1


def run_rzs(vector: VectorDataset, raster_path, chunk_size: int = DEFAULT_CHUNK_SIZE, spatial: bool = True,
            split_size: int = DEFAULT_SPLIT_SIZE, workers: int = 1, compress: bool = False,
            histogram: bool = False, bin_width: float | None = None, work_dir=None,
            memory_budget: int = DEFAULT_MEMORY_BUDGET, counter: TileCounter | None = None
            ) -> tuple[ZonalResult, RunReport]:
    """Run the three-step join and return the final result with its report.

    Intersection files go to ``work_dir`` (a temporary directory when None).
    """
    report = RunReport(workers=workers, config=dict(
        chunk_size=chunk_size, spatial=spatial, split_size=split_size, compress=compress,
        histogram=histogram, bin_width=bin_width))
    counter = counter or TileCounter()
    before = counter.loads, counter.bytes_read
    with ExitStack() as stack:
        if work_dir is None:
            work_dir = stack.enter_context(tempfile.TemporaryDirectory(prefix="rzs-"))
        raster = stack.enter_context(RasterFile(raster_path, counter=counter))
        meta = raster.metadata
        kind = "int" if meta.value_type == "int32" else "float"

        t0 = time.perf_counter()
        chunks = partition(vector, chunk_size, spatial)
        built = build_intersection_files(chunks, meta, work_dir, compress=compress, workers=workers,
                                         memory_budget=memory_budget)
        t1 = time.perf_counter()
        intersect_loads = counter.loads - before[0]
        ifiles = {b.chunk_id: stack.enter_context(IntersectionFile(b.path)) for b in built}
        splits = generate_splits([f.footer for f in ifiles.values()], split_size)
        tables = run_splits(splits, [raster], ifiles, workers, lambda: PartialTable(kind, histogram, bin_width))
        t2 = time.perf_counter()
        result = finalize(tables, vector.pids, Accumulator(kind, histogram, bin_width))
        t3 = time.perf_counter()

    report.wall_time = {"intersect": t1 - t0, "select": t2 - t1, "aggregate": t3 - t2}
    report.tile_loads = counter.loads - before[0]
    report.tile_loads_by_step = {"intersect": intersect_loads, "select": report.tile_loads - intersect_loads}
    report.tile_bytes_read = counter.bytes_read - before[1]
    report.records_written = sum(b.records for b in built)
    report.chunks = len(chunks)
    report.splits = len(splits)
    return result, report
