import numpy as np
import pytest

from raptorzs.aggregation import PartialTable, finalize
from raptorzs.errors import CorruptionError, IntersectionFormatError
from raptorzs.geom import AffineGeo
from raptorzs.intersection import RECORD, Footer, IntersectionFile, build_intersection_file, build_intersection_files
from raptorzs.pipeline import run_rzs
from raptorzs.raster import RasterFile, RasterMetadata, TileCounter, gen_raster
from raptorzs.selection import RaptorSplit, generate_splits, iter_pixel_pairs, process_split, run_splits, tile_pairs
from raptorzs.vector import VectorDataset, gen_vector, partition

from conftest import square


def footer(tids, chunk_id=0):
    return Footer(chunk_id, np.array([], "<u4"), np.array(tids, "<u4"), np.zeros(len(tids), "<u8"))


def test_split_grouping_example():
    splits = generate_splits([footer([0, 1, 2, 9])], split_size=2)
    assert [s.tids for s in splits] == [(0, 1), (2,), (9,)]
    assert [(s.tid_lo, s.tid_hi) for s in splits] == [(0, 1), (2, 2), (9, 9)]
    assert sum(s.workload for s in splits) == 4


def test_bridged_gaps():
    splits = generate_splits([footer([0, 1, 2, 9])], split_size=2, bridge_gaps=True)
    assert [s.tids for s in splits] == [(0, 1), (2, 9)]


def test_splits_never_mix_chunks():
    splits = generate_splits([footer([0, 1], 0), footer([2, 3], 1)], split_size=64)
    assert [(s.chunk_id, s.tids) for s in splits] == [(0, (0, 1)), (1, (2, 3))]


def test_empty_footer_has_no_splits():
    assert generate_splits([footer([])]) == []


def test_split_respects_file_boundaries():
    splits = generate_splits([footer([2, 3, 4, 5])], split_size=64, file_tile_counts=[4, 4])
    assert [(s.raster_file_id, s.tids) for s in splits] == [(0, (2, 3)), (1, (4, 5))]
    with pytest.raises(ValueError, match="beyond"):
        generate_splits([footer([9])], file_tile_counts=[4, 4])


def test_split_errors():
    with pytest.raises(IntersectionFormatError, match="unreadable"):
        generate_splits([None])
    with pytest.raises(ValueError):
        generate_splits([footer([0])], split_size=0)


def test_objects():
    s = RaptorSplit(3, 0, (4, 5))
    assert [(o.chunk_id, o.tid) for o in s.objects()] == [(3, 4), (3, 5)]


def test_constant_seven_run(tmp_path):
    meta = RasterMetadata(8, 8, 8, 8, AffineGeo(0.0, 8.0, 1.0))
    path = gen_raster(tmp_path / "c.rtil", meta, "constant", value=7)
    poly = square(42, 0, 4.2, 3, 4.8)  # one row, columns [0, 3)
    res = build_intersection_file(partition(VectorDataset([poly]), 10)[0], meta, tmp_path / "c.rif")
    with RasterFile(path) as rf, IntersectionFile(res.path) as f:
        (split,) = generate_splits([f.footer])
        assert list(iter_pixel_pairs(split, rf, f)) == [(42, 7)] * 3


def test_unit_square_pairs(unit_case, tmp_path):
    meta, path, ds = unit_case
    res = build_intersection_file(partition(ds, 10)[0], meta, tmp_path / "u.rif")
    with RasterFile(path) as rf, IntersectionFile(res.path) as f:
        pairs = [p for s in generate_splits([f.footer]) for p in iter_pixel_pairs(s, rf, f)]
        assert rf.counter.loads == 1
    assert sorted(m for _, m in pairs) == [2, 3, 3, 4]
    assert {pid for pid, _ in pairs} == {42}


def test_no_pairs_for_polygon_without_records(tmp_path):
    meta = RasterMetadata(8, 8, 8, 8, AffineGeo(0.0, 8.0, 1.0))
    path = gen_raster(tmp_path / "g.rtil", meta, "gradient")
    ds = VectorDataset([square(1, 0, 0, 3, 3), square(2, 5.2, 5.2, 5.4, 5.4)])
    res = build_intersection_file(partition(ds, 10)[0], meta, tmp_path / "g.rif")
    with RasterFile(path) as rf, IntersectionFile(res.path) as f:
        pids = {p for s in generate_splits([f.footer]) for p, _ in iter_pixel_pairs(s, rf, f)}
    assert pids == {1}


def test_out_of_tile_record_is_corruption(tmp_path):
    meta = RasterMetadata(8, 8, 4, 4, AffineGeo(0.0, 8.0, 1.0))
    path = gen_raster(tmp_path / "g.rtil", meta, "gradient")
    rec = np.zeros(1, RECORD)
    rec[0] = (0, 1, 5, 2, 6)
    with RasterFile(path) as rf:
        with pytest.raises(CorruptionError, match="outside tile 0"):
            tile_pairs(rf, 0, rf.read_tile(0), rec)


def test_split_chunk_mismatch(tmp_path, unit_case):
    meta, path, ds = unit_case
    res = build_intersection_file(partition(ds, 10)[0], meta, tmp_path / "u.rif")
    with RasterFile(path) as rf, IntersectionFile(res.path) as f:
        with pytest.raises(ValueError, match="chunk"):
            list(process_split(RaptorSplit(5, 0, (0,)), rf, f))


@pytest.mark.parametrize("workers", [1, 2, 8])
def test_each_tile_loaded_once_per_footer_entry(tmp_path, workers):
    meta = RasterMetadata(300, 200, 32, 32, AffineGeo(0.0, 200.0, 1.0))
    path = gen_raster(tmp_path / "r.rtil", meta, "random", seed=5)
    ds = gen_vector(150, 8, meta.extent, (12, 12), seed=9)
    chunks = partition(ds, 40)
    built = build_intersection_files(chunks, meta, tmp_path / "rif")
    counter = TileCounter()
    files = {b.chunk_id: IntersectionFile(b.path) for b in built}
    try:
        with RasterFile(path, counter) as rf:
            splits = generate_splits([f.footer for f in files.values()], 3)
            tables = run_splits(splits, [rf], files, workers, PartialTable)
    finally:
        for f in files.values():
            f.close()
    assert counter.loads == sum(len(b.footer) for b in built)
    per_chunk = {}
    for b in built:
        for t in b.footer.tids.tolist():
            per_chunk[t] = per_chunk.get(t, 0) + 1
    assert dict(counter.per_tile) == per_chunk
    assert len(tables) == workers
    ref, _ = run_rzs(ds, path, chunk_size=40, workers=1)
    assert finalize(tables, ds.pids) == ref


def test_worker_errors_propagate(tmp_path, unit_case):
    meta, path, ds = unit_case
    res = build_intersection_file(partition(ds, 10)[0], meta, tmp_path / "u.rif")
    with RasterFile(path) as rf, IntersectionFile(res.path) as f:
        bad = [RaptorSplit(0, 0, (0,)), RaptorSplit(0, 3, (0,))]
        with pytest.raises(IndexError):
            run_splits(bad, [rf], {0: f}, 2, PartialTable)
