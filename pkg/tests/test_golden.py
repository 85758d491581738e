"""Byte-level format checks against committed golden files.

Decoding here uses ``struct`` directly and hand-derived expectations, not
the package readers.
"""

import struct

import pytest

from raptorzs.intersection import IntersectionFile
from raptorzs.raster import RasterFile

from golden_fixtures import GOLDEN_DIR, build

NAMES = ["gradient_4x4.rtil", "ragged_5x5_col_f64.rtil", "unit_square.rif", "two_tiles.rif"]


@pytest.fixture(scope="module")
def fresh(tmp_path_factory):
    return build(tmp_path_factory.mktemp("golden"))


@pytest.mark.parametrize("name", NAMES)
def test_byte_identical(fresh, name):
    assert fresh[name].read_bytes() == (GOLDEN_DIR / name).read_bytes()


def decode_rtil(data):
    hdr = struct.unpack_from("<4sHQQIIBBBddd", data, 0)
    magic, version, c, r, wt, ht, order, vtype, comp, lon0, lat0, p = hdr
    n = -(-c // wt) * -(-r // ht)
    table = [struct.unpack_from("<QQ", data, 57 + 16 * i) for i in range(n)]
    return dict(magic=magic, version=version, c=c, r=r, wt=wt, ht=ht, order=order, vtype=vtype, comp=comp,
                lon0=lon0, lat0=lat0, p=p), table


def test_gradient_rtil_layout():
    data = (GOLDEN_DIR / "gradient_4x4.rtil").read_bytes()
    hdr, table = decode_rtil(data)
    assert hdr == dict(magic=b"RTIL", version=1, c=4, r=4, wt=2, ht=2, order=0, vtype=0, comp=0,
                       lon0=0.0, lat0=4.0, p=1.0)
    assert table == [(121, 16), (137, 16), (153, 16), (169, 16)]
    assert len(data) == 185
    tiles = [struct.unpack_from("<4i", data, off) for off, _ in table]
    # value = x + y, each tile row-major
    assert tiles == [(0, 1, 1, 2), (2, 3, 3, 4), (2, 3, 3, 4), (4, 5, 5, 6)]


def test_ragged_column_major_rtil_layout():
    data = (GOLDEN_DIR / "ragged_5x5_col_f64.rtil").read_bytes()
    hdr, table = decode_rtil(data)
    assert (hdr["order"], hdr["vtype"], hdr["c"], hdr["r"]) == (1, 1, 5, 5)
    assert [ln for _, ln in table] == [32, 32, 16, 32, 32, 16, 16, 16, 8]
    # tile 2 holds column x=4, rows 0..1: values 2.0, 1.0
    off, ln = table[2]
    assert struct.unpack_from("<2d", data, off) == (2.0, 1.0)
    # tile 1 is 2x2 at x=2..3, stored column by column: (x2,y0) (x2,y1) (x3,y0) (x3,y1)
    off, _ = table[1]
    assert struct.unpack_from("<4d", data, off) == (1.0, 0.0, 1.5, 0.5)


def decode_rif(data):
    footer_offset, magic = struct.unpack_from("<Q4s", data, len(data) - 12)
    records = [struct.unpack_from("<5I", data, k) for k in range(0, footer_offset, 20)]
    chunk_id, npids = struct.unpack_from("<II", data, footer_offset)
    pos = footer_offset + 8
    pids = list(struct.unpack_from(f"<{npids}I", data, pos))
    pos += 4 * npids
    (ntiles,) = struct.unpack_from("<I", data, pos)
    pos += 4
    index = [struct.unpack_from("<IQ", data, pos + 12 * i) for i in range(ntiles)]
    assert pos + 12 * ntiles == len(data) - 12
    return magic, records, chunk_id, pids, index


def test_unit_square_rif_layout():
    magic, records, chunk_id, pids, index = decode_rif((GOLDEN_DIR / "unit_square.rif").read_bytes())
    assert magic == b"RIF1"
    assert records == [(2, 2, 42, 0, 2), (2, 3, 42, 0, 2)]
    assert (chunk_id, pids, index) == (0, [42], [(2, 0)])


def test_two_tile_rif_layout():
    magic, records, chunk_id, pids, index = decode_rif((GOLDEN_DIR / "two_tiles.rif").read_bytes())
    assert records == [(3, 0, 1, 6, 7), (7, 3, 2, 6, 7), (12, 6, 3, 0, 1), (12, 7, 3, 0, 2)]
    assert pids == [1, 2, 3]
    assert index == [(3, 0), (7, 20), (12, 40)]


def test_package_readers_agree_with_struct_decoding():
    with RasterFile(GOLDEN_DIR / "gradient_4x4.rtil") as rf:
        assert rf.read_all().tolist() == [[0, 1, 2, 3], [1, 2, 3, 4], [2, 3, 4, 5], [3, 4, 5, 6]]
    _, records, *_ = decode_rif((GOLDEN_DIR / "two_tiles.rif").read_bytes())
    with IntersectionFile(GOLDEN_DIR / "two_tiles.rif") as f:
        assert [tuple(int(v) for v in r) for r in f.records()] == records


def test_tile_read_touches_only_its_range():
    with IntersectionFile(GOLDEN_DIR / "two_tiles.rif") as f:
        after_open = f.bytes_read
        assert after_open == 152 - 80  # trailer plus footer, no records
        recs = f.records_for_tile(12)
        assert f.bytes_read - after_open == 40 == recs.nbytes
        assert f.tile_byte_range(12) == (40, 80)
        f.records_for_tile(5)
        assert f.bytes_read - after_open == 40
