"""Fixed fixtures behind the committed golden files.

Run ``python3 tests/golden_fixtures.py`` to regenerate ``tests/golden/``
after an intentional format change.
"""

from pathlib import Path

import numpy as np

from raptorzs.geom import AffineGeo, Polygon
from raptorzs.intersection import build_intersection_file
from raptorzs.raster import RasterMetadata, iter_tiles_from_array, write_raster
from raptorzs.vector import VectorDataset, partition

GOLDEN_DIR = Path(__file__).parent / "golden"

GRADIENT_META = RasterMetadata(4, 4, 2, 2, AffineGeo(0.0, 4.0, 1.0))
RAGGED_META = RasterMetadata(5, 5, 2, 2, AffineGeo(-1.0, 2.0, 0.25), order="column", value_type="float64")
TWO_TILE_META = RasterMetadata(8, 8, 2, 2, AffineGeo(0.0, 8.0, 1.0))


def _square(pid, x0, y0, x1, y1):
    return Polygon(pid, [[(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]])


def gradient_values():
    yy, xx = np.mgrid[0:4, 0:4]
    return (xx + yy).astype(np.int32)


def ragged_values():
    yy, xx = np.mgrid[0:5, 0:5]
    return xx * 0.5 - yy


def unit_square_chunk():
    return partition(VectorDataset([_square(42, 0, 0, 2, 2)]), 10)[0]


def two_tile_chunk():
    polys = [_square(1, 6.2, 7.2, 6.8, 7.8), _square(2, 6.2, 4.2, 6.8, 4.8),
             Polygon(3, [[(0, 0), (3, 0), (0, 3), (0, 0)]])]
    return partition(VectorDataset(polys), 10, spatial=False)[0]


def build(out_dir: Path) -> dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    files["gradient_4x4.rtil"] = write_raster(
        out_dir / "gradient_4x4.rtil", GRADIENT_META, iter_tiles_from_array(GRADIENT_META, gradient_values()))
    files["ragged_5x5_col_f64.rtil"] = write_raster(
        out_dir / "ragged_5x5_col_f64.rtil", RAGGED_META, iter_tiles_from_array(RAGGED_META, ragged_values()))
    files["unit_square.rif"] = build_intersection_file(unit_square_chunk(), GRADIENT_META,
                                                       out_dir / "unit_square.rif").path
    files["two_tiles.rif"] = build_intersection_file(two_tile_chunk(), TWO_TILE_META, out_dir / "two_tiles.rif").path
    return files


if __name__ == "__main__":
    for name, path in build(GOLDEN_DIR).items():
        print(f"{name}: {path.stat().st_size} bytes")
