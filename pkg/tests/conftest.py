import numpy as np
import pytest

from raptorzs.geom import AffineGeo, Polygon
from raptorzs.raster import RasterMetadata, iter_tiles_from_array, write_raster
from raptorzs.vector import VectorDataset


def pnpoly(rings, px, py):
    """Franklin's crossing test over all rings; written independently of the package."""
    inside = False
    for ring in rings:
        pts = [tuple(map(float, pt)) for pt in ring]
        n = len(pts)
        j = n - 1
        for i in range(n):
            xi, yi = pts[i]
            xj, yj = pts[j]
            if (yi > py) != (yj > py) and px < (xj - xi) * (py - yi) / (yj - yi) + xi:
                inside = not inside
            j = i
    return inside


def brute_force_pixels(meta, poly):
    """Set of (x, y) whose pixel center is inside ``poly``; plain loops over the whole grid."""
    out = set()
    g = meta.geo
    for y in range(meta.rows):
        lat = g.lat0 - (y + 0.5) * g.p
        if not poly.mbr.min_lat <= lat <= poly.mbr.max_lat:
            continue
        for x in range(meta.cols):
            lon = g.lon0 + (x + 0.5) * g.p
            if poly.mbr.min_lon <= lon <= poly.mbr.max_lon and pnpoly(poly.rings, lon, lat):
                out.add((x, y))
    return out


def brute_force_stats(meta, values, polygons):
    """pid -> (count, min, max, sum) from the pixel-center oracle."""
    out = {}
    for poly in polygons:
        vals = [int(values[y, x]) for x, y in brute_force_pixels(meta, poly)]
        out[poly.pid] = (len(vals), min(vals), max(vals), sum(vals)) if vals else (0, None, None, 0)
    return out


def square(pid, x0, y0, x1, y1):
    return Polygon(pid, [[(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]])


def make_raster(path, meta, values, compress=False):
    write_raster(path, meta, iter_tiles_from_array(meta, values), compress=compress)
    return path


def random_star(rng, pid, cx, cy, radius, nverts):
    ang = np.sort(rng.uniform(0, 2 * np.pi, nverts))
    rad = rng.uniform(0.3, 1.0, nverts) * radius
    ring = np.column_stack([cx + rad * np.cos(ang), cy + rad * np.sin(ang)])
    return Polygon(pid, [np.vstack([ring, ring[:1]])])


def random_instance(seed, max_side=512, max_polys=50):
    """Seeded raster + polygon instance with integer values."""
    rng = np.random.default_rng(seed)
    cols = int(rng.integers(16, max_side + 1))
    rows = int(rng.integers(16, max_side + 1))
    tw = int(rng.integers(16, 65))
    th = int(rng.integers(16, 65))
    p = float(rng.choice([1.0, 0.5, 0.25, 0.01, 0.0037]))
    geo = AffineGeo(float(rng.uniform(-50, 50)), float(rng.uniform(-50, 50)), p)
    meta = RasterMetadata(cols, rows, tw, th, geo)
    values = rng.integers(-1000, 1000, size=(rows, cols), dtype=np.int32)
    npoly = int(rng.integers(1, max_polys + 1))
    polys = []
    for pid in range(npoly):
        cx = geo.lon0 + rng.uniform(-0.1, 1.1) * cols * p
        cy = geo.lat0 - rng.uniform(-0.1, 1.1) * rows * p
        radius = rng.uniform(0.3, 40) * p
        polys.append(random_star(rng, pid * 3 + 1, cx, cy, radius, int(rng.integers(3, 13))))
    return meta, values, VectorDataset(polys)


@pytest.fixture
def unit_case(tmp_path):
    """4x4 gradient raster (value x + y), origin (0, 4), p = 1, 2x2 tiles, square pid 42."""
    meta = RasterMetadata(4, 4, 2, 2, AffineGeo(0.0, 4.0, 1.0))
    yy, xx = np.mgrid[0:4, 0:4]
    path = make_raster(tmp_path / "grad.rtil", meta, (xx + yy).astype(np.int32))
    ds = VectorDataset([square(42, 0, 0, 2, 2)])
    return meta, path, ds


ACCEPTANCE_LINES: list[str] = []


def verdict(number, title, ok, detail):
    """Record and print one acceptance line, then fail the test when ``ok`` is false."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
