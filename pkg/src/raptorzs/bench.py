"""Scaled benchmark series comparing cost estimates with measured runs."""

from __future__ import annotations

import csv
import gc
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .baselines import run_baseline
from .costmodel import CostParams, correlate, total_cost
from .geom import AffineGeo
from .pipeline import run_rzs
from .raster import RasterFile, RasterMetadata, gen_raster
from .vector import DEFAULT_CHUNK_SIZE, gen_vector, partition

BENCH_METHODS = ("rzs", "rda", "vda", "scanline")
_COST_METHOD = {"rzs": "rzs", "rda": "rda", "vda": "vda", "scanline": "rzs"}


class ConfigError(ValueError):
    pass


@dataclass
class SeriesConfig:
    raster: dict
    ns: list[int]
    ns_bar: int = 10
    polygon_size: tuple[float, float] | None = None
    shape: str = "star"
    clusters: int = 0
    cluster_spread: float = 0.02
    seed: int = 0
    methods: list[str] = field(default_factory=lambda: ["rzs", "rda"])
    chunk_size: int = DEFAULT_CHUNK_SIZE
    split_size: int = 64
    workers: int = 1
    repeats: int = 1

    def __post_init__(self):
        if len(self.ns) < 3:
            raise ConfigError(f"need >= 3 points in the series, got {len(self.ns)}")
        bad = set(self.methods) - set(BENCH_METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}")

    def raster_metadata(self) -> RasterMetadata:
        r = self.raster
        lon0, lat0 = r.get("origin", (0.0, r["rows"] * r["pixel_size"]))
        return RasterMetadata(r["cols"], r["rows"], r.get("tile_w", 128), r.get("tile_h", 128),
                              AffineGeo(float(lon0), float(lat0), float(r["pixel_size"])),
                              value_type=r.get("value_type", "int32"))


def load_config(path) -> SeriesConfig:
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        series = dict(doc["series"])
        raster = dict(doc["raster"])
    except KeyError as exc:
        raise ConfigError(f"{path}: missing [{exc.args[0]}] table") from None
    run = dict(doc.get("run", {}))
    if "polygon_size" in series:
        series["polygon_size"] = tuple(series["polygon_size"])
    try:
        return SeriesConfig(raster=raster, **series, **run)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass
class BenchResult:
    rows: list[dict]
    correlations: dict[str, dict[str, float]]

    def write_csv(self, path) -> Path:
        path = Path(path)
        cols = ["method", "point", "np", "ns", "estimate", "wall_time", "tile_loads"]
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows)
        return path

    def format_table(self) -> str:
        lines = [f"{'method':<9}{'ns':>10}{'estimate':>16}{'wall_s':>10}{'tiles':>10}"]
        for r in self.rows:
            lines.append(f"{r['method']:<9}{r['ns']:>10}{r['estimate']:>16.4g}{r['wall_time']:>10.3f}{r['tile_loads']:>10}")
        lines.append("")
        for m, c in self.correlations.items():
            parts = [f"{k}={_fmt_rho(v)}" for k, v in c.items()]
            lines.append(f"spearman {m}: " + " ".join(parts))
        return "\n".join(lines)


def _fmt_rho(v: float) -> str:
    return "undefined" if math.isnan(v) else f"{v:.3f}"


def timed(fn, *args, **kw):
    """``(result, seconds)`` of one call, with the cyclic collector paused as timeit does."""
    gc.collect()
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        return out, time.perf_counter() - t0
    finally:
        if was_enabled:
            gc.enable()


def _run_method(method, ds, raster_path, cfg):
    if method == "rzs":
        return run_rzs(ds, raster_path, cfg.chunk_size, True, cfg.split_size, cfg.workers)[1]
    with RasterFile(raster_path) as raster:
        return run_baseline(method, raster, ds.polygons)[1]


def series_dataset(cfg: SeriesConfig, meta: RasterMetadata, point: int):
    ns = cfg.ns[point]
    n_polys = max(1, round(ns / cfg.ns_bar))
    ext = meta.extent
    size = cfg.polygon_size or (ext.width / 100, ext.height / 100)
    return gen_vector(n_polys, cfg.ns_bar, ext, size, shape=cfg.shape, clusters=cfg.clusters,
                      cluster_spread=cfg.cluster_spread, seed=cfg.seed + point)


def run_series(cfg: SeriesConfig, work_dir, raster_path=None, figure: bool = True) -> BenchResult:
    """Generate the raster (unless given) and each vector point, run every method, correlate."""
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    meta = cfg.raster_metadata()
    if raster_path is None:
        raster_path = gen_raster(work_dir / "bench.rtil", meta, cfg.raster.get("pattern", "random"),
                                 seed=cfg.raster.get("seed", 0))
    rows = []
    for point in range(len(cfg.ns)):
        ds = series_dataset(cfg, meta, point)
        chunks = partition(ds, cfg.chunk_size, spatial=True)
        cp = CostParams.from_data(meta, ds.stats, chunks, C=cfg.chunk_size)
        for method in cfg.methods:
            best, loads = math.inf, 0
            for _ in range(cfg.repeats):
                rep, elapsed = timed(_run_method, method, ds, raster_path, cfg)
                best = min(best, elapsed)
                loads = rep.tile_loads
            rows.append(dict(method=method, point=point, np=ds.stats.np, ns=ds.stats.ns,
                             estimate=total_cost(_COST_METHOD[method], cp), wall_time=best, tile_loads=loads))
    correlations = {}
    for method in cfg.methods:
        rs = [r for r in rows if r["method"] == method]
        est = [r["estimate"] for r in rs]
        correlations[method] = {
            "wall_time": correlate(est, [r["wall_time"] for r in rs]),
            "tile_loads": correlate(est, [r["tile_loads"] for r in rs]),
        }
    result = BenchResult(rows, correlations)
    result.write_csv(work_dir / "bench.csv")
    if figure:
        from .plotting import plot_cost_series

        plot_cost_series(rows, work_dir / "bench.png")
    return result
