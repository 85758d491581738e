"""Command line entry point: ``raptorzs <subcommand> ...``.

Exit codes: 0 on success, 1 on a runtime error, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import RaptorError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
AGGREGATES = ("count", "min", "max", "sum", "mean", "histogram")


class UsageError(Exception):
    pass


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _load_vector(path: str):
    from .errors import VectorParseError
    from .vector import load_vector

    p = _existing(path, "vector file")
    try:
        return load_vector(p)
    except VectorParseError as exc:
        raise VectorParseError(f"{p}: {exc}") from None


def _parse_aggs(text: str) -> list[str]:
    aggs = [a.strip() for a in text.split(",") if a.strip()]
    bad = [a for a in aggs if a not in AGGREGATES]
    if bad or not aggs:
        raise UsageError(f"--agg accepts a comma list of {','.join(AGGREGATES)}; got {text!r}")
    return aggs


def _write_stats(result, path: Path, aggs: list[str], hist_path: Path | None) -> None:
    cols = [c for c in ("count", "min", "max", "sum", "mean") if c in aggs]
    result.write_csv(path)
    if len(cols) < 5:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        keep = [0] + [rows[0].index(c) for c in cols]
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            for row in rows:
                w.writerow([row[i] for i in keep])
    if "histogram" in aggs:
        result.write_histogram_csv(hist_path or path.with_suffix(".hist.csv"))


def _write_report(report, path: Path | None) -> None:
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        path.write_text(text + "\n")


# -- subcommands -----------------------------------------------------------

def cmd_gen_raster(args) -> int:
    from .geom import AffineGeo
    from .raster import RasterMetadata, gen_raster

    meta = RasterMetadata(args.cols, args.rows, args.tile_w, args.tile_h,
                          AffineGeo(args.origin[0], args.origin[1], args.pixel_size),
                          order=args.order, value_type=args.value_type)
    gen_raster(args.out, meta, args.pattern, value=args.value, seed=args.seed, compress=args.compress)
    print(f"wrote {args.out}: {meta.cols}x{meta.rows} px, {meta.num_tiles} tiles")
    return EXIT_OK


def cmd_gen_vector(args) -> int:
    from .geom import MBR
    from .vector import gen_vector, write_wkt_csv

    ds = gen_vector(args.num_polygons, args.ns_bar, MBR(*args.extent), tuple(args.size), shape=args.shape,
                    clusters=args.clusters, cluster_spread=args.spread, seed=args.seed)
    write_wkt_csv(args.out, ds)
    s = ds.stats
    print(f"wrote {args.out}: np={s.np} ns={s.ns} wp={s.wp_bar:.6g} hp={s.hp_bar:.6g}")
    return EXIT_OK


def cmd_partition(args) -> int:
    from .vector import partition

    ds = _load_vector(args.vector)
    chunks = partition(ds, args.chunk_size, args.spatial)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["pid", "chunk_id"])
        for ch in chunks:
            for p in ch.polygons:
                w.writerow([p.pid, ch.chunk_id])
    finally:
        if args.out:
            out.close()
    print(f"{len(ds)} polygons in {len(chunks)} chunks", file=sys.stderr)
    return EXIT_OK


def cmd_intersect(args) -> int:
    from .intersection import build_intersection_files
    from .raster import read_metadata
    from .vector import partition

    ds = _load_vector(args.vector)
    meta = read_metadata(_existing(args.raster_meta, "raster file"))
    chunks = partition(ds, args.chunk_size, args.spatial)
    built = build_intersection_files(chunks, meta, args.out_dir, compress=args.compress, workers=args.workers)
    summary = {
        "chunks": len(built),
        "records": sum(b.records for b in built),
        "files": [{"path": str(b.path), "chunk_id": b.chunk_id, "records": b.records,
                   "tiles": len(b.footer), "pids": len(b.footer.pids)} for b in built],
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_zonal(args) -> int:
    from .pipeline import run_rzs

    aggs = _parse_aggs(args.agg)
    vec = _existing(args.vector, "vector file")
    ras = _existing(args.raster, "raster file")
    ds = _load_vector(args.vector)
    result, report = run_rzs(ds, ras, chunk_size=args.chunk_size, spatial=args.spatial, split_size=args.split_size,
                             workers=args.workers, compress=args.compress, histogram="histogram" in aggs,
                             bin_width=args.bin_width, work_dir=args.work_dir)
    report.config.update(vector=str(vec), raster=str(ras), agg=aggs)
    out = Path(args.stats_out)
    _write_stats(result, out, aggs, Path(args.hist_out) if args.hist_out else None)
    _write_report(report, Path(args.report) if args.report else out.with_suffix(".report.json"))
    return EXIT_OK


def cmd_baseline(args) -> int:
    from .baselines import run_baseline
    from .raster import RasterFile

    aggs = _parse_aggs(args.agg)
    ds = _load_vector(args.vector)
    kw = {}
    if "histogram" in aggs:
        kw = dict(histogram=True, bin_width=args.bin_width)
    with RasterFile(_existing(args.raster, "raster file")) as raster:
        result, report = run_baseline(args.method, raster, ds.polygons, **kw)
    report.config.update(vector=args.vector, raster=args.raster)
    out = Path(args.stats_out)
    _write_stats(result, out, aggs, None)
    _write_report(report, Path(args.report) if args.report else out.with_suffix(".report.json"))
    return EXIT_OK


def cmd_estimate(args) -> int:
    from .costmodel import CostParams, estimate

    if args.params:
        with open(_existing(args.params, "params file"), "rb") as f:
            try:
                doc = tomllib.load(f)
            except tomllib.TOMLDecodeError as exc:
                raise UsageError(f"{args.params}: {exc}") from None
        cp = CostParams.from_mapping(doc.get("params", doc))
    elif args.vector and args.raster:
        from .raster import read_metadata
        from .vector import partition

        ds = _load_vector(args.vector)
        meta = read_metadata(_existing(args.raster, "raster file"))
        cp = CostParams.from_data(meta, ds.stats, partition(ds, args.chunk_size, True), C=args.chunk_size)
    else:
        raise UsageError("estimate needs --params, or both --vector and --raster")
    methods = ["rda", "vda", "rzs"] if args.method == "all" else [args.method]
    out = {m: estimate(m, cp) for m in methods}
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import ConfigError, load_config, run_series

    try:
        cfg = load_config(_existing(args.series, "series config"))
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    result = run_series(cfg, args.out_dir, raster_path=args.raster, figure=not args.no_figure)
    print(result.format_table())
    print(f"\ntable: {Path(args.out_dir) / 'bench.csv'}")
    if not args.no_figure:
        print(f"figure: {Path(args.out_dir) / 'bench.png'}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def _add_partition_flags(p, default_chunk=5000):
    p.add_argument("--chunk-size", type=int, default=default_chunk, help="polygons per chunk (default %(default)s)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--spatial", dest="spatial", action="store_true", default=True,
                   help="sort-tile-recursive chunking (default)")
    g.add_argument("--no-spatial", dest="spatial", action="store_false", help="slice polygons in input order")


def build_parser() -> argparse.ArgumentParser:
    from .pipeline import default_workers

    parser = argparse.ArgumentParser(prog="raptorzs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-raster", help="write a synthetic RTIL raster")
    p.add_argument("--out", required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--tile-w", type=int, default=128)
    p.add_argument("--tile-h", type=int, default=128)
    p.add_argument("--pixel-size", type=float, required=True)
    p.add_argument("--origin", type=float, nargs=2, metavar=("LON0", "LAT0"), default=(0.0, 0.0),
                   help="west and north edge in degrees")
    p.add_argument("--pattern", choices=("constant", "gradient", "random"), default="random")
    p.add_argument("--value", type=float, default=0, help="fill value for --pattern constant")
    p.add_argument("--value-type", choices=("int32", "float64"), default="int32")
    p.add_argument("--order", choices=("row", "column"), default="row")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--compress", action="store_true", help="deflate each tile")
    p.set_defaults(func=cmd_gen_raster)

    p = sub.add_parser("gen-vector", help="write seeded random polygons as pid,wkt CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--num-polygons", type=int, required=True)
    p.add_argument("--ns-bar", type=int, default=8, help="segments per polygon")
    p.add_argument("--extent", type=float, nargs=4, metavar=("MINLON", "MINLAT", "MAXLON", "MAXLAT"),
                   default=(0.0, 0.0, 1.0, 1.0))
    p.add_argument("--size", type=float, nargs=2, metavar=("W", "H"), default=(0.05, 0.05),
                   help="mean polygon MBR size in degrees")
    p.add_argument("--shape", choices=("star", "convex"), default="star")
    p.add_argument("--clusters", type=int, default=0)
    p.add_argument("--spread", type=float, default=0.02, help="cluster standard deviation in degrees")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_vector)

    p = sub.add_parser("partition", help="assign polygons to chunks")
    p.add_argument("--vector", required=True)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    _add_partition_flags(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("intersect", help="build intersection files from a vector layer and raster metadata")
    p.add_argument("--vector", required=True)
    p.add_argument("--raster-meta", required=True, help="RTIL file; only its header is read")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--compress", action="store_true", help="deflate record blocks")
    p.add_argument("--workers", type=int, default=default_workers())
    _add_partition_flags(p)
    p.set_defaults(func=cmd_intersect)

    p = sub.add_parser("zonal", help="zonal statistics with the raptor join")
    p.add_argument("--vector", required=True)
    p.add_argument("--raster", required=True)
    p.add_argument("--agg", default="count,min,max,sum,mean")
    p.add_argument("--bin-width", type=float, help="histogram bin width for float rasters")
    p.add_argument("--split-size", type=int, default=64, help="max tiles per split (default %(default)s)")
    p.add_argument("--workers", type=int, default=default_workers())
    p.add_argument("--compress", action="store_true", help="deflate intersection record blocks")
    p.add_argument("--stats-out", required=True, help="per-polygon CSV")
    p.add_argument("--hist-out", help="histogram CSV (default: <stats-out>.hist.csv)")
    p.add_argument("--report", help="run report JSON (default: <stats-out>.report.json)")
    p.add_argument("--work-dir", help="keep intersection files here")
    _add_partition_flags(p)
    p.set_defaults(func=cmd_zonal)

    p = sub.add_parser("baseline", help="zonal statistics with a reference method")
    p.add_argument("--method", choices=("rda", "vda", "scanline"), required=True)
    p.add_argument("--vector", required=True)
    p.add_argument("--raster", required=True)
    p.add_argument("--agg", default="count,min,max,sum,mean")
    p.add_argument("--bin-width", type=float)
    p.add_argument("--stats-out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("estimate", help="evaluate the analytical cost model")
    p.add_argument("--params", help="TOML file with cost parameters (optionally under [params])")
    p.add_argument("--vector")
    p.add_argument("--raster")
    p.add_argument("--chunk-size", type=int, default=5000)
    p.add_argument("--method", choices=("rda", "vda", "rzs", "all"), default="all")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bench", help="run a scaled series and correlate estimates with measurements")
    p.add_argument("--series", required=True, help="TOML series config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--raster", help="reuse an existing RTIL file instead of generating one")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"raptorzs {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RaptorError, OSError, ValueError) as exc:
        print(f"raptorzs {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
