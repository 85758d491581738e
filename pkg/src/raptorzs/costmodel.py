"""Closed-form cost estimates for RDA, VDA and RZS, and rank correlation of
estimates against measurements.

Costs are dimensionless units (pixels, comparisons).  Logarithms are base 2
and clamped to zero below an argument of 1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, fields, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .raster import RasterMetadata
from .vector import DEFAULT_CHUNK_SIZE, VectorChunk, VectorStats

DEFAULT_BLOCK_SIZE = 128 * 2**20


def _log2(v: float) -> float:
    return math.log2(v) if v > 1 else 0.0


@dataclass(frozen=True)
class CostParams:
    r: int
    c: int
    wt: int
    ht: int
    p: float
    np: int
    ns: float
    nsBar: float | None = None
    wp: float = 0.0
    hp: float = 0.0
    hs: float | None = None
    I: float = 0.0
    B: float = DEFAULT_BLOCK_SIZE
    C: int = DEFAULT_CHUNK_SIZE
    nc: int | None = None
    wc: float = 0.0
    hc: float = 0.0

    def __post_init__(self):
        if self.nsBar is None:
            object.__setattr__(self, "nsBar", self.ns / self.np)
        if self.hs is None:
            object.__setattr__(self, "hs", self.hp / (2 * self.nsBar))
        if self.nc is None:
            object.__setattr__(self, "nc", max(1, math.ceil(self.np / self.C)))
        for name in ("r", "c", "wt", "ht", "p", "np", "ns", "nsBar", "C", "nc"):
            if not getattr(self, name) > 0:
                raise ValueError(f"cost parameter {name} must be positive, got {getattr(self, name)!r}")
        for name in ("wp", "hp", "hs", "I", "B", "wc", "hc"):
            if getattr(self, name) < 0:
                raise ValueError(f"cost parameter {name} must be non-negative")

    @classmethod
    def from_data(cls, meta: RasterMetadata, vstats: VectorStats, chunks: Sequence[VectorChunk] | None = None,
                  C: int = DEFAULT_CHUNK_SIZE, B: float = DEFAULT_BLOCK_SIZE) -> "CostParams":
        """Parameters measured from a raster header, dataset stats and an optional partition."""
        wc = hc = 0.0
        nc = None
        if chunks:
            nc = len(chunks)
            ext = [ch.extent_pixels(meta.geo) for ch in chunks]
            wc = float(np.mean([e[0] for e in ext]))
            hc = float(np.mean([e[1] for e in ext]))
        return cls(r=meta.rows, c=meta.cols, wt=meta.tile_w, ht=meta.tile_h, p=meta.geo.p, np=vstats.np,
                   ns=vstats.ns, nsBar=vstats.ns_bar, wp=vstats.wp_bar, hp=vstats.hp_bar, hs=vstats.hs,
                   I=vstats.input_bytes, B=B, C=C, nc=nc, wc=wc, hc=hc)

    @classmethod
    def from_mapping(cls, data: dict) -> "CostParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown cost parameters: {sorted(unknown)}")
        return cls(**data)

    def with_(self, **kw) -> "CostParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class RDAEstimate:
    tS: float
    nT: int
    tC: float
    tRDA: float


@dataclass(frozen=True)
class VDAEstimate:
    tVDA: float
    dVDA: float


@dataclass(frozen=True)
class RZSEstimate:
    niBar: float
    tIBar: float
    ntBar: int
    tSBar: float
    tRZS: float


def estimate_rda(cp: CostParams) -> RDAEstimate:
    tS = cp.np * cp.nsBar * _log2(cp.nsBar)
    nT = math.ceil(cp.wp / (cp.wt * cp.p)) * math.ceil(cp.hp / (cp.ht * cp.p))
    tC = cp.np * nT * cp.wt * cp.ht
    return RDAEstimate(tS, nT, tC, tS + tC)


def estimate_vda(cp: CostParams) -> VDAEstimate:
    lg = _log2(cp.ns)
    return VDAEstimate(cp.ns * lg + cp.c * cp.r * lg, cp.c * cp.r + cp.I)


def estimate_rzs(cp: CostParams) -> RZSEstimate:
    """Per-chunk intersection and selection cost, times the chunk count.

    The per-chunk segment count is the dataset total divided evenly over
    ``nc`` chunks; chunk extents ``wc``/``hc`` are in pixels.
    """
    ns_chunk = cp.ns / cp.nc
    niBar = ns_chunk * cp.hs / cp.p
    tIBar = niBar + niBar * _log2(niBar)
    ntBar = math.ceil(cp.wc / cp.wt) * math.ceil(cp.hc / cp.ht)
    tSBar = ntBar * cp.wt * cp.ht
    return RZSEstimate(niBar, tIBar, ntBar, tSBar, cp.nc * (tIBar + tSBar))


ESTIMATORS = {"rda": estimate_rda, "vda": estimate_vda, "rzs": estimate_rzs}
TOTAL_FIELD = {"rda": "tRDA", "vda": "tVDA", "rzs": "tRZS"}


def estimate(method: str, cp: CostParams) -> dict:
    if method not in ESTIMATORS:
        raise ValueError(f"unknown method {method!r}")
    return asdict(ESTIMATORS[method](cp))


def total_cost(method: str, cp: CostParams) -> float:
    return estimate(method, cp)[TOTAL_FIELD[method]]


def correlate(estimates: Sequence[float], measurements: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties.

    Returns NaN when either side is constant.
    """
    if len(estimates) != len(measurements):
        raise ValueError(f"length mismatch: {len(estimates)} estimates vs {len(measurements)} measurements")
    if len(estimates) < 3:
        raise ValueError("need >= 3 points")
    a = np.asarray(estimates, dtype=float)
    b = np.asarray(measurements, dtype=float)
    if np.all(a == a[0]) or np.all(b == b[0]):
        return float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(stats.spearmanr(a, b).statistic)
