"""Per-polygon accumulators with partial (per worker) and final (merged) phases."""

from __future__ import annotations

import csv
import math
from collections import Counter
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


class Accumulator:
    """count / min / max / sum, plus an optional value histogram.

    Integer accumulators sum exactly and refuse to leave the signed 64-bit
    range.  Float accumulators keep a Neumaier-compensated sum.  Histogram
    buckets are the values themselves for integers and
    ``floor(v / bin_width)`` for floats.
    """

    __slots__ = ("kind", "histogram", "bin_width", "count", "min", "max", "_sum", "_comp", "hist")

    def __init__(self, kind: str = "int", histogram: bool = False, bin_width: float | None = None):
        if kind not in ("int", "float"):
            raise ValueError(f"kind must be 'int' or 'float', got {kind!r}")
        if histogram and kind == "float" and not (bin_width and bin_width > 0):
            raise ValueError("float histograms need a positive bin_width")
        self._reset(kind, histogram, bin_width)

    def _reset(self, kind, histogram, bin_width) -> None:
        self.kind = kind
        self.histogram = histogram
        self.bin_width = bin_width if kind == "float" else None
        self.count = 0
        self.min = None
        self.max = None
        self._sum = 0 if kind == "int" else 0.0
        self._comp = 0.0
        self.hist = Counter() if histogram else None

    @classmethod
    def like(cls, other: "Accumulator") -> "Accumulator":
        """An empty accumulator of the same variant (skips validation)."""
        acc = cls.__new__(cls)
        acc._reset(other.kind, other.histogram, other.bin_width)
        return acc

    @property
    def variant(self):
        return (self.kind, self.histogram, self.bin_width)

    @property
    def sum(self):
        return self._sum if self.kind == "int" else self._sum + self._comp

    @property
    def mean(self):
        return self.sum / self.count if self.count else None

    def _add_sum(self, s) -> None:
        if self.kind == "int":
            s = self._sum + int(s)
            if not INT64_MIN <= s <= INT64_MAX:
                raise OverflowError("integer sum left the 64-bit range")
            self._sum = s
            return
        s = float(s)
        t = self._sum + s
        if abs(self._sum) >= abs(s):
            self._comp += (self._sum - t) + s
        else:
            self._comp += (s - t) + self._sum
        self._sum = t

    def _bucket(self, v):
        if self.kind == "int":
            return int(v)
        return math.floor(v / self.bin_width)

    def add(self, m) -> "Accumulator":
        m = int(m) if self.kind == "int" else float(m)
        self.count += 1
        self.min = m if self.min is None or m < self.min else self.min
        self.max = m if self.max is None or m > self.max else self.max
        self._add_sum(m)
        if self.hist is not None:
            self.hist[self._bucket(m)] += 1
        return self

    def add_summary(self, count: int, lo, hi, total, hist: Mapping | None = None) -> None:
        """Fold in a pre-reduced group of values."""
        if count == 0:
            return
        if self.kind == "int":
            lo, hi = int(lo), int(hi)
        else:
            lo, hi = float(lo), float(hi)
        self.count += count
        self.min = lo if self.min is None or lo < self.min else self.min
        self.max = hi if self.max is None or hi > self.max else self.max
        self._add_sum(total)
        if self.hist is not None and hist:
            self.hist.update(hist)

    def add_values(self, values: np.ndarray) -> "Accumulator":
        values = np.asarray(values)
        if len(values):
            self.add_summary(len(values), values.min(), values.max(), _exact_sum(values, self.kind),
                             self._histogram_of(values))
        return self

    def _histogram_of(self, values: np.ndarray):
        if self.hist is None:
            return None
        if self.kind == "int":
            keys, counts = np.unique(values, return_counts=True)
        else:
            keys, counts = np.unique(np.floor(values / self.bin_width), return_counts=True)
        return dict(zip((int(k) for k in keys), counts.tolist()))

    def merge_from(self, other: "Accumulator") -> "Accumulator":
        if other.variant != self.variant:
            raise ValueError(f"cannot merge accumulator {other.variant} into {self.variant}")
        if other.count:
            self.count += other.count
            self.min = other.min if self.min is None or other.min < self.min else self.min
            self.max = other.max if self.max is None or other.max > self.max else self.max
            self._add_sum(other._sum)
            if self.kind == "float":
                self._comp += other._comp
            if self.hist is not None:
                self.hist.update(other.hist)
        return self

    def copy(self) -> "Accumulator":
        return Accumulator.like(self).merge_from(self)

    def __eq__(self, other):
        if not isinstance(other, Accumulator):
            return NotImplemented
        return (self.variant == other.variant and self.count == other.count and self.min == other.min
                and self.max == other.max and self.sum == other.sum and self.hist == other.hist)

    def __repr__(self):
        return f"Accumulator(count={self.count}, min={self.min}, max={self.max}, sum={self.sum})"


def _exact_sum(values: np.ndarray, kind: str):
    if kind == "int":
        if len(values) * int(np.abs(values).max()) < 2**62:
            return int(values.astype(np.int64).sum())
        return sum(int(v) for v in values.tolist())
    return math.fsum(values.tolist())


def accumulate(acc: Accumulator, m) -> Accumulator:
    return acc.add(m)


def merge(a: Accumulator, b: Accumulator) -> Accumulator:
    """A fresh accumulator equal to folding both input streams."""
    return a.copy().merge_from(b)


class PartialTable(dict):
    """pid -> Accumulator owned by one worker."""

    def __init__(self, kind: str = "int", histogram: bool = False, bin_width: float | None = None):
        super().__init__()
        self.template = Accumulator(kind, histogram, bin_width)

    def get_acc(self, pid: int) -> Accumulator:
        acc = self.get(pid)
        if acc is None:
            acc = self[pid] = Accumulator.like(self.template)
        return acc

    def add_pairs(self, pids: np.ndarray, values: np.ndarray) -> None:
        """Fold a batch of (pid, measurement) pairs, grouped by pid."""
        if not len(pids):
            return
        order = np.argsort(pids, kind="stable")
        p = pids[order]
        v = values[order]
        heads = np.flatnonzero(np.concatenate([[True], p[1:] != p[:-1]]))
        counts = np.diff(np.append(heads, len(p)))
        mins = np.minimum.reduceat(v, heads)
        maxs = np.maximum.reduceat(v, heads)
        tmpl = self.template
        if tmpl.kind == "int":
            sums = np.add.reduceat(v.astype(np.int64), heads)  # per-group totals here stay far below 2**63
        else:
            sums = None
        for k, h in enumerate(heads.tolist()):
            acc = self.get_acc(int(p[h]))
            n = int(counts[k])
            if tmpl.kind == "int":
                total = int(sums[k])
            else:
                total = math.fsum(v[h:h + n].tolist())
            hist = acc._histogram_of(v[h:h + n]) if acc.hist is not None else None
            acc.add_summary(n, mins[k], maxs[k], total, hist)


class ZonalResult:
    """Final per-polygon aggregates; every dataset pid is present."""

    def __init__(self, stats: dict[int, Accumulator]):
        self.stats = dict(sorted(stats.items()))

    def __getitem__(self, pid):
        return self.stats[pid]

    def __len__(self):
        return len(self.stats)

    def __eq__(self, other):
        if not isinstance(other, ZonalResult):
            return NotImplemented
        return self.stats == other.stats

    def summary(self) -> dict[int, tuple]:
        """``pid -> (count, min, max, sum)``, handy for equality checks."""
        return {pid: (a.count, a.min, a.max, a.sum) for pid, a in self.stats.items()}

    def diff(self, other: "ZonalResult", limit: int = 5) -> list[str]:
        a, b = self.summary(), other.summary()
        out = []
        for pid in sorted(set(a) | set(b)):
            if a.get(pid) != b.get(pid):
                out.append(f"pid {pid}: {a.get(pid)} != {b.get(pid)}")
                if len(out) >= limit:
                    break
        return out

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["pid", "count", "min", "max", "sum", "mean"])
            for pid, a in self.stats.items():
                if a.count:
                    w.writerow([pid, a.count, _fmt(a.min), _fmt(a.max), _fmt(a.sum), _fmt(a.mean)])
                else:
                    w.writerow([pid, 0, "", "", _fmt(a.sum), ""])
        return path

    def write_histogram_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["pid", "bucket", "count"])
            for pid, a in self.stats.items():
                if a.hist:
                    for bucket in sorted(a.hist):
                        w.writerow([pid, bucket, a.hist[bucket]])
        return path


def _fmt(v) -> str:
    if isinstance(v, float):
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    return str(v)


def finalize(partials: Iterable[Mapping[int, Accumulator]], pids: Iterable[int],
             template: Accumulator | None = None) -> ZonalResult:
    """Merge worker partials; pids without any pixel get an empty accumulator."""
    template = template or Accumulator()
    out: dict[int, Accumulator] = {}
    for part in partials:
        for pid, acc in part.items():
            cur = out.get(pid)
            if cur is None:
                out[pid] = Accumulator.like(template).merge_from(acc)
            else:
                cur.merge_from(acc)
    for pid in pids:
        if pid not in out:
            out[int(pid)] = Accumulator.like(template)
    return ZonalResult(out)
