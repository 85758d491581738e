import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raptorzs.aggregation import Accumulator, PartialTable, ZonalResult, accumulate, finalize, merge


def acc_of(values, kind="int", **kw):
    a = Accumulator(kind, **kw)
    for v in values:
        accumulate(a, v)
    return a


def test_accumulate_examples():
    a = acc_of([1, 2, 3])
    assert (a.count, a.min, a.max, a.sum, a.mean) == (3, 1, 3, 6, 2.0)
    e = acc_of([])
    assert e.count == 0 and e.min is None and e.mean is None and e.sum == 0


def test_histogram_unit_buckets():
    assert dict(acc_of([2, 2, 5], histogram=True).hist) == {2: 2, 5: 1}


def test_float_histogram_buckets():
    a = acc_of([0.1, 0.4, 0.6, -0.2], "float", histogram=True, bin_width=0.5)
    assert dict(a.hist) == {0: 2, 1: 1, -1: 1}
    with pytest.raises(ValueError):
        Accumulator("float", histogram=True)


def test_merge_examples():
    assert merge(acc_of([1, 2]), acc_of([3])) == acc_of([1, 2, 3])
    x = acc_of([4, -1])
    assert merge(x, Accumulator()) == x
    assert merge(Accumulator(), x) == x


def test_merge_variant_mismatch():
    with pytest.raises(ValueError, match="merge"):
        merge(Accumulator("int"), Accumulator("float"))
    with pytest.raises(ValueError):
        Accumulator("decimal")


def test_merge_does_not_mutate_inputs():
    a, b = acc_of([1]), acc_of([2])
    merge(a, b)
    assert a.count == 1 and b.count == 1


def test_int_overflow_is_an_error():
    a = Accumulator()
    a.add(2**62)
    with pytest.raises(OverflowError):
        a.add(2**62)
    big = acc_of([2**62])
    with pytest.raises(OverflowError):
        merge(big, acc_of([2**62]))


def test_add_values_matches_fold():
    rng = np.random.default_rng(0)
    v = rng.integers(-10**6, 10**6, 1000)
    assert Accumulator(histogram=True).add_values(v) == acc_of(v.tolist(), histogram=True)
    f = rng.normal(size=500)
    got = Accumulator("float").add_values(f)
    want = acc_of(f.tolist(), "float")
    assert got.count == want.count and got.min == want.min
    assert math.isclose(got.sum, math.fsum(f.tolist()), rel_tol=1e-12)


def test_partial_table_add_pairs():
    t = PartialTable(histogram=True)
    t.add_pairs(np.array([3, 1, 3, 3]), np.array([5, 9, 5, 1]))
    t.add_pairs(np.array([1]), np.array([2]))
    assert t[3] == acc_of([5, 5, 1], histogram=True)
    assert t[1] == acc_of([9, 2], histogram=True)
    t.add_pairs(np.array([], dtype=np.int64), np.array([]))
    assert len(t) == 2


def test_finalize_disjoint_and_shared():
    w1, w2 = PartialTable(), PartialTable()
    w1.add_pairs(np.array([1, 2]), np.array([10, 20]))
    w2.add_pairs(np.array([2, 3]), np.array([5, 1]))
    r = finalize([w1, w2], [1, 2, 3, 4])
    s = r.summary()
    assert s[1] == (1, 10, 10, 10)
    assert s[2] == (2, 5, 20, 25)
    assert s[3] == (1, 1, 1, 1)
    assert s[4] == (0, None, None, 0)
    assert finalize([w2, w1], [4, 3, 2, 1]) == r
    assert list(r.stats) == [1, 2, 3, 4]


def test_result_diff():
    a = ZonalResult({1: acc_of([1])})
    b = ZonalResult({1: acc_of([2])})
    assert a.diff(b) == ["pid 1: (1, 1, 1, 1) != (1, 2, 2, 2)"]
    assert a.diff(a) == []


def test_csv_format(tmp_path):
    r = ZonalResult({42: acc_of([2, 3, 3, 4]), 7: Accumulator()})
    text = r.write_csv(tmp_path / "s.csv").read_text()
    assert text == "pid,count,min,max,sum,mean\n7,0,,,0,\n42,4,2,4,12,3\n"
    f = ZonalResult({1: acc_of([0.5, 1.25], "float")})
    assert f.write_csv(tmp_path / "f.csv").read_text().splitlines()[1] == "1,2,0.5,1.25,1.75,0.875"


def test_histogram_csv(tmp_path):
    r = ZonalResult({1: acc_of([2, 2, 5], histogram=True), 2: Accumulator(histogram=True)})
    assert r.write_histogram_csv(tmp_path / "h.csv").read_text() == "pid,bucket,count\n1,2,2\n1,5,1\n"


ints = st.lists(st.integers(-2**31, 2**31 - 1), max_size=30)


@settings(max_examples=200)
@given(ints, ints, ints)
def test_int_merge_laws(a, b, c):
    A, B, C = acc_of(a, histogram=True), acc_of(b, histogram=True), acc_of(c, histogram=True)
    assert merge(A, B) == merge(B, A)
    assert merge(merge(A, B), C) == merge(A, merge(B, C))
    assert merge(merge(A, B), C) == acc_of(a + b + c, histogram=True)


floats = st.lists(st.floats(-1e6, 1e6, allow_nan=False), max_size=30)


@settings(max_examples=200)
@given(floats, floats, floats)
def test_float_merge_laws(a, b, c):
    A, B, C = acc_of(a, "float"), acc_of(b, "float"), acc_of(c, "float")
    left, right = merge(merge(A, B), C), merge(A, merge(B, C))
    ref = math.fsum(a + b + c)
    scale = max(1.0, sum(abs(v) for v in a + b + c))
    for m in (left, right, merge(C, merge(B, A))):
        assert m.count == len(a + b + c)
        assert abs(m.sum - ref) <= 1e-9 * scale
    assert left.min == right.min and left.max == right.max
