import pytest

from mm2ct.bench import bench_scan, to_csv
from mm2ct.sscan import backend


def test_rows_cover_every_variant():
    rows = bench_scan([32], [2], d_state=2, chunk=8, repeats=1)
    names = [r["variant"] for r in rows]
    assert names[0] == "seq-numpy" and "chunked-numpy-8" in names
    if backend.HAVE_EXTENSION:
        assert "seq-cython" in names
    assert all(r["nanoseconds"] > 0 for r in rows)


@pytest.mark.parametrize("L", [16, 64])
def test_variants_agree(L):
    for r in bench_scan([L], [3], d_state=2, chunk=7, repeats=1):
        assert r["max_abs_dev_vs_seq"] < 1e-5


def test_csv_round_trip():
    rows = bench_scan([16], [2], d_state=2, repeats=1)
    lines = to_csv(rows).splitlines()
    assert len(lines) == len(rows) + 1
