"""Selective-scan benchmark: numpy sequential / numpy chunked / compiled sequential."""
from __future__ import annotations

import csv
import io
import time

import numpy as np

from .sscan import _scan_py, backend

COLUMNS = ("L", "C", "N", "variant", "nanoseconds", "max_abs_dev_vs_seq")


def _inputs(rng, L, C, N, B=1):
    u = rng.uniform(-1, 1, (B, L, C)).astype(np.float32)
    delta = rng.uniform(0.01, 0.5, (B, L, C)).astype(np.float32)
    A = -rng.uniform(0.1, 2.0, (C, N)).astype(np.float32)
    Bm = rng.standard_normal((B, L, N)).astype(np.float32)
    Cm = rng.standard_normal((B, L, N)).astype(np.float32)
    return u, delta, A, Bm, Cm


def _variants(chunk: int):
    out = {
        "seq-numpy": lambda *a: _run(_scan_py, a, None),
        f"chunked-numpy-{chunk}": lambda *a: _run(_scan_py, a, chunk),
    }
    if backend.HAVE_EXTENSION:
        out["seq-cython"] = lambda *a: _run(backend._scan_cy, a, None)
    return out


def _run(mod, args, chunk):
    u, delta, A, Bm, Cm = args
    if chunk is None:
        y, h = mod.ssm_forward(u, delta, A, Bm, Cm)
        mod.ssm_backward(u, delta, A, Bm, Cm, h, np.ones_like(y))
    else:
        y, h = mod.ssm_forward(u, delta, A, Bm, Cm, chunk=chunk)
        mod.ssm_backward(u, delta, A, Bm, Cm, h, np.ones_like(y), chunk=chunk)
    return y


def bench_scan(lengths=(256, 1024, 4096), channels=(4, 32), d_state=8, chunk=64,
               repeats=3, seed=0) -> list[dict]:
    """Median forward+backward wall time per variant, plus output deviation from seq-numpy."""
    rng = np.random.default_rng(seed)
    rows = []
    for L in lengths:
        for C in channels:
            args = _inputs(rng, L, C, d_state)
            ref = None
            for name, fn in _variants(chunk).items():
                times = []
                for _ in range(repeats):
                    t0 = time.perf_counter_ns()
                    y = fn(*args)
                    times.append(time.perf_counter_ns() - t0)
                if ref is None:
                    ref = y
                rows.append({"L": L, "C": C, "N": d_state, "variant": name,
                             "nanoseconds": int(np.median(times)),
                             "max_abs_dev_vs_seq": float(np.max(np.abs(y - ref)))})
    return rows


def to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "max_abs_dev_vs_seq": f"{r['max_abs_dev_vs_seq']:.3e}"})
    return buf.getvalue()
