"""Timing harness for the two attention kernels.

Inputs are already split into heads, ``[heads, T, d/heads]``, so the timings
cover the attention kernel itself (scores or distances, weights, mixing) and
not the linear projections around it. Repetitions cycle through every
(size, variant, phase) cell in turn rather than finishing one cell before the
next, so a burst of background load does not land on a single cell.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import csv
import io
import time

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from .attention import projection_sdpa, projection_sdpa_backward, standard_sdpa, standard_sdpa_backward
from .numerics import RngState, rng_normal
from .training import hardware_string

BENCH_HEADER = ("variant", "phase", "T", "d", "heads", "median_s", "iqr_s")
PHASES = ("forward", "forward_backward")

# glibc mallopt parameters
_M_TRIM_THRESHOLD, _M_TOP_PAD, _M_MMAP_THRESHOLD = -1, -2, -3


def retain_freed_memory() -> bool:
    """Ask glibc to keep freed buffers rather than hand them back to the OS.

    Every kernel call allocates a few ``[heads, T, T]`` arrays. By default glibc
    returns those pages on free, so the next call pays for page faults that
    grow with the array size and swamp the arithmetic once T reaches a few
    hundred. Returns False where ``mallopt`` is unavailable (non-glibc).
    Process-wide and irreversible.
    """
    try:
        mallopt = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6").mallopt
    except (OSError, AttributeError):
        return False
    mallopt.argtypes = (ctypes.c_int, ctypes.c_int)
    ok = mallopt(_M_MMAP_THRESHOLD, 32 << 20)  # glibc's ceiling on 64-bit
    ok &= mallopt(_M_TRIM_THRESHOLD, 1 << 30)
    ok &= mallopt(_M_TOP_PAD, 64 << 20)
    return bool(ok)


def _runner(variant: str, phase: str, q, k, v, grad, sigma2: float):
    if variant == "standard":
        if phase == "forward":
            return lambda: standard_sdpa(q, k, v)

        def fb():
            y, tr = standard_sdpa(q, k, v)
            standard_sdpa_backward(grad, q, k, v, tr)

        return fb
    if phase == "forward":
        return lambda: projection_sdpa(q, k, sigma2)

    def fb():
        y, tr = projection_sdpa(q, k, sigma2)
        projection_sdpa_backward(grad, q, k, tr, sigma2)

    return fb


def _summary(ts: np.ndarray) -> tuple[float, float]:
    q1, med, q3 = np.percentile(ts, [25, 50, 75])
    return float(med), float(q3 - q1)


def time_call(fn, reps: int) -> tuple[float, float]:
    """Median and interquartile range of ``reps`` timed calls, each after a warm-up call."""
    return _summary(time_interleaved([fn], reps)[0])


def time_interleaved(fns, reps: int) -> list[np.ndarray]:
    """Per-function timings, taken round-robin so load spikes spread over every function.

    Each timed call directly follows an untimed call of the same function, so
    it runs with that function's working set already in cache.
    """
    ts = np.empty((len(fns), reps))
    for i in range(reps):
        for j, fn in enumerate(fns):
            fn()
            t0 = time.perf_counter()
            fn()
            ts[j, i] = time.perf_counter() - t0
    return list(ts)


def run_benchmark(
    sizes, d: int = 64, heads: int = 8, variants=("standard", "projection"), reps: int = 20,
    sigma2: float = 1.0, seed: int = 0, threads: int | None = 1,
) -> list[dict]:
    if d % heads:
        raise ValueError(f"d={d} is not divisible by heads={heads}")
    if reps < 1 or any(t < 1 for t in sizes):
        raise ValueError("sizes and reps must be positive")
    rng = RngState(seed)
    cells, fns = [], []
    for t in sizes:
        q, k, v = (rng_normal(rng, (heads, t, d // heads)) for _ in range(3))
        grad = rng_normal(rng, (heads, t, d // heads))
        for variant in variants:
            for phase in PHASES:
                cells.append(dict(variant=variant, phase=phase, T=t, d=d, heads=heads))
                fns.append(_runner(variant, phase, q, k, v, grad, sigma2))
    with threadpool_limits(limits=threads):
        timings = time_interleaved(fns, reps)
    rows = []
    for cell, ts in zip(cells, timings):
        med, iqr = _summary(ts)
        rows.append(dict(cell, median_s=med, iqr_s=iqr))
    return rows


def blas_threads() -> int:
    return max((info.get("num_threads", 1) for info in threadpool_info()), default=1)


def format_bench_csv(rows: list[dict], threads: int | None, allocator: str | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# hardware: {hardware_string()}\n")
    buf.write(f"# threads: {threads if threads is not None else blas_threads()}\n")
    if allocator:
        buf.write(f"# allocator: {allocator}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for r in rows:
        w.writerow([r["variant"], r["phase"], r["T"], r["d"], r["heads"], f"{r['median_s']:.6g}", f"{r['iqr_s']:.6g}"])
    return buf.getvalue()
