"""
Timing the two kernels
======================

Both kernels build a T x T matrix, so doubling T should cost about four times
as much once T is large enough that the quadratic term dominates.
"""

from projsdpa.bench import format_bench_csv, retain_freed_memory, run_benchmark

# Each call allocates a few [heads, T, T] buffers. Unless the allocator keeps
# freed memory around, every call also pays to fault those pages back in, and
# that cost jumps once the buffers outgrow the cache (T = 256 here is 4 MB).
retained = retain_freed_memory()

rows = run_benchmark([32, 64, 128, 256], d=64, heads=8, reps=10, threads=1)
print(format_bench_csv(rows, threads=1, allocator="freed memory retained" if retained else "default"))

med = {(r["variant"], r["phase"], r["T"]): r["median_s"] for r in rows}
for variant in ("standard", "projection"):
    for phase in ("forward", "forward_backward"):
        ratios = [med[(variant, phase, 2 * t)] / med[(variant, phase, t)] for t in (32, 64, 128)]
        print(f"{variant:10} {phase:16} doubling ratios: " + "  ".join(f"{x:.2f}" for x in ratios))
