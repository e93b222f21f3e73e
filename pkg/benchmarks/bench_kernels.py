"""Compiled vs pure-Python window kernels.

    python3 benchmarks/bench_kernels.py [--events N] [--eps E]

Times insert and query loops of the EH and deterministic-wave cores under
each available implementation, then a full sketch replay per implementation.
"""
import argparse
import time

from ecmsketch import kernels
from ecmsketch.sketch import EcmSketch, plan
from ecmsketch.streams import zipf_stream
from ecmsketch.windows import eh_buckets_per_level, wave_entries_per_level, wave_top_level


def time_core(make, n, queries):
    core = make()
    t0 = time.perf_counter()
    for t in range(1, n + 1):
        core.insert(t, 1)
    t1 = time.perf_counter()
    for i in range(queries):
        core.query(1 + (i * 7919) % n, n)
    t2 = time.perf_counter()
    return n / (t1 - t0), queries / (t2 - t1)


def time_sketch(impl, events, eps, window):
    sk = EcmSketch(plan(eps, 0.1), window, impl=impl)
    t0 = time.perf_counter()
    for ts, key, value in events:
        sk.add(key, value, ts)
    return len(events) / (time.perf_counter() - t0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=200_000)
    ap.add_argument("--queries", type=int, default=50_000)
    ap.add_argument("--eps", type=float, default=0.05)
    args = ap.parse_args()

    n, window = args.events, args.events // 2
    k = eh_buckets_per_level(args.eps)
    m = wave_entries_per_level(args.eps)
    top = wave_top_level(m, window)
    events = zipf_stream(n // 4, 1 << 16, 1.0, seed=1)

    print(f"{'impl':8} {'core':4} {'inserts/s':>12} {'queries/s':>12}")
    sketch_rates = {}
    for name in kernels.available():
        mod = kernels.get(name)
        for label, make in (("eh", lambda: mod.EHCore(k, window)),
                            ("dw", lambda: mod.DWCore(m, top, window))):
            ins, qs = time_core(make, n, args.queries)
            print(f"{name:8} {label:4} {ins:12.0f} {qs:12.0f}")
        sketch_rates[name] = time_sketch(name, events, args.eps, window)
    print()
    for name, rate in sketch_rates.items():
        print(f"sketch replay ({name}): {rate:.0f} adds/s")
    if len(sketch_rates) == 2:
        print(f"speedup: {sketch_rates['cython'] / sketch_rates['python']:.2f}x")


if __name__ == "__main__":
    main()
