"""Experiment runner: ``ecmsketch replay|tree|bench|monitor``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import random
import sys
import time
from dataclasses import replace

import numpy as np

from .geometric import read_scenario, run_monitor, scenario_events, scenario_task
from .oracle import ExactWindowStore, oracle_l1, oracle_self_join
from .sketch import BACKEND_NAMES, EcmSketch, compose, plan
from .streams import parse_stream
from .windows import COUNT, TIME, eh_error_for_levels

CSV_SCHEMA = 1
REPORT_FIELDS = ["schema", "query", "range", "status", "probes", "l1", "avg_err", "max_err"]
BENCH_FIELDS = ["schema", "backend", "events", "seconds", "updates_per_sec",
                "p50_ns", "p99_ns", "max_ns"]
MAX_POINT_KEYS = 100_000


def range_ladder(span):
    """Ranges ``10**i`` up to the first one covering ``span``."""
    out = [1]
    while out[-1] < span:
        out.append(out[-1] * 10)
    return out


def feed(events, sketch, store=None):
    count = sketch.mode == COUNT
    for ts, key, value in events:
        sketch.add(key, value, None if count else ts)
        if store is not None:
            store.add(ts, key, value)


def evaluate(sketch, store, ranges, max_keys=MAX_POINT_KEYS, seed=0):
    """Point and self-join errors per range, normalised by L1 and L1 squared."""
    rows = []
    now = store.clock
    for r in ranges:
        if r > sketch.window:
            for q in ("point", "self_join"):
                rows.append({"query": q, "range": r, "status": "skipped", "probes": 0,
                             "l1": 0, "avg_err": "", "max_err": ""})
            continue
        counts = store.counts(r, now)
        l1 = oracle_l1(store, r, now)
        keys = sorted(counts, key=str)
        if len(keys) > max_keys:
            keys = random.Random(seed).sample(keys, max_keys)
        errs = []
        if l1:
            errs = [abs(sketch.point_query(k, r, now) - counts[k]) / l1 for k in keys]
        rows.append({"query": "point", "range": r, "status": "ok", "probes": len(errs), "l1": l1,
                     "avg_err": _fmt(sum(errs) / len(errs) if errs else 0.0),
                     "max_err": _fmt(max(errs, default=0.0))})
        sj = 0.0
        if l1:
            sj = abs(sketch.self_join(r, now) - oracle_self_join(store, r, now)) / l1 ** 2
        rows.append({"query": "self_join", "range": r, "status": "ok", "probes": 1 if l1 else 0,
                     "l1": l1, "avg_err": _fmt(sj), "max_err": _fmt(sj)})
    return rows


def _fmt(x):
    return f"{x:.9g}"


def replay(events, eps, delta, backend="eh", window=1_000_000, mode=TIME, seed=0,
           profile="point", max_keys=MAX_POINT_KEYS):
    """Build a sketch and the exact store side by side; returns ``(rows, summary, sketch)``."""
    p = plan(eps, delta, profile, backend)
    sk = EcmSketch(p, window, mode=mode, seed=seed)
    store = ExactWindowStore(window, mode)
    feed(events, sk, store)
    span = store.clock or 0
    rows = evaluate(sk, store, range_ladder(span) if span else [], max_keys, seed)
    mem = sk.memory_report()
    summary = {
        "events": len(events), "backend": backend, "profile": profile, "eps": eps,
        "delta": delta, "window": window, "mode": mode, "seed": seed,
        "width": p.width, "depth": p.depth, "eps_sw": p.eps_sw, "eps_cm": p.eps_cm,
        "model_bytes": mem["model_bytes"], "actual_bytes": mem["actual_bytes"],
        "key_sample_seed": seed,
    }
    return rows, summary, sk


def counter_error(sketch, store, r, now=None):
    """Summed |counter estimate - exact counter| over the grid, divided by ``depth * L1``.

    Isolates the window synopses' error from Count-Min collisions.
    """
    l1 = oracle_l1(store, r, now)
    if not l1:
        return 0.0
    exact = np.zeros((sketch.depth, sketch.width))
    rows = np.arange(sketch.depth)
    for k, v in store.counts(r, now).items():
        exact[rows, sketch.columns(k)] += v
    return float(np.abs(sketch.grid(r, now) - exact).sum()) / (sketch.depth * l1)


def _ratio(num, den):
    if den == 0:
        return 1.0 if num == 0 else math.inf
    return num / den


def _mean_point_error(rows):
    errs = [float(r["avg_err"]) for r in rows if r["query"] == "point" and r["status"] == "ok"]
    return sum(errs) / len(errs) if errs else 0.0


def build_tree(leaves, eps_prime):
    """Pairwise merges up a balanced tree; returns ``(root, shipped_bytes, height)``."""
    level = list(leaves)
    shipped = 0
    height = 0
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            pair = level[i:i + 2]
            if len(pair) == 1:
                nxt.append(pair[0])
                continue
            frames = [s.to_bytes() for s in pair]
            shipped += sum(len(f) for f in frames)
            nxt.append(compose([EcmSketch.from_bytes(f) for f in frames], eps_prime))
        level = nxt
        height += 1
    return level[0], shipped, height


def tree(events, nodes, eps, delta, backend="eh", window=1_000_000, seed=0,
         eps_split="uniform", max_keys=MAX_POINT_KEYS):
    """Round-robin the stream over ``nodes`` leaves and merge them up a binary tree."""
    if nodes < 1:
        raise ValueError("need at least one node")
    p = plan(eps, delta, "point", backend)
    height = math.ceil(math.log2(nodes)) if nodes > 1 else 0
    node_plan = p
    if eps_split == "levels" and height and backend != "rw":
        node_plan = replace(p, eps_sw=eh_error_for_levels(p.eps_sw, height))
    elif eps_split not in ("uniform", "levels"):
        raise ValueError("eps_split must be 'uniform' or 'levels'")
    central = EcmSketch(p, window, seed=seed)
    store = ExactWindowStore(window)
    feed(events, central, store)
    leaves = [EcmSketch(node_plan, window, seed=seed) for _ in range(nodes)]
    for i, (ts, key, value) in enumerate(events):
        leaves[i % nodes].add(key, value, ts)
    root, shipped, h = build_tree(leaves, node_plan.eps_sw)
    span = store.clock or 0
    ranges = range_ladder(span) if span else []
    c_rows = evaluate(central, store, ranges, max_keys, seed)
    d_rows = evaluate(root, store, ranges, max_keys, seed)
    ce, de = _mean_point_error(c_rows), _mean_point_error(d_rows)
    live = [r for r in ranges if r <= window]
    cc = sum(counter_error(central, store, r) for r in live)
    dc = sum(counter_error(root, store, r) for r in live)
    summary = {
        "events": len(events), "nodes": nodes, "height": h, "backend": backend, "eps": eps,
        "delta": delta, "eps_split": eps_split, "node_eps_sw": node_plan.eps_sw,
        "centralized_err": _fmt(ce), "distributed_err": _fmt(de), "ratio": _fmt(_ratio(de, ce)),
        "counter_ratio": _fmt(_ratio(dc, cc)),
        "network_bytes": shipped, "root_bytes": len(root.to_bytes()),
    }
    return c_rows, d_rows, summary, root


def bench(events, backends, eps, delta, window=1_000_000, seed=0, sample_every=1):
    """Update throughput and per-update latency percentiles per backend."""
    rows = []
    for b in backends:
        sk = EcmSketch(plan(eps, delta, "point", b), window, seed=seed)
        lat = []
        clock = time.perf_counter_ns
        t0 = time.perf_counter()
        for i, (ts, key, value) in enumerate(events):
            if i % sample_every == 0:
                a = clock()
                sk.add(key, value, ts)
                lat.append(clock() - a)
            else:
                sk.add(key, value, ts)
        secs = time.perf_counter() - t0
        lat.sort()
        rows.append({
            "backend": b, "events": len(events), "seconds": f"{secs:.6f}",
            "updates_per_sec": f"{len(events) / secs:.1f}" if secs > 0 else "inf",
            "p50_ns": _pct(lat, 0.5), "p99_ns": _pct(lat, 0.99), "max_ns": lat[-1] if lat else 0,
        })
    return rows


def _pct(xs, q):
    if not xs:
        return 0
    return xs[min(len(xs) - 1, int(q * len(xs)))]


# -- output -------------------------------------------------------------------

def write_csv(path, fields, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({"schema": CSV_SCHEMA, **r})


def table(fields, rows):
    cols = [f for f in fields if f != "schema"]
    data = [[str(r.get(c, "")) for c in cols] for r in rows]
    widths = [max([len(c)] + [len(d[i]) for d in data]) for i, c in enumerate(cols)]
    buf = io.StringIO()
    buf.write("  ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip() + "\n")
    for d in data:
        buf.write("  ".join(x.ljust(w) for x, w in zip(d, widths)).rstrip() + "\n")
    return buf.getvalue()


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args):
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_replay(args):
    events = parse_stream(args.stream, args.seed).events_list()
    rows, summary, sk = replay(events, args.eps, args.delta, args.backend, args.window,
                               args.mode, args.seed, args.profile)
    sys.stdout.write(table(REPORT_FIELDS, rows))
    print(json.dumps(summary, sort_keys=True))
    out = _out_dir(args)
    if out:
        write_csv(os.path.join(out, "report.csv"), REPORT_FIELDS, rows)
        _dump_json(os.path.join(out, "summary.json"), summary)
        with open(os.path.join(out, "sketch.ecms"), "wb") as fh:
            fh.write(sk.to_bytes())
    return 0


def cmd_tree(args):
    if args.mode != TIME:
        print("tree: merging needs time-based windows", file=sys.stderr)
        return 2
    events = parse_stream(args.stream, args.seed).events_list()
    c_rows, d_rows, summary, root = tree(events, args.nodes, args.eps, args.delta, args.backend,
                                         args.window, args.seed, args.eps_split)
    rows = ([{**r, "query": "central_" + r["query"]} for r in c_rows]
            + [{**r, "query": "distributed_" + r["query"]} for r in d_rows])
    sys.stdout.write(table(REPORT_FIELDS, rows))
    print(json.dumps(summary, sort_keys=True))
    out = _out_dir(args)
    if out:
        write_csv(os.path.join(out, "report.csv"), REPORT_FIELDS, rows)
        _dump_json(os.path.join(out, "summary.json"), summary)
        with open(os.path.join(out, "root.ecms"), "wb") as fh:
            fh.write(root.to_bytes())
    return 0


def cmd_bench(args):
    events = parse_stream(args.stream, args.seed).events_list()
    backends = args.backends.split(",") if args.backends else list(BACKEND_NAMES)
    rows = bench(events, backends, args.eps, args.delta, args.window, args.seed)
    sys.stdout.write(table(BENCH_FIELDS, rows))
    out = _out_dir(args)
    if out:
        write_csv(os.path.join(out, "bench.csv"), BENCH_FIELDS, rows)
    return 0


def cmd_monitor(args):
    conf = read_scenario(args.scenario)
    task = scenario_task(conf)
    res = run_monitor(scenario_events(conf), task)
    summary = res.summary()
    print(json.dumps(summary, sort_keys=True))
    out = _out_dir(args)
    if out:
        with open(os.path.join(out, "events.jsonl"), "w", encoding="utf-8") as fh:
            for line in res.log_lines():
                fh.write(line + "\n")
        _dump_json(os.path.join(out, "summary.json"), summary)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="ecmsketch", description="Sliding-window sketch experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--eps", type=float, default=0.1)
        p.add_argument("--delta", type=float, default=0.1)
        p.add_argument("--window", type=lambda s: int(float(s)), default=1_000_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--stream", default="zipf:1.0,65536,100000",
                       help="file path, zipf:s,K,M or uniform:K,M")
        p.add_argument("--out", help="directory for CSV, JSON and sketch frames")

    p = sub.add_parser("replay", help="sketch vs exact answers on one stream")
    common(p)
    p.add_argument("--backend", choices=BACKEND_NAMES, default="eh")
    p.add_argument("--mode", choices=(TIME, COUNT), default=TIME)
    p.add_argument("--profile", choices=("point", "inner"), default="point")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("tree", help="merge per-node sketches up a binary tree")
    common(p)
    p.add_argument("--backend", choices=BACKEND_NAMES, default="eh")
    p.add_argument("--mode", choices=(TIME, COUNT), default=TIME)
    p.add_argument("--nodes", type=int, default=4)
    p.add_argument("--eps-split", choices=("uniform", "levels"), default="uniform")
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("bench", help="update throughput per backend")
    common(p)
    p.add_argument("--backends", help="comma list, default eh,dw,rw")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("monitor", help="geometric threshold monitoring scenario")
    p.add_argument("scenario", help="key = value scenario file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_monitor)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"ecmsketch: {exc}", file=sys.stderr)
        return 1
