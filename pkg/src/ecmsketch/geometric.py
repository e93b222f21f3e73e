"""Simulated distributed monitoring of a windowed self-join threshold.

Each site keeps an ECM-sketch of its own stream. The coordinator holds the
average ``e`` of the sites' counter grids from the last synchronization.
Site ``i`` tracks the drift ``u_i = e + (grid_i(now) - grid_i(sync))`` and
raises a violation when the ball with diameter ``[e, u_i]`` straddles the
threshold in any row. The average of the ``u_i`` is exactly the current
average grid, so while no ball straddles the threshold the monitored value
stays on the side it was on at the last sync.

Transport is simulated; every message is real serialized bytes and its
length is logged.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .oracle import ExactWindowStore, oracle_l1, oracle_self_join
from .sketch import INNER, EcmSketch, compose, plan
from .streams import parse_stream

VECTOR_MAGIC = b"ECMV"
_VEC_HEAD = struct.Struct("<4sHII")
_NOTICE = struct.Struct("<4sIq")


def ball_extrema(center, radius):
    """Min and max of ``||x||^2`` over the ball ``B(center, radius)``."""
    c = float(np.linalg.norm(center))
    return max(c - radius, 0.0) ** 2, (c + radius) ** 2


def ball_check(e, u, threshold):
    """True when the ball with diameter ``[e, u]`` holds points on both sides of ``threshold``."""
    e = np.asarray(e, dtype=float)
    u = np.asarray(u, dtype=float)
    lo, hi = ball_extrema((e + u) / 2, float(np.linalg.norm(e - u)) / 2)
    return lo < threshold < hi


def rows_value(grid):
    """Monitored function on a grid: the smallest row sum of squares."""
    return float((np.asarray(grid) ** 2).sum(axis=1).min())


def encode_vector(grid):
    g = np.ascontiguousarray(grid, dtype="<f8")
    return _VEC_HEAD.pack(VECTOR_MAGIC, 1, g.shape[0], g.shape[1]) + g.tobytes()


def decode_vector(buf):
    magic, _, d, w = _VEC_HEAD.unpack_from(buf, 0)
    if magic != VECTOR_MAGIC:
        raise ValueError("bad vector magic")
    return np.frombuffer(buf, dtype="<f8", offset=_VEC_HEAD.size, count=d * w).reshape(d, w).copy()


@dataclass
class MonitoringTask:
    n: int
    threshold: float
    r: int
    eps: float = 0.2
    delta: float = 0.1
    window: int | None = None
    backend: str = "eh"
    seed: int = 0

    def __post_init__(self):
        if self.window is None:
            self.window = self.r
        if self.n < 1:
            raise ValueError("need at least one site")

    def make_sketch(self):
        return EcmSketch(plan(self.eps, self.delta, INNER, self.backend), self.window,
                         seed=self.seed)

    @property
    def local_threshold(self):
        # f(average grid) = f(union grid) / n^2
        return self.threshold / self.n ** 2


@dataclass
class SiteState:
    site: int
    sketch: EcmSketch
    estimate: np.ndarray | None = None
    baseline: np.ndarray | None = None
    synced_at: int | None = None

    def grid(self, r, now):
        return self.sketch.grid(r, now)

    def drift(self, r, now):
        """``u_i = e + (current grid - grid at last sync)``."""
        return self.estimate + (self.grid(r, now) - self.baseline)


def local_check(site, task, now):
    """``"violation"`` if any row's ball straddles the threshold, else ``"safe"``."""
    if site.estimate is None:
        raise ValueError("site has never been synchronized")
    u = site.drift(task.r, now)
    t = task.local_threshold
    for e_row, u_row in zip(site.estimate, u):
        if ball_check(e_row, u_row, t):
            return "violation"
    return "safe"


@dataclass
class SyncResult:
    estimate: np.ndarray
    uploads: list
    broadcast: bytes
    composed: EcmSketch | None = None


def synchronize(sites, task, now, with_compose=True):
    """Collect every site's sketch, average the grids and broadcast the result."""
    frames = [s.sketch.to_bytes() for s in sites]
    received = [EcmSketch.from_bytes(f) for f in frames]
    grids = [sk.grid(task.r, now) for sk in received]
    est = sum(grids) / len(sites)
    composed = None
    if with_compose and len(received) > 1:
        composed = compose(received)
    msg = encode_vector(est)
    for s in sites:
        s.estimate = decode_vector(msg)
        s.baseline = s.grid(task.r, now)
        s.synced_at = now
    return SyncResult(est, frames, msg, composed)


@dataclass
class MonitorResult:
    log: list = field(default_factory=list)
    syncs: int = 0
    violations: int = 0
    true_crossings: int = 0
    missed: int = 0
    bytes: int = 0
    naive_bytes: int = 0
    values: list = field(default_factory=list)

    @property
    def savings(self):
        return 1.0 - self.bytes / self.naive_bytes if self.naive_bytes else 0.0

    def log_lines(self):
        return [json.dumps(rec, sort_keys=True) for rec in self.log]

    def summary(self):
        return {
            "syncs": self.syncs,
            "violations": self.violations,
            "true_crossings": self.true_crossings,
            "missed_crossings": self.missed,
            "bytes": self.bytes,
            "naive_bytes": self.naive_bytes,
            "bytes_vs_naive": round(self.bytes / self.naive_bytes, 6) if self.naive_bytes else 0.0,
        }


def run_monitor(events, task, with_compose=False):
    """Replay ``(ts, site, key, value)`` events through the protocol.

    Also ships the arriving site's full sketch on every event as the naive
    baseline, and tracks the exact union self-join to count crossings the
    protocol failed to notice. A crossing counts as missed only when the
    exact value lies outside the sketch error band around the threshold.
    """
    sites = [SiteState(i, task.make_sketch()) for i in range(task.n)]
    oracle = ExactWindowStore(task.window)
    res = MonitorResult()

    def record(now, site, kind, nbytes):
        res.log.append({"time": now, "site": site, "kind": kind, "bytes": nbytes})
        res.bytes += nbytes

    def do_sync(now):
        out = synchronize(sites, task, now, with_compose)
        for s, f in zip(sites, out.uploads):
            record(now, s.site, "upload", len(f))
        for s in sites:
            record(now, s.site, "broadcast", len(out.broadcast))
        res.syncs += 1
        return rows_value(out.estimate) * task.n ** 2

    start = events[0][0] if events else 0
    believed = do_sync(start)
    true_side = None
    bound = sites[0].sketch.error_bound()
    for ts, site, key, value in events:
        if not 0 <= site < task.n:
            raise ValueError(f"site {site} outside 0..{task.n - 1}")
        sites[site].sketch.add(key, value, ts)
        oracle.add(ts, key, value)
        res.naive_bytes += len(sites[site].sketch.to_bytes())
        bad = [s.site for s in sites if local_check(s, task, ts) == "violation"]
        if bad:
            res.violations += len(bad)
            for b in bad:
                record(ts, b, "violation", len(violation_notice(b, ts)))
            believed = do_sync(ts)
        exact = oracle_self_join(oracle, task.r, ts)
        band = bound * oracle_l1(oracle, task.r, ts) ** 2
        side = exact > task.threshold
        if true_side is not None and side != true_side:
            res.true_crossings += 1
        true_side = side
        if (believed > task.threshold) != side and abs(exact - task.threshold) > band:
            res.missed += 1
        res.values.append((ts, exact, believed))
    return res


def violation_notice(site, now):
    return _NOTICE.pack(b"VIOL", site, now)


# -- scenario files -----------------------------------------------------------

def read_scenario(path):
    """``key = value`` lines; ``#`` starts a comment."""
    conf = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            k, v = (x.strip() for x in line.split("=", 1))
            conf[k] = v
    return conf


def scenario_events(conf):
    """Round-robin site assignment over the configured stream.

    ``burst = start,end,key`` overwrites the keys of events ``start..end-1``,
    which is an easy way to force the self-join across a threshold.
    """
    n = int(conf["n"])
    seed = int(conf.get("seed", 0))
    events = parse_stream(conf["stream"], seed).events_list()
    burst = conf.get("burst")
    if burst:
        b0, b1, bk = (int(x) for x in burst.split(","))
        events = [(ts, bk if b0 <= i < b1 else k, v) for i, (ts, k, v) in enumerate(events)]
    return [(ts, i % n, k, v) for i, (ts, k, v) in enumerate(events)]


def scenario_task(conf):
    r = int(float(conf["r"]))
    return MonitoringTask(
        n=int(conf["n"]),
        threshold=float(conf["T"]),
        r=r,
        eps=float(conf.get("eps", 0.2)),
        delta=float(conf.get("delta", 0.1)),
        window=int(float(conf.get("window", r))),
        backend=conf.get("backend", "eh"),
        seed=int(conf.get("seed", 0)),
    )

