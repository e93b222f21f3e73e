"""Sliding-window counting synopses and their order-preserving merges.

Three interchangeable synopses answer "how many events in the last ``r`` time
units (or arrivals)":

* :class:`ExponentialHistogram` - deterministic, relative error ``eps``.
* :class:`DeterministicWave` - same guarantee, constant worst-case update.
* :class:`RandomizedWave` - ``(eps, delta)`` guarantee, losslessly mergeable.

Timestamps are integers that never decrease within one synopsis. An event at
``ts`` is inside range ``r`` at time ``now`` iff ``ts > now - r``; the exact
oracle uses the same predicate.
"""
from __future__ import annotations

import math
import random
import statistics
import struct
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, replace

from . import kernels
from .errors import (
    FormatError,
    IncompatibleError,
    OrderingError,
    RangeError,
    UnsupportedMergeError,
)
from .kernels import NO_TIME, splitmix64, trailing_zeros

TIME = "time"
COUNT = "count"

KIND_EH, KIND_DW, KIND_RW = 0, 1, 2
KIND_NAMES = {KIND_EH: "eh", KIND_DW: "dw", KIND_RW: "rw"}
MODE_CODES = {TIME: 0, COUNT: 1}
MODE_NAMES = {v: k for k, v in MODE_CODES.items()}

FRAME_MAGIC = b"ECMW"
FRAME_VERSION = 1
_HEAD = struct.Struct("<4sHBBdQQ")

MASK64 = (1 << 64) - 1
MASK128 = (1 << 128) - 1
DEFAULT_RW_CONSTANT = 36.0


def in_window(ts, now, r):
    """Shared expiry/range predicate used by synopses and the oracle."""
    return ts > now - r


@dataclass(frozen=True)
class WindowConfig:
    """Window length, mode and accuracy of one synopsis.

    ``capacity`` is the upper bound on arrivals per window (u(N,S)); it
    defaults to one arrival per time unit, i.e. ``window``.
    """

    window: int
    mode: str = TIME
    eps: float = 0.1
    capacity: int | None = None
    delta: float = 0.1
    c: float = DEFAULT_RW_CONSTANT
    seed: int = 0

    def __post_init__(self):
        if self.window <= 0:
            raise ValueError("window must be positive")
        if self.mode not in MODE_CODES:
            raise ValueError(f"mode must be 'time' or 'count', got {self.mode!r}")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.capacity is None or self.mode == COUNT:
            object.__setattr__(self, "capacity", self.window)
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")

    def with_(self, **kw):
        return replace(self, **kw)


def eh_buckets_per_level(eps):
    """Smallest k such that k..k+1 buckets per level keeps every bucket within eps.

    The newest size-2 bucket sees only k size-1 buckets in front of it, so
    ``1 / (1 + k) <= eps`` is the binding constraint.
    """
    return max(1, math.ceil(round(1.0 / eps - 1.0, 9)))


def wave_entries_per_level(eps):
    return max(3, math.ceil(round((1.0 / eps + 3.0) / 2.0, 9)))


def wave_top_level(m, capacity):
    top = 0
    while (m - 2) << top < capacity:
        top += 1
    return top


def eh_error_for_levels(target_eps, h):
    """Per-node eps so that ``h`` merge levels end with relative error ``target_eps``."""
    if h < 1:
        raise ValueError("h must be >= 1")
    if not 0 < target_eps < 1:
        raise ValueError("target_eps must lie in (0, 1)")
    return (math.sqrt(1 + 2 * h + h * h + 4 * h * target_eps) - 1 - h) / (2 * h)


def merged_error(eps, eps_prime):
    """Worst-case relative error after one order-preserving merge."""
    return eps + eps_prime + eps * eps_prime


def multilevel_error(eps, h):
    """Worst-case relative error after ``h`` pairwise merge levels at uniform eps."""
    return h * eps * (1 + eps) + eps


def _bits(x):
    return max(1, math.ceil(math.log2(x + 1)))


class _Synopsis:
    kind = -1

    def __init__(self, config):
        self.config = config

    @property
    def window(self):
        return self.config.window

    @property
    def eps(self):
        return self.config.eps

    def _check_range(self, r, now):
        if not 0 < r <= self.config.window:
            raise RangeError(f"range {r} outside (0, {self.config.window}]")
        last = self.last_arrival
        if now is None:
            now = last
        elif last is not None and now < last:
            raise OrderingError(f"query time {now} precedes last arrival {last}")
        return now

    def _header(self):
        cfg = self.config
        return _HEAD.pack(FRAME_MAGIC, FRAME_VERSION, self.kind, MODE_CODES[cfg.mode],
                          cfg.eps, cfg.window, cfg.capacity)

    def model_bits(self):
        raise NotImplementedError


class ExponentialHistogram(_Synopsis):
    """Deterministic window counter: power-of-two buckets, ``k..k+1`` per level."""

    kind = KIND_EH

    def __init__(self, config, impl=None):
        super().__init__(config)
        self.k = eh_buckets_per_level(config.eps)
        mod = kernels.get(impl) if impl else kernels
        self._core = mod.EHCore(self.k, config.window)

    @property
    def last_arrival(self):
        la = self._core.last_arrival
        return None if la == NO_TIME else la

    @property
    def total(self):
        return self._core.total

    @property
    def start_floor(self):
        sf = self._core.start_floor
        return None if sf == NO_TIME else sf

    def insert(self, at, count=1):
        self._core.insert(at, count)

    def expire(self, now):
        self._core.expire(now)

    def query(self, r, now=None):
        now = self._check_range(r, now)
        if now is None:
            return 0
        return self._core.query(r, now)

    def buckets(self):
        """``(size, end)`` pairs, oldest first."""
        return self._core.buckets()

    def __len__(self):
        return self._core.n_buckets()

    def invariant_violations(self, slack=1e-9):
        """Buckets (1 = newest) breaking ``floor(C_j / 2) <= eps (1 + sum of newer sizes)``.

        For sizes >= 2 this is ``C_j / (2 (1 + sum)) <= eps``; a size-1 bucket
        holds its only event at its end timestamp and is always answered exactly.
        """
        bad = []
        newer = 0
        for j, (size, _) in enumerate(reversed(self.buckets()), start=1):
            if size // 2 > self.eps * (1 + newer) + slack:
                bad.append(j)
            newer += size
        return bad

    def reconstruct(self, now=None):
        """Approximate event log: ``(ts, count, kind)`` with kind 0 = bucket end, 1 = start.

        Half of each bucket (rounded down) sits at its start, the rest at its
        end. The start of a bucket is the end of the next older one; the
        oldest bucket starts at the recorded floor.
        """
        now = self.last_arrival if now is None else now
        events = []
        if now is None:
            return events
        cutoff = now - self.window
        prev = self.start_floor
        for size, end in self.buckets():
            if end > cutoff:
                lo = size // 2
                if lo:
                    events.append((prev, lo, 1))
                events.append((end, size - lo, 0))
            prev = end
        return events

    def model_bits(self):
        if self.total == 0:
            return 0
        cfg = self.config
        g = max(cfg.capacity, cfg.window)
        per_bucket = _bits(cfg.window) + _bits(math.log2(g) + 1)
        return len(self) * per_bucket + 2 * _bits(cfg.window) + _bits(g)

    def nbytes(self):
        return self._core.nbytes()

    def to_bytes(self):
        levels = self._core.level_ends()
        parts = [self._header(), struct.pack("<qqB", self._core.last_arrival,
                                             self._core.start_floor, len(levels))]
        for lv in levels:
            parts.append(struct.pack(f"<I{len(lv)}q", len(lv), *lv))
        return b"".join(parts)

    @classmethod
    def _from_payload(cls, config, buf, off):
        la, sf, nlev = struct.unpack_from("<qqB", buf, off)
        off += 17
        levels = []
        for _ in range(nlev):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            levels.append(list(struct.unpack_from(f"<{n}q", buf, off)))
            off += 8 * n
        eh = cls(config)
        eh._core.load(levels, la, sf)
        return eh, off

    def copy(self):
        return load_synopsis(self.to_bytes())


class DeterministicWave(_Synopsis):
    """Deterministic window counter with O(1) worst-case update.

    The number of levels is fixed at construction from ``config.capacity``;
    more in-window arrivals than that raise :class:`CapacityError`.
    """

    kind = KIND_DW

    def __init__(self, config, impl=None):
        super().__init__(config)
        self.m = wave_entries_per_level(config.eps)
        self.top = wave_top_level(self.m, config.capacity)
        mod = kernels.get(impl) if impl else kernels
        self._core = mod.DWCore(self.m, self.top, config.window)

    @property
    def last_arrival(self):
        la = self._core.last_arrival
        return None if la == NO_TIME else la

    @property
    def total(self):
        """Bits ever inserted (rank of the newest bit)."""
        return self._core.total

    def insert(self, at, count=1):
        self._core.insert(at, count)

    def expire(self, now):
        self._core.expire(now)

    def query(self, r, now=None):
        now = self._check_range(r, now)
        if now is None:
            return 0
        return self._core.query(r, now)

    def __len__(self):
        return self._core.n_entries()

    def reconstruct(self, now=None):
        """Approximate event log built from consecutive stored ranks (see EH)."""
        now = self.last_arrival if now is None else now
        events = []
        if now is None or self.total == 0:
            return events
        cutoff = now - self.window
        fpos, frank = self._core.floor_pos, self._core.floor_rank
        points = []
        for p, q in self._core.entries():
            if p <= cutoff:
                if q > frank:
                    fpos, frank = p, q
            else:
                points.append((p, q))
        prev_p, prev_q = fpos, frank
        for p, q in points:
            if q <= prev_q:
                continue
            size = q - prev_q
            lo = size // 2
            if lo:
                events.append((prev_p, lo, 1))
            events.append((p, size - lo, 0))
            prev_p, prev_q = p, q
        return events

    def model_bits(self):
        if self.total == 0:
            return 0
        cfg = self.config
        per_entry = _bits(cfg.window) + _bits(cfg.capacity)
        return len(self) * per_entry + 2 * _bits(cfg.window) + 2 * _bits(cfg.capacity)

    def nbytes(self):
        return self._core.nbytes()

    def to_bytes(self):
        c = self._core
        parts = [self._header(), struct.pack("<qqqqIB", c.total, c.last_arrival, c.floor_pos,
                                             c.floor_rank, c.cursor, self.top + 1)]
        for lv in c.level_entries():
            flat = [x for e in lv for x in e]
            parts.append(struct.pack(f"<I{len(flat)}q", len(lv), *flat))
        return b"".join(parts)

    @classmethod
    def _from_payload(cls, config, buf, off):
        total, la, fpos, frank, cursor, nlev = struct.unpack_from("<qqqqIB", buf, off)
        off += struct.calcsize("<qqqqIB")
        levels = []
        for _ in range(nlev):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            flat = struct.unpack_from(f"<{2 * n}q", buf, off)
            off += 16 * n
            levels.append(list(zip(flat[0::2], flat[1::2])))
        dw = cls(config)
        if nlev != dw.top + 1:
            raise FormatError("wave level count does not match its configuration")
        dw._core.load(levels, total, la, fpos, frank, cursor)
        return dw, off

    def copy(self):
        return load_synopsis(self.to_bytes())


def _event_ids(event_id, count):
    if count == 1:
        return (event_id,)
    return tuple(event_id if j == 0 else splitmix64(event_id ^ (j * 0x9E3779B97F4A7C15 & MASK64))
                 for j in range(count))


class RandomizedWave(_Synopsis):
    """Hash-sampled window counter with an ``(eps, delta)`` guarantee.

    Level ``l`` keeps the most recent ``ceil(c / eps**2)`` events whose hash
    has at least ``l`` trailing zeros. Independent copies (``ceil(ln 1/delta)``)
    are combined by median. Events carry 64-bit ids; two waves built from the
    same events with the same seed hold identical contents.
    """

    kind = KIND_RW

    def __init__(self, config):
        super().__init__(config)
        self.cap = math.ceil(round(config.c / (config.eps ** 2), 9))
        self.copies = max(1, math.ceil(math.log(1.0 / config.delta)))
        nl = 1
        while self.cap << (nl - 1) < 2 * config.capacity:
            nl += 1
        self.nlevels = nl
        rng = random.Random(config.seed)
        self.hashes = [(rng.getrandbits(128) | 1, rng.getrandbits(128)) for _ in range(self.copies)]
        self.levels = [[deque() for _ in range(nl)] for _ in range(self.copies)]
        self.evicted = [[NO_TIME] * nl for _ in range(self.copies)]
        self._last = NO_TIME
        self._auto = 0

    @property
    def last_arrival(self):
        return None if self._last == NO_TIME else self._last

    def level_of(self, copy, event_id):
        a, b = self.hashes[copy]
        h = ((a * event_id + b) & MASK128) >> 64
        return trailing_zeros(h, self.nlevels - 1)

    def insert(self, at, count=1, event_id=None):
        if at < self._last:
            raise OrderingError(f"timestamp {at} precedes last arrival {self._last}")
        if count < 1:
            raise ValueError("count must be >= 1")
        if event_id is None:
            self._auto += 1
            event_id = splitmix64((self.config.seed << 32) ^ self._auto)
        self._last = at
        self.expire(at)
        cap = self.cap
        for eid in _event_ids(event_id & MASK64, count):
            for ci in range(self.copies):
                levels = self.levels[ci]
                ev = self.evicted[ci]
                for lvl in range(self.level_of(ci, eid) + 1):
                    q = levels[lvl]
                    q.append((at, eid))
                    if len(q) > cap:
                        p, _ = q.popleft()
                        if p > ev[lvl]:
                            ev[lvl] = p

    def expire(self, now):
        cutoff = now - self.window
        for levels, ev in zip(self.levels, self.evicted):
            for lvl, q in enumerate(levels):
                while q and q[0][0] <= cutoff:
                    q.popleft()
                if ev[lvl] <= cutoff:
                    ev[lvl] = NO_TIME

    def copy_estimate(self, copy, r, now):
        s = now - r
        levels = self.levels[copy]
        ev = self.evicted[copy]
        chosen = len(levels) - 1
        for lvl in range(len(levels)):
            if ev[lvl] <= s:
                chosen = lvl
                break
        q = levels[chosen]
        inside = len(q) - bisect_right(q, (s, MASK64 + 1))
        return inside << chosen

    def query(self, r, now=None):
        now = self._check_range(r, now)
        if now is None:
            return 0
        return statistics.median(self.copy_estimate(ci, r, now) for ci in range(self.copies))

    def contents(self):
        """Per copy, per level: list of ``(ts, event_id)`` - used for equality checks."""
        return [[list(q) for q in levels] for levels in self.levels]

    def __len__(self):
        return sum(len(q) for levels in self.levels for q in levels)

    def model_bits(self):
        if len(self) == 0:
            return 0
        cfg = self.config
        per_entry = _bits(cfg.window) + _bits(cfg.capacity)
        return len(self) * per_entry + self.copies * self.nlevels * _bits(cfg.window)

    def nbytes(self):
        # tuple + two ints per entry, deques and evicted markers per level
        return 72 * len(self) + 80 * self.copies * self.nlevels + 64

    def to_bytes(self):
        cfg = self.config
        parts = [self._header(),
                 struct.pack("<ddQqQBB", cfg.delta, cfg.c, cfg.seed & MASK64, self._last,
                             self._auto, self.copies, self.nlevels)]
        for levels, ev in zip(self.levels, self.evicted):
            for q, e in zip(levels, ev):
                flat = [x for item in q for x in item]
                parts.append(struct.pack("<qI" + "qQ" * len(q), e, len(q), *flat))
        return b"".join(parts)

    @classmethod
    def _from_payload(cls, config, buf, off):
        fmt = "<ddQqQBB"
        delta, c, seed, last, auto, copies, nlevels = struct.unpack_from(fmt, buf, off)
        off += struct.calcsize(fmt)
        rw = cls(config.with_(delta=delta, c=c, seed=seed))
        if copies != rw.copies or nlevels != rw.nlevels:
            raise FormatError("randomized wave shape does not match its configuration")
        rw._last = last
        rw._auto = auto
        for ci in range(copies):
            for lvl in range(nlevels):
                e, n = struct.unpack_from("<qI", buf, off)
                off += 12
                flat = struct.unpack_from("<" + "qQ" * n, buf, off)
                off += 16 * n
                rw.evicted[ci][lvl] = e
                rw.levels[ci][lvl] = deque(zip(flat[0::2], flat[1::2]))
        return rw, off

    def copy(self):
        return load_synopsis(self.to_bytes())


_KIND_CLASSES = {KIND_EH: ExponentialHistogram, KIND_DW: DeterministicWave, KIND_RW: RandomizedWave}
BACKENDS = {"eh": ExponentialHistogram, "dw": DeterministicWave, "rw": RandomizedWave}


def make_synopsis(backend, config, impl=None):
    """Fresh synopsis for ``backend`` in {"eh", "dw", "rw"}; ``impl`` picks the kernel."""
    try:
        cls = BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown backend {backend!r}") from None
    if cls is RandomizedWave:
        return cls(config)
    return cls(config, impl)


def read_synopsis(buf, off=0):
    """Decode one frame starting at ``off``; returns ``(synopsis, next_offset)``."""
    try:
        magic, version, kind, mode, eps, window, capacity = _HEAD.unpack_from(buf, off)
    except struct.error as exc:
        raise FormatError("truncated synopsis frame") from exc
    if magic != FRAME_MAGIC:
        raise FormatError(f"bad synopsis magic {magic!r}")
    if version != FRAME_VERSION:
        raise FormatError(f"unsupported synopsis frame version {version}")
    if kind not in _KIND_CLASSES or mode not in MODE_NAMES:
        raise FormatError("unknown synopsis kind or mode")
    config = WindowConfig(window=window, mode=MODE_NAMES[mode], eps=eps, capacity=capacity)
    try:
        return _KIND_CLASSES[kind]._from_payload(config, buf, off + _HEAD.size)
    except struct.error as exc:
        raise FormatError("truncated synopsis payload") from exc


def load_synopsis(buf):
    syn, off = read_synopsis(buf, 0)
    if off != len(buf):
        raise FormatError("trailing bytes after synopsis frame")
    return syn


# -- merging ---------------------------------------------------------------

def _merge_checks(inputs, cls):
    if not inputs:
        raise ValueError("nothing to merge")
    for x in inputs:
        if not isinstance(x, cls):
            raise IncompatibleError(f"cannot merge {type(x).__name__} with {cls.__name__}")
        if x.config.mode != TIME:
            raise UnsupportedMergeError(
                "count-based windows cannot be merged: the order of non-events is lost")
    if len({x.window for x in inputs}) != 1:
        raise IncompatibleError("inputs cover different window lengths")
    arrivals = [x.last_arrival for x in inputs if x.last_arrival is not None]
    return max(arrivals) if arrivals else None


def _replay(inputs, target, now):
    """Insert every input's reconstructed events into ``target`` in timestamp order."""
    events = []
    for idx, syn in enumerate(inputs):
        for seq, (ts, count, kind) in enumerate(syn.reconstruct(now)):
            events.append((ts, kind, idx, seq, count))
    events.sort()
    for ts, _, _, _, count in events:
        target.insert(ts, count)
    if now is not None:
        target._core.last_arrival = max(target._core.last_arrival, now)
        target.expire(now)
    return target


def eh_merge(inputs, eps_prime):
    """Order-preserving merge of time-based exponential histograms.

    Answers on the union stream carry relative error at most
    ``eps + eps_prime + eps * eps_prime`` (``eps`` = largest input eps).
    """
    now = _merge_checks(inputs, ExponentialHistogram)
    base = inputs[0].config
    cfg = base.with_(eps=eps_prime, capacity=sum(x.config.capacity for x in inputs))
    return _replay(inputs, ExponentialHistogram(cfg), now)


def wave_merge(inputs, eps_prime):
    """Order-preserving merge of time-based deterministic waves (same bound as EH)."""
    now = _merge_checks(inputs, DeterministicWave)
    base = inputs[0].config
    cfg = base.with_(eps=eps_prime, capacity=sum(x.config.capacity for x in inputs))
    return _replay(inputs, DeterministicWave(cfg), now)


def rwave_merge(inputs):
    """Lossless merge of randomized waves sharing configuration and seed.

    The result equals a wave built directly on the union stream with capacity
    equal to the summed input capacities, provided no input saw more arrivals
    per window than its own capacity (its deepest level then still holds every
    in-window event that deeper output levels need).
    """
    if not inputs:
        raise ValueError("nothing to merge")
    first = inputs[0].config
    for x in inputs:
        if not isinstance(x, RandomizedWave):
            raise IncompatibleError("randomized waves merge only with randomized waves")
        cfg = x.config
        if (cfg.window, cfg.mode, cfg.eps, cfg.delta, cfg.c, cfg.seed) != (
                first.window, first.mode, first.eps, first.delta, first.c, first.seed):
            raise IncompatibleError("randomized waves differ in configuration or hash seed")
    out = RandomizedWave(first.with_(capacity=sum(x.config.capacity for x in inputs)))
    arrivals = [x._last for x in inputs if x._last != NO_TIME]
    now = max(arrivals) if arrivals else None
    cutoff = None if now is None else now - first.window
    for ci in range(out.copies):
        for lvl in range(out.nlevels):
            merged = []
            ev = NO_TIME
            for x in inputs:
                src = min(lvl, x.nlevels - 1)
                items = x.levels[ci][src]
                if src < lvl:
                    items = [it for it in items if out.level_of(ci, it[1]) >= lvl]
                merged.extend(items)
                ev = max(ev, x.evicted[ci][src])
            merged.sort(key=lambda it: it[0])
            if cutoff is not None:
                merged = [it for it in merged if it[0] > cutoff]
            if len(merged) > out.cap:
                ev = max(ev, merged[-out.cap - 1][0])
                merged = merged[-out.cap:]
            if cutoff is not None and ev <= cutoff:
                ev = NO_TIME
            out.levels[ci][lvl] = deque(merged)
            out.evicted[ci][lvl] = ev
    if now is not None:
        out._last = now
    return out


def merge_synopses(inputs, eps_prime=None):
    """Dispatch to the backend's merge; ``eps_prime`` defaults to the largest input eps."""
    if not inputs:
        raise ValueError("nothing to merge")
    if isinstance(inputs[0], RandomizedWave):
        return rwave_merge(inputs)
    if eps_prime is None:
        eps_prime = max(x.eps for x in inputs)
    if isinstance(inputs[0], DeterministicWave):
        return wave_merge(inputs, eps_prime)
    return eh_merge(inputs, eps_prime)
