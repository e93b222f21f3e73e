"""Exact sliding-window answers by brute force, for checking the sketches."""
from __future__ import annotations

from bisect import bisect_right
from collections import Counter

from .errors import OrderingError, RangeError
from .windows import COUNT, TIME, in_window


class ExactWindowStore:
    """Every event kept as ``(ts, key, value)``.

    Uses the same in-range predicate as the synopses. In count mode the
    timestamp of an event is its arrival ordinal (advanced by ``value``).
    """

    def __init__(self, window, mode=TIME):
        if window <= 0:
            raise ValueError("window must be positive")
        self.window = window
        self.mode = mode
        self.times = []
        self.keys = []
        self.values = []
        self._cache = {}

    @classmethod
    def from_events(cls, events, window, mode=TIME):
        st = cls(window, mode)
        for ev in events:
            st.add(*ev)
        return st

    @property
    def clock(self):
        return self.times[-1] if self.times else None

    def add(self, at, key, value=1):
        if self.mode == COUNT:
            at = (self.clock or 0) + value
        elif self.times and at < self.times[-1]:
            raise OrderingError(f"timestamp {at} precedes last arrival {self.times[-1]}")
        self.times.append(at)
        self.keys.append(key)
        self.values.append(value)
        self._cache.clear()

    def __len__(self):
        return len(self.times)

    def _resolve(self, r, now):
        if r is None:
            r = self.window
        if not 0 < r <= self.window:
            raise RangeError(f"range {r} outside (0, {self.window}]")
        return r, self.clock if now is None else now

    def counts(self, r=None, now=None):
        """Exact per-key frequency in range, cached per ``(r, now)``."""
        r, now = self._resolve(r, now)
        hit = self._cache.get((r, now))
        if hit is not None:
            return hit
        c = Counter()
        if now is not None:
            lo = bisect_right(self.times, now - r)
            hi = bisect_right(self.times, now)
            for i in range(lo, hi):
                if in_window(self.times[i], now, r):
                    c[self.keys[i]] += self.values[i]
        self._cache[(r, now)] = c
        return c

    def events(self):
        return list(zip(self.times, self.keys, self.values))


def oracle_frequency(store, key, r=None, now=None):
    return store.counts(r, now).get(key, 0)


def oracle_l1(store, r=None, now=None):
    return sum(store.counts(r, now).values())


def oracle_inner(a, b, r=None, now=None):
    if now is None:
        clocks = [c for c in (a.clock, b.clock) if c is not None]
        now = max(clocks) if clocks else None
    ca = a.counts(r, now)
    cb = ca if b is a else b.counts(r, now)
    if len(cb) < len(ca):
        ca, cb = cb, ca
    return sum(v * cb.get(k, 0) for k, v in ca.items())


def oracle_self_join(store, r=None, now=None):
    return sum(v * v for v in store.counts(r, now).values())


def oracle_heavy(store, phi, r=None, now=None, absolute=False):
    """Keys whose exact frequency is at least ``phi`` (fraction of L1 unless absolute)."""
    c = store.counts(r, now)
    thresh = phi if absolute else phi * sum(c.values())
    return {k: v for k, v in c.items() if v >= thresh}


def oracle_range(store, lo, hi, r=None, now=None):
    return sum(v for k, v in store.counts(r, now).items() if lo <= k <= hi)
