"""Pure-Python hot kernels.

Mirrors ``_ckernels.pyx`` exactly; the compiled module is preferred at import
time (see ``ecmsketch.kernels``). Both must produce identical state for
identical input sequences.
"""
from bisect import bisect_right
from collections import deque

from .errors import CapacityError, OrderingError

NO_TIME = -(1 << 63)
MASK64 = (1 << 64) - 1
MAX_LEVELS = 64


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def row_indices(key64, mults, adds, width):
    """Column of ``key64`` in every row: multiply-shift to 32 bits, then scale to width."""
    out = []
    for a, b in zip(mults, adds):
        h = (((a * key64 + b) & MASK64) >> 32)
        out.append((h * width) >> 32)
    return out


def trailing_zeros(x, cap):
    if x == 0:
        return cap
    tz = (x & -x).bit_length() - 1
    return tz if tz < cap else cap


class EHCore:
    """Exponential histogram bucket store.

    Level ``i`` holds end timestamps of buckets of size ``2**i``, oldest first.
    Every bucket on level ``i+1`` is older than every bucket on level ``i``.
    """

    def __init__(self, k, window):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.window = window
        self.levels = []
        self.total = 0
        self.last_arrival = NO_TIME
        self.start_floor = NO_TIME

    def insert(self, at, count=1):
        if at < self.last_arrival:
            raise OrderingError(f"timestamp {at} precedes last arrival {self.last_arrival}")
        if count < 1:
            raise ValueError("count must be >= 1")
        self.last_arrival = at
        self.expire(at)
        if self.total == 0:
            self.start_floor = at
        levels = self.levels
        limit = self.k + 1
        if not levels:
            levels.append(deque())
        for _ in range(count):
            levels[0].append(at)
            self.total += 1
            lvl = 0
            while len(levels[lvl]) > limit:
                q = levels[lvl]
                q.popleft()
                newer = q.popleft()
                if lvl + 1 == len(levels):
                    if lvl + 1 >= MAX_LEVELS:
                        raise CapacityError("exponential histogram level overflow")
                    levels.append(deque())
                levels[lvl + 1].append(newer)
                lvl += 1

    def expire(self, now):
        cutoff = now - self.window
        levels = self.levels
        top = len(levels) - 1
        while top >= 0:
            q = levels[top]
            while q and q[0] <= cutoff:
                self.start_floor = q.popleft()
                self.total -= 1 << top
            if q:
                break
            levels.pop()
            top -= 1

    def query(self, r, now):
        s = now - r
        est = 0
        levels = self.levels
        nlev = len(levels)
        for lvl in range(nlev):
            q = levels[lvl]
            n = len(q)
            if n == 0:
                continue
            if q[0] > s:
                est += n << lvl
                continue
            inside = n - bisect_right(q, s)
            if inside == 0:
                # oldest in-range bucket was the newest one of a lower level
                return self._straddle(est, lvl)
            est += (inside - 1) << lvl
            return est + _half_up(1 << lvl)
        # every stored bucket ends inside the range; oldest one may straddle
        if est == 0:
            return 0
        top = nlev - 1
        size = 1 << top
        if self.start_floor > s:
            return est
        return est - size + _half_up(size)

    def _straddle(self, est, lvl):
        # the oldest in-range bucket is the oldest bucket of some level < lvl
        for j in range(lvl - 1, -1, -1):
            if self.levels[j]:
                size = 1 << j
                return est - size + _half_up(size)
        return est

    def buckets(self):
        """All buckets as ``(size, end)``, oldest first."""
        out = []
        for lvl in range(len(self.levels) - 1, -1, -1):
            size = 1 << lvl
            out.extend((size, e) for e in self.levels[lvl])
        return out

    def level_ends(self):
        return [list(q) for q in self.levels]

    def load(self, level_ends, last_arrival, start_floor):
        self.levels = [deque(lv) for lv in level_ends]
        while self.levels and not self.levels[-1]:
            self.levels.pop()
        self.total = sum(len(q) << i for i, q in enumerate(self.levels))
        self.last_arrival = last_arrival
        self.start_floor = start_floor

    def n_buckets(self):
        return sum(len(q) for q in self.levels)

    def nbytes(self):
        # 8 bytes per stored end timestamp plus per-level bookkeeping
        return 8 * self.n_buckets() + 16 * len(self.levels) + 32


def _half_up(size):
    return (size + 1) >> 1


class DWCore:
    """Deterministic wave store.

    The bit of rank ``q`` is filed once, on level ``min(tz(q), top)``; each
    level keeps its ``m`` most recent entries as ``(position, rank)``.
    """

    def __init__(self, m, top, window):
        if m < 3:
            raise ValueError("m must be >= 3")
        self.m = m
        self.top = top
        self.window = window
        self.pos = [deque() for _ in range(top + 1)]
        self.rank = [deque() for _ in range(top + 1)]
        self.total = 0
        self.last_arrival = NO_TIME
        self.floor_pos = NO_TIME
        self.floor_rank = 0
        self.cursor = 0

    def insert(self, at, count=1):
        if at < self.last_arrival:
            raise OrderingError(f"timestamp {at} precedes last arrival {self.last_arrival}")
        if count < 1:
            raise ValueError("count must be >= 1")
        if self.total == 0 and self.floor_pos == NO_TIME:
            self.floor_pos = at
        self.last_arrival = at
        cutoff = at - self.window
        base = self.total
        if count == 1:
            q = base + 1
            self._push(trailing_zeros(q, self.top), at, q, cutoff)
        else:
            for lvl in range(self.top + 1):
                for q in _ranks_on_level(base, count, lvl, self.top, self.m):
                    self._push(lvl, at, q, cutoff)
        self.total = base + count
        # round-robin expiry keeps the worst-case update cost constant
        lvl = self.cursor
        self._expire_level(lvl, cutoff)
        self.cursor = lvl + 1 if lvl < self.top else 0

    def _push(self, lvl, at, q, cutoff):
        pq = self.pos[lvl]
        rq = self.rank[lvl]
        if len(pq) == self.m:
            if lvl == self.top and pq[0] > cutoff:
                raise CapacityError("arrivals in window exceed the wave's capacity")
            p = pq.popleft()
            r = rq.popleft()
            if p <= cutoff and r > self.floor_rank:
                self.floor_pos = p
                self.floor_rank = r
        pq.append(at)
        rq.append(q)

    def _expire_level(self, lvl, cutoff):
        pq = self.pos[lvl]
        rq = self.rank[lvl]
        while pq and pq[0] <= cutoff:
            p = pq.popleft()
            r = rq.popleft()
            if r > self.floor_rank:
                self.floor_pos = p
                self.floor_rank = r

    def expire(self, now):
        cutoff = now - self.window
        for lvl in range(self.top + 1):
            self._expire_level(lvl, cutoff)

    def bounds(self, r, now):
        """Ranks ``(z1, z2)`` of the closest stored entries outside/inside the range."""
        s = now - r
        z1 = self.floor_rank
        z2 = 0
        for lvl in range(self.top + 1):
            pq = self.pos[lvl]
            if not pq:
                continue
            i = bisect_right(pq, s)
            rq = self.rank[lvl]
            if i > 0 and rq[i - 1] > z1:
                z1 = rq[i - 1]
            if i < len(pq) and (z2 == 0 or rq[i] < z2):
                z2 = rq[i]
        return z1, z2

    def query(self, r, now):
        z1, z2 = self.bounds(r, now)
        if z2 == 0:
            return 0
        lo = self.total - z2 + 1
        hi = self.total - z1
        return (lo + hi + 1) >> 1

    def entries(self):
        """Union of stored entries as ``(position, rank)`` sorted by rank."""
        seen = {}
        for lvl in range(self.top + 1):
            for p, q in zip(self.pos[lvl], self.rank[lvl]):
                seen[q] = p
        return sorted(((p, q) for q, p in seen.items()), key=lambda e: e[1])

    def level_entries(self):
        return [list(zip(self.pos[i], self.rank[i])) for i in range(self.top + 1)]

    def load(self, level_entries, total, last_arrival, floor_pos, floor_rank, cursor):
        self.pos = [deque(p for p, _ in lv) for lv in level_entries]
        self.rank = [deque(q for _, q in lv) for lv in level_entries]
        self.total = total
        self.last_arrival = last_arrival
        self.floor_pos = floor_pos
        self.floor_rank = floor_rank
        self.cursor = cursor

    def n_entries(self):
        return sum(len(p) for p in self.pos)

    def nbytes(self):
        return 16 * self.n_entries() + 32 * (self.top + 1) + 48


def _ranks_on_level(base, count, lvl, top, m):
    """Last ``m`` ranks in (base, base+count] filed on ``lvl``, ascending."""
    hi = base + count
    step = 1 << lvl
    if lvl == top:
        # multiples of 2**top
        last = hi - (hi % step)
        stride = step
    else:
        # odd multiples of 2**lvl
        stride = step << 1
        last = hi - ((hi - step) % stride)
        if hi < step:
            return []
    out = []
    q = last
    while q > base and len(out) < m:
        if q > 0:
            out.append(q)
        q -= stride
    out.reverse()
    return out
