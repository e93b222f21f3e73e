# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics match ``_pykernels`` exactly."""
from libc.stdlib cimport malloc, calloc, free
from libc.stdint cimport int64_t, uint64_t

from .errors import CapacityError, OrderingError

DEF MAXLEV = 64
cdef int64_t C_NO_TIME = -9223372036854775807 - 1
NO_TIME = C_NO_TIME


def splitmix64(uint64_t x):
    x = x + <uint64_t>0x9E3779B97F4A7C15
    x = (x ^ (x >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    x = (x ^ (x >> 27)) * <uint64_t>0x94D049BB133111EB
    return x ^ (x >> 31)


def row_indices(uint64_t key64, mults, adds, uint64_t width):
    cdef list out = []
    cdef uint64_t a, b, h
    cdef Py_ssize_t j, d = len(mults)
    for j in range(d):
        a = mults[j]
        b = adds[j]
        h = (a * key64 + b) >> 32
        out.append(<object>((h * width) >> 32))
    return out


cdef inline int64_t _half_up(int64_t size):
    return (size + 1) >> 1


cdef class EHCore:
    cdef public int k
    cdef public int64_t window
    cdef int cap
    cdef int64_t* ends
    cdef int head[MAXLEV]
    cdef int cnt[MAXLEV]
    cdef int nlev
    cdef public int64_t total
    cdef public int64_t last_arrival
    cdef public int64_t start_floor

    def __cinit__(self, int k, int64_t window):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.window = window
        self.cap = k + 2
        self.ends = <int64_t*>malloc(MAXLEV * self.cap * sizeof(int64_t))
        if self.ends == NULL:
            raise MemoryError()
        cdef int i
        for i in range(MAXLEV):
            self.head[i] = 0
            self.cnt[i] = 0
        self.nlev = 0
        self.total = 0
        self.last_arrival = C_NO_TIME
        self.start_floor = C_NO_TIME

    def __dealloc__(self):
        free(self.ends)

    cdef inline int64_t _get(self, int lvl, int i):
        return self.ends[lvl * self.cap + (self.head[lvl] + i) % self.cap]

    cdef inline void _push(self, int lvl, int64_t e):
        self.ends[lvl * self.cap + (self.head[lvl] + self.cnt[lvl]) % self.cap] = e
        self.cnt[lvl] += 1

    cdef inline int64_t _popleft(self, int lvl):
        cdef int64_t e = self.ends[lvl * self.cap + self.head[lvl]]
        self.head[lvl] = (self.head[lvl] + 1) % self.cap
        self.cnt[lvl] -= 1
        return e

    cpdef insert(self, int64_t at, int64_t count=1):
        if at < self.last_arrival:
            raise OrderingError(f"timestamp {at} precedes last arrival {self.last_arrival}")
        if count < 1:
            raise ValueError("count must be >= 1")
        self.last_arrival = at
        self.expire(at)
        if self.total == 0:
            self.start_floor = at
        if self.nlev == 0:
            self.nlev = 1
        cdef int64_t c, newer
        cdef int lvl
        cdef int limit = self.k + 1
        for c in range(count):
            self._push(0, at)
            self.total += 1
            lvl = 0
            while self.cnt[lvl] > limit:
                self._popleft(lvl)
                newer = self._popleft(lvl)
                if lvl + 1 == self.nlev:
                    if lvl + 1 >= MAXLEV:
                        raise CapacityError("exponential histogram level overflow")
                    self.nlev += 1
                self._push(lvl + 1, newer)
                lvl += 1

    cpdef expire(self, int64_t now):
        cdef int64_t cutoff = now - self.window
        cdef int top = self.nlev - 1
        while top >= 0:
            while self.cnt[top] > 0 and self._get(top, 0) <= cutoff:
                self.start_floor = self._popleft(top)
                self.total -= (<int64_t>1) << top
            if self.cnt[top] > 0:
                break
            self.head[top] = 0
            self.nlev -= 1
            top -= 1

    cpdef int64_t query(self, int64_t r, int64_t now):
        cdef int64_t s = now - r
        cdef int64_t est = 0, size
        cdef int lvl, n, lo, hi, mid, inside, j
        for lvl in range(self.nlev):
            n = self.cnt[lvl]
            if n == 0:
                continue
            if self._get(lvl, 0) > s:
                est += (<int64_t>n) << lvl
                continue
            # first index with end > s
            lo = 0
            hi = n
            while lo < hi:
                mid = (lo + hi) >> 1
                if self._get(lvl, mid) <= s:
                    lo = mid + 1
                else:
                    hi = mid
            inside = n - lo
            if inside == 0:
                for j in range(lvl - 1, -1, -1):
                    if self.cnt[j] > 0:
                        size = (<int64_t>1) << j
                        return est - size + _half_up(size)
                return est
            est += (<int64_t>(inside - 1)) << lvl
            return est + _half_up((<int64_t>1) << lvl)
        if est == 0:
            return 0
        size = (<int64_t>1) << (self.nlev - 1)
        if self.start_floor > s:
            return est
        return est - size + _half_up(size)

    def buckets(self):
        out = []
        cdef int lvl, i
        for lvl in range(self.nlev - 1, -1, -1):
            for i in range(self.cnt[lvl]):
                out.append((1 << lvl, self._get(lvl, i)))
        return out

    def level_ends(self):
        cdef int lvl, i
        return [[self._get(lvl, i) for i in range(self.cnt[lvl])] for lvl in range(self.nlev)]

    def load(self, level_ends, int64_t last_arrival, int64_t start_floor):
        cdef int lvl
        levels = [list(lv) for lv in level_ends]
        # wraparound is off: no negative indexing here
        while levels and not levels[len(levels) - 1]:
            levels.pop()
        if len(levels) > MAXLEV:
            raise ValueError("too many levels")
        for lvl in range(MAXLEV):
            self.head[lvl] = 0
            self.cnt[lvl] = 0
        self.total = 0
        for lvl, lv in enumerate(levels):
            if len(lv) > self.cap:
                raise ValueError("level holds more buckets than k+2")
            for e in lv:
                self._push(lvl, e)
            self.total += (<int64_t>len(lv)) << lvl
        self.nlev = len(levels)
        self.last_arrival = last_arrival
        self.start_floor = start_floor

    def n_buckets(self):
        cdef int lvl, n = 0
        for lvl in range(self.nlev):
            n += self.cnt[lvl]
        return n

    def nbytes(self):
        return 8 * self.n_buckets() + 16 * self.nlev + 32


cdef inline int _tz(uint64_t x, int cap):
    cdef int t = 0
    if x == 0:
        return cap
    while (x & 1) == 0 and t < cap:
        x >>= 1
        t += 1
    return t


cdef class DWCore:
    cdef public int m
    cdef public int top
    cdef public int64_t window
    cdef int64_t* pbuf
    cdef int64_t* rbuf
    cdef int head[MAXLEV]
    cdef int cnt[MAXLEV]
    cdef public int64_t total
    cdef public int64_t last_arrival
    cdef public int64_t floor_pos
    cdef public int64_t floor_rank
    cdef public int cursor

    def __cinit__(self, int m, int top, int64_t window):
        if m < 3:
            raise ValueError("m must be >= 3")
        if top >= MAXLEV or top < 0:
            raise ValueError("bad level count")
        self.m = m
        self.top = top
        self.window = window
        self.pbuf = <int64_t*>malloc((top + 1) * m * sizeof(int64_t))
        self.rbuf = <int64_t*>malloc((top + 1) * m * sizeof(int64_t))
        if self.pbuf == NULL or self.rbuf == NULL:
            raise MemoryError()
        cdef int i
        for i in range(MAXLEV):
            self.head[i] = 0
            self.cnt[i] = 0
        self.total = 0
        self.last_arrival = C_NO_TIME
        self.floor_pos = C_NO_TIME
        self.floor_rank = 0
        self.cursor = 0

    def __dealloc__(self):
        free(self.pbuf)
        free(self.rbuf)

    cdef inline int _idx(self, int lvl, int i):
        return lvl * self.m + (self.head[lvl] + i) % self.m

    cdef int _push(self, int lvl, int64_t at, int64_t q, int64_t cutoff) except -1:
        cdef int i
        cdef int64_t p, r
        if self.cnt[lvl] == self.m:
            i = self._idx(lvl, 0)
            if lvl == self.top and self.pbuf[i] > cutoff:
                raise CapacityError("arrivals in window exceed the wave's capacity")
            p = self.pbuf[i]
            r = self.rbuf[i]
            self.head[lvl] = (self.head[lvl] + 1) % self.m
            self.cnt[lvl] -= 1
            if p <= cutoff and r > self.floor_rank:
                self.floor_pos = p
                self.floor_rank = r
        i = self._idx(lvl, self.cnt[lvl])
        self.pbuf[i] = at
        self.rbuf[i] = q
        self.cnt[lvl] += 1
        return 0

    cdef void _expire_level(self, int lvl, int64_t cutoff):
        cdef int i
        while self.cnt[lvl] > 0:
            i = self._idx(lvl, 0)
            if self.pbuf[i] > cutoff:
                break
            if self.rbuf[i] > self.floor_rank:
                self.floor_pos = self.pbuf[i]
                self.floor_rank = self.rbuf[i]
            self.head[lvl] = (self.head[lvl] + 1) % self.m
            self.cnt[lvl] -= 1

    cpdef insert(self, int64_t at, int64_t count=1):
        if at < self.last_arrival:
            raise OrderingError(f"timestamp {at} precedes last arrival {self.last_arrival}")
        if count < 1:
            raise ValueError("count must be >= 1")
        if self.total == 0 and self.floor_pos == C_NO_TIME:
            self.floor_pos = at
        self.last_arrival = at
        cdef int64_t cutoff = at - self.window
        cdef int64_t base = self.total, q, hi, step, stride, last
        cdef int lvl, taken
        if count == 1:
            q = base + 1
            self._push(_tz(<uint64_t>q, self.top), at, q, cutoff)
        else:
            hi = base + count
            for lvl in range(self.top + 1):
                step = (<int64_t>1) << lvl
                if lvl == self.top:
                    stride = step
                    last = hi - (hi % step)
                else:
                    if hi < step:
                        continue
                    stride = step << 1
                    last = hi - ((hi - step) % stride)
                # walk back to the first of the last m ranks, then push ascending
                q = last
                taken = 0
                while q > base and q > 0 and taken < self.m:
                    taken += 1
                    q -= stride
                q += stride
                while taken > 0:
                    self._push(lvl, at, q, cutoff)
                    q += stride
                    taken -= 1
        self.total = base + count
        lvl = self.cursor
        self._expire_level(lvl, cutoff)
        self.cursor = lvl + 1 if lvl < self.top else 0

    cpdef expire(self, int64_t now):
        cdef int64_t cutoff = now - self.window
        cdef int lvl
        for lvl in range(self.top + 1):
            self._expire_level(lvl, cutoff)

    def bounds(self, int64_t r, int64_t now):
        cdef int64_t s = now - r
        cdef int64_t z1 = self.floor_rank, z2 = 0
        cdef int lvl, n, lo, hi, mid
        for lvl in range(self.top + 1):
            n = self.cnt[lvl]
            if n == 0:
                continue
            lo = 0
            hi = n
            while lo < hi:
                mid = (lo + hi) >> 1
                if self.pbuf[self._idx(lvl, mid)] <= s:
                    lo = mid + 1
                else:
                    hi = mid
            if lo > 0 and self.rbuf[self._idx(lvl, lo - 1)] > z1:
                z1 = self.rbuf[self._idx(lvl, lo - 1)]
            if lo < n and (z2 == 0 or self.rbuf[self._idx(lvl, lo)] < z2):
                z2 = self.rbuf[self._idx(lvl, lo)]
        return z1, z2

    cpdef int64_t query(self, int64_t r, int64_t now):
        z1, z2 = self.bounds(r, now)
        if z2 == 0:
            return 0
        cdef int64_t lo = self.total - z2 + 1
        cdef int64_t hi = self.total - z1
        return (lo + hi + 1) >> 1

    def entries(self):
        seen = {}
        cdef int lvl, i, j
        for lvl in range(self.top + 1):
            for i in range(self.cnt[lvl]):
                j = self._idx(lvl, i)
                seen[self.rbuf[j]] = self.pbuf[j]
        return sorted(((p, q) for q, p in seen.items()), key=lambda e: e[1])

    def level_entries(self):
        cdef int lvl, i, j
        out = []
        for lvl in range(self.top + 1):
            lv = []
            for i in range(self.cnt[lvl]):
                j = self._idx(lvl, i)
                lv.append((self.pbuf[j], self.rbuf[j]))
            out.append(lv)
        return out

    def load(self, level_entries, int64_t total, int64_t last_arrival,
             int64_t floor_pos, int64_t floor_rank, int cursor):
        cdef int lvl, i
        if len(level_entries) != self.top + 1:
            raise ValueError("level count mismatch")
        for lvl in range(self.top + 1):
            self.head[lvl] = 0
            self.cnt[lvl] = 0
            lv = level_entries[lvl]
            if len(lv) > self.m:
                raise ValueError("level holds more than m entries")
            for p, q in lv:
                i = self._idx(lvl, self.cnt[lvl])
                self.pbuf[i] = p
                self.rbuf[i] = q
                self.cnt[lvl] += 1
        self.total = total
        self.last_arrival = last_arrival
        self.floor_pos = floor_pos
        self.floor_rank = floor_rank
        self.cursor = cursor

    def n_entries(self):
        cdef int lvl, n = 0
        for lvl in range(self.top + 1):
            n += self.cnt[lvl]
        return n

    def nbytes(self):
        return 16 * self.n_entries() + 32 * (self.top + 1) + 48
