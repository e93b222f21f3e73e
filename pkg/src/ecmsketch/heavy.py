"""Windowed heavy hitters and range counts over a power-of-two key universe.

Level ``i`` holds a sketch of the keys ``x >> i``, so one node of level ``i``
counts a dyadic block of ``2**i`` keys. Detection walks down from the two
top-level blocks and only opens a block whose estimate clears the threshold.
"""
from __future__ import annotations

import math
import struct

from .errors import DomainError, FormatError
from .sketch import POINT, EcmSketch, plan
from .windows import TIME, WindowConfig, load_synopsis, make_synopsis

STACK_MAGIC = b"ECMD"
STACK_VERSION = 1
_HEAD = struct.Struct("<4sHBdB")


def dyadic_cover(lo, hi, bits):
    """Minimal set of disjoint dyadic blocks ``(level, index)`` covering ``[lo, hi]``."""
    if not 0 <= lo <= hi < (1 << bits):
        raise DomainError(f"range [{lo}, {hi}] outside universe of size {1 << bits}")
    out = []
    while lo <= hi:
        lvl = 0
        # grow while aligned, inside [lo, hi] and below the top sketch level
        while (lvl + 1 < bits and lo % (1 << (lvl + 1)) == 0
               and lo + (1 << (lvl + 1)) - 1 <= hi):
            lvl += 1
        out.append((lvl, lo >> lvl))
        lo += 1 << lvl
    return out


class DyadicStack:
    """One ECM-sketch per dyadic level over keys ``0 .. 2**bits - 1``.

    Each level is planned for ``eps`` and ``delta * phi / (2 * bits)``, where
    ``phi`` is the smallest fraction the stack will be asked to detect.
    ``l1_source="window"`` keeps a separate window counter for the number of
    arrivals instead of averaging the rows of level 0.
    """

    def __init__(self, bits, eps, delta, window, phi=0.01, backend="eh", mode=TIME,
                 capacity=None, seed=0, l1_source="rows", impl=None):
        if bits < 1:
            raise ValueError("bits must be >= 1")
        if not 0 < phi < 1:
            raise ValueError("phi must lie in (0, 1)")
        if l1_source not in ("rows", "window"):
            raise ValueError("l1_source must be 'rows' or 'window'")
        self.bits = bits
        self.phi = phi
        self.l1_source = l1_source
        self.plan = plan(eps, level_delta(delta, phi, bits), POINT, backend)
        self.levels = [EcmSketch(self.plan, window, mode=mode, capacity=capacity,
                                 seed=seed + i, impl=impl)
                       for i in range(bits)]
        self.counter = None
        if l1_source == "window":
            cfg = WindowConfig(window, mode, eps=self.plan.eps_sw, capacity=capacity,
                               delta=self.plan.delta_sw or delta, seed=seed)
            self.counter = make_synopsis(backend, cfg, impl)

    @property
    def universe(self):
        return 1 << self.bits

    @property
    def window(self):
        return self.levels[0].window

    def hh_add(self, x, at=None, value=1):
        if not 0 <= x < self.universe:
            raise DomainError(f"key {x} outside [0, {self.universe})")
        for i, sk in enumerate(self.levels):
            sk.add(x >> i, value, at)
        if self.counter is not None:
            self.counter.insert(self.levels[0].clock, value)

    add = hh_add

    def l1(self, r=None, now=None):
        """Estimated number of arrivals in range."""
        if self.counter is None:
            return self.levels[0].l1(r, now)
        r, now = self.levels[0]._resolve(r, now)
        return 0 if now is None else self.counter.query(r, now)

    def node(self, level, index, r=None, now=None):
        return self.levels[level].point_query(index, r, now)

    def hh_detect(self, phi, r=None, now=None, absolute=False):
        """Items whose estimated frequency clears ``phi`` (a fraction of L1, or a count).

        Returns ``{item: estimate}``.
        """
        if phi <= 0 or (not absolute and phi >= 1):
            raise ValueError("phi must be positive, and below 1 when fractional")
        r, now = self.levels[0]._resolve(r, now)
        if now is None:
            return {}
        thresh = phi if absolute else phi * self.l1(r, now)
        top = self.bits - 1
        frontier = [0, 1]
        for lvl in range(top, 0, -1):
            sk = self.levels[lvl]
            nxt = []
            for idx in frontier:
                if sk.point_query(idx, r, now) >= thresh:
                    nxt.extend((2 * idx, 2 * idx + 1))
            frontier = nxt
            if not frontier:
                return {}
        out = {}
        base = self.levels[0]
        for x in frontier:
            est = base.point_query(x, r, now)
            if est >= thresh:
                out[x] = est
        return out

    def range_query(self, lo, hi, r=None, now=None):
        """Estimated arrivals with key in ``[lo, hi]``."""
        cover = dyadic_cover(lo, hi, self.bits)
        r, now = self.levels[0]._resolve(r, now)
        if now is None:
            return 0
        return sum(self.levels[lvl].point_query(idx, r, now) for lvl, idx in cover)

    def memory_report(self):
        reps = [sk.memory_report() for sk in self.levels]
        return {k: sum(rep[k] for rep in reps) for k in reps[0]}

    def to_bytes(self):
        parts = [_HEAD.pack(STACK_MAGIC, STACK_VERSION, self.bits, self.phi,
                            1 if self.counter is not None else 0)]
        frames = [sk.to_bytes() for sk in self.levels]
        if self.counter is not None:
            frames.append(self.counter.to_bytes())
        for f in frames:
            parts.append(struct.pack("<I", len(f)))
            parts.append(f)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf):
        try:
            magic, version, bits, phi, has_counter = _HEAD.unpack_from(buf, 0)
        except struct.error as exc:
            raise FormatError("truncated dyadic stack header") from exc
        if magic != STACK_MAGIC:
            raise FormatError(f"bad dyadic stack magic {magic!r}")
        if version != STACK_VERSION:
            raise FormatError(f"unsupported dyadic stack version {version}")
        off = _HEAD.size
        frames = []
        for _ in range(bits + has_counter):
            try:
                (n,) = struct.unpack_from("<I", buf, off)
            except struct.error as exc:
                raise FormatError("truncated dyadic stack body") from exc
            off += 4
            if off + n > len(buf):
                raise FormatError("truncated dyadic stack frame")
            frames.append(bytes(buf[off:off + n]))
            off += n
        if off != len(buf):
            raise FormatError("trailing bytes after dyadic stack")
        ds = cls.__new__(cls)
        ds.bits = bits
        ds.phi = phi
        ds.levels = [EcmSketch.from_bytes(f) for f in frames[:bits]]
        ds.plan = ds.levels[0].plan
        ds.counter = load_synopsis(frames[bits]) if has_counter else None
        ds.l1_source = "window" if has_counter else "rows"
        return ds


def level_delta(delta, phi, bits):
    """Per-level failure probability used when planning each sketch."""
    return delta * phi / (2 * bits)


def expected_levels(universe):
    """Number of dyadic levels for a power-of-two universe size."""
    bits = int(math.log2(universe))
    if 1 << bits != universe:
        raise ValueError("universe size must be a power of two")
    return bits
