"""Count-Min sketch whose counters are sliding-window synopses.

Each of the ``w x d`` counters is an independent window synopsis (EH, DW or
RW). An arrival of ``key`` at ``t`` is registered in one counter per row;
queries ask every row for its windowed count and take the minimum.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError, IncompatibleError, OrderingError, RangeError
from .hashing import key64, row_seeds
from .kernels import row_indices, splitmix64
from .windows import (
    COUNT,
    MODE_CODES,
    MODE_NAMES,
    TIME,
    WindowConfig,
    make_synopsis,
    merge_synopses,
    merged_error,
    read_synopsis,
)

POINT = "point"
INNER = "inner"
PROFILES = (POINT, INNER)
BACKEND_NAMES = ("eh", "dw", "rw")

SKETCH_MAGIC = b"ECMS"
SKETCH_VERSION = 1
_ENV = struct.Struct("<4sHBBBddddddIIQQQHdq")
HEADER_BYTES = 64


# -- planning ----------------------------------------------------------------

def point_split(eps):
    """``eps_sw = eps_cm`` minimising ``1/(eps_sw*eps_cm)`` under the point combination."""
    x = math.sqrt(1.0 + eps) - 1.0
    return x, x


def inner_split(eps):
    """Split for the inner-product combination ``sw^2 + 2 sw + cm (1+sw)^2 = eps``."""
    x = 9 + 9 * eps + math.sqrt(3) * math.sqrt(28 + 57 * eps + 30 * eps ** 2 + eps ** 3)
    cr = x ** (1.0 / 3.0)
    sw = -1 - (3 + 3 * eps) / (3 ** (4.0 / 3.0) * cr) + cr / 3 ** (2.0 / 3.0)
    cm = (eps - sw * sw - 2 * sw) / (1 + sw) ** 2
    return sw, cm


def rw_split(eps):
    """Split minimising ``1/(eps_cm * eps_sw^2)``, the randomized-wave memory."""
    root = math.sqrt(eps * eps + 10 * eps + 9)
    sw = (root + eps - 3) / 4
    cm = (3 * eps - root + 3) / (eps + root + 1)
    return sw, cm


def point_error(eps_sw, eps_cm):
    return eps_sw + eps_cm + eps_sw * eps_cm


def inner_error(eps_sw, eps_cm):
    return eps_sw ** 2 + 2 * eps_sw + eps_cm * (1 + eps_sw) ** 2


@dataclass(frozen=True)
class SketchPlan:
    eps: float
    delta: float
    profile: str
    backend: str
    eps_sw: float
    eps_cm: float
    delta_sw: float
    delta_cm: float
    width: int
    depth: int

    @property
    def randomized(self):
        return self.backend == "rw"

    def error(self, eps_sw=None):
        """Combined error bound for this profile, optionally with a different window error."""
        sw = self.eps_sw if eps_sw is None else eps_sw
        f = inner_error if self.profile == INNER else point_error
        return f(sw, self.eps_cm)


def plan(eps, delta, profile=POINT, backend="eh"):
    """Split ``(eps, delta)`` between the window synopses and the Count-Min grid."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if profile not in PROFILES:
        raise ValueError(f"profile must be one of {PROFILES}")
    if backend not in BACKEND_NAMES:
        raise ValueError(f"backend must be one of {BACKEND_NAMES}")
    if backend == "rw":
        if profile == INNER:
            raise ValueError("no inner-product split is defined for the randomized-wave backend")
        sw, cm = rw_split(eps)
        d_sw = d_cm = delta / 2
    else:
        sw, cm = point_split(eps) if profile == POINT else inner_split(eps)
        d_sw, d_cm = 0.0, delta
    width = max(1, math.ceil(math.e / cm))
    depth = max(1, math.ceil(math.log(1.0 / d_cm)))
    return SketchPlan(eps, delta, profile, backend, sw, cm, d_sw, d_cm, width, depth)


# -- the sketch ----------------------------------------------------------------

class EcmSketch:
    """``depth x width`` grid of window counters with seeded row hashes.

    In time mode every :meth:`add` needs a non-decreasing timestamp ``at``.
    In count mode the clock is the sketch-wide arrival ordinal and ``at`` is
    not accepted.
    """

    def __init__(self, plan, window, mode=TIME, capacity=None, seed=0, impl=None):
        self.plan = plan
        self.seed = seed
        self.config = WindowConfig(
            window=window, mode=mode, eps=plan.eps_sw, capacity=capacity,
            delta=plan.delta_sw if plan.randomized else plan.delta, seed=seed)
        self.width = plan.width
        self.depth = plan.depth
        self.mults, self.adds = row_seeds(seed, self.depth)
        self.counters = [[make_synopsis(plan.backend, self.config, impl) for _ in range(self.width)]
                         for _ in range(self.depth)]
        self.merge_depth = 0
        self.sw_error = plan.eps_sw
        self.clock = None

    @classmethod
    def from_params(cls, eps, delta, window, profile=POINT, backend="eh", **kw):
        return cls(plan(eps, delta, profile, backend), window, **kw)

    @property
    def window(self):
        return self.config.window

    @property
    def mode(self):
        return self.config.mode

    @property
    def backend(self):
        return self.plan.backend

    def token(self):
        """Everything two sketches must share to be composed or multiplied."""
        return (self.width, self.depth, self.seed, self.window, self.mode, self.backend)

    def columns(self, key):
        return row_indices(key64(key), self.mults, self.adds, self.width)

    def add(self, key, value=1, at=None, event_id=None):
        if value < 1:
            raise ValueError("value must be a positive integer")
        if self.mode == COUNT:
            if at is not None:
                raise ValueError("count-based sketches assign arrival ordinals themselves")
            at = (self.clock or 0) + value
        elif at is None:
            raise ValueError("time-based sketches need a timestamp")
        elif self.clock is not None and at < self.clock:
            raise OrderingError(f"timestamp {at} precedes last arrival {self.clock}")
        self.clock = at
        k = key64(key)
        cols = row_indices(k, self.mults, self.adds, self.width)
        if self.plan.randomized:
            eid = event_id if event_id is not None else _event_id(k, at)
            for row, c in zip(self.counters, cols):
                row[c].insert(at, value, eid)
        else:
            for row, c in zip(self.counters, cols):
                row[c].insert(at, value)

    def _resolve(self, r, now):
        if r is None:
            r = self.window
        if not 0 < r <= self.window:
            raise RangeError(f"range {r} outside (0, {self.window}]")
        if now is None:
            now = self.clock
        elif self.clock is not None and now < self.clock:
            raise OrderingError(f"query time {now} precedes last arrival {self.clock}")
        return r, now

    def row_estimates(self, key, r=None, now=None):
        r, now = self._resolve(r, now)
        if now is None:
            return [0] * self.depth
        return [row[c].query(r, now) for row, c in zip(self.counters, self.columns(key))]

    def point_query(self, key, r=None, now=None):
        """Estimated frequency of ``key`` among arrivals in the last ``r`` units."""
        return min(self.row_estimates(key, r, now))

    def grid(self, r=None, now=None):
        """Windowed counter estimates as a ``(depth, width)`` float array."""
        r, now = self._resolve(r, now)
        out = np.zeros((self.depth, self.width))
        if now is None:
            return out
        for j, row in enumerate(self.counters):
            for i, c in enumerate(row):
                if c.last_arrival is not None:
                    out[j, i] = c.query(r, now)
        return out

    def l1(self, r=None, now=None):
        """Arrivals in range, estimated as the average row sum."""
        return float(self.grid(r, now).sum(axis=1).mean())

    def inner_product(self, other, r=None, now=None):
        check_compatible([self, other])
        if now is None:
            clocks = [c for c in (self.clock, other.clock) if c is not None]
            now = max(clocks) if clocks else None
        ga = self.grid(r, now)
        gb = ga if other is self else other.grid(r, now)
        return float((ga * gb).sum(axis=1).min())

    def self_join(self, r=None, now=None):
        return self.inner_product(self, r, now)

    def error_bound(self):
        """Current bound on error / (L1 or L1^2), after any merges."""
        return self.plan.error(self.sw_error)

    def memory_report(self):
        """Bytes under the log-encoded timestamp model and bytes actually held."""
        bits = sum(c.model_bits() for row in self.counters for c in row)
        actual = sum(c.nbytes() for row in self.counters for c in row)
        return {
            "model_bytes": HEADER_BYTES + math.ceil(bits / 8),
            "actual_bytes": HEADER_BYTES + actual,
            "counters": self.width * self.depth,
        }

    # -- serialization --------------------------------------------------------

    def to_bytes(self):
        p = self.plan
        cfg = self.config
        head = _ENV.pack(SKETCH_MAGIC, SKETCH_VERSION, PROFILES.index(p.profile),
                         BACKEND_NAMES.index(p.backend), MODE_CODES[cfg.mode],
                         p.eps, p.delta, p.eps_sw, p.eps_cm, p.delta_sw, p.delta_cm,
                         p.width, p.depth, cfg.window, cfg.capacity, self.seed,
                         self.merge_depth, self.sw_error,
                         -1 if self.clock is None else self.clock)
        parts = [head]
        for row in self.counters:
            for c in row:
                frame = c.to_bytes()
                parts.append(struct.pack("<I", len(frame)))
                parts.append(frame)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf):
        try:
            fields = _ENV.unpack_from(buf, 0)
        except struct.error as exc:
            raise FormatError("truncated sketch envelope") from exc
        (magic, version, prof, back, mode, eps, delta, eps_sw, eps_cm, d_sw, d_cm,
         width, depth, window, capacity, seed, h, sw_error, clock) = fields
        if magic != SKETCH_MAGIC:
            raise FormatError(f"bad sketch magic {magic!r}")
        if version != SKETCH_VERSION:
            raise FormatError(f"unsupported sketch version {version}")
        if prof >= len(PROFILES) or back >= len(BACKEND_NAMES) or mode not in MODE_NAMES:
            raise FormatError("unknown profile, backend or mode code")
        p = SketchPlan(eps, delta, PROFILES[prof], BACKEND_NAMES[back], eps_sw, eps_cm,
                       d_sw, d_cm, width, depth)
        sk = cls.__new__(cls)
        sk.plan = p
        sk.seed = seed
        sk.config = WindowConfig(window=window, mode=MODE_NAMES[mode], eps=eps_sw,
                                 capacity=capacity, delta=d_sw if p.randomized else delta,
                                 seed=seed)
        sk.width, sk.depth = width, depth
        sk.mults, sk.adds = row_seeds(seed, depth)
        sk.merge_depth = h
        sk.sw_error = sw_error
        sk.clock = None if clock == -1 else clock
        off = _ENV.size
        rows = []
        for _ in range(depth):
            row = []
            for _ in range(width):
                try:
                    (n,) = struct.unpack_from("<I", buf, off)
                except struct.error as exc:
                    raise FormatError("truncated sketch body") from exc
                off += 4
                syn, end = read_synopsis(buf, off)
                if end != off + n:
                    raise FormatError("counter frame length mismatch")
                off = end
                row.append(syn)
            rows.append(row)
        if off != len(buf):
            raise FormatError("trailing bytes after sketch")
        sk.counters = rows
        return sk

    def copy(self):
        return EcmSketch.from_bytes(self.to_bytes())


def _event_id(k, at):
    # deterministic per (key, timestamp) so split and union builds agree
    return splitmix64(k ^ splitmix64(at & 0xFFFFFFFFFFFFFFFF))


def check_compatible(sketches):
    tokens = {s.token() for s in sketches}
    if len(tokens) != 1:
        raise IncompatibleError("sketches differ in dimensions, hash seed, window or backend")


def compose(inputs, eps_prime=None):
    """Counter-wise order-preserving merge of sketches over disjoint streams.

    ``eps_prime`` is the error of the rebuilt window synopses (ignored for
    randomized waves, whose merge is lossless). The result records its merge
    depth and the window error it now carries.
    """
    inputs = list(inputs)
    if not inputs:
        raise ValueError("nothing to compose")
    check_compatible(inputs)
    base = inputs[0]
    worst = max(s.sw_error for s in inputs)
    if base.plan.randomized:
        eps_prime = base.plan.eps_sw
        sw = worst
    else:
        if eps_prime is None:
            eps_prime = max(s.config.eps for s in inputs)
        sw = merged_error(worst, eps_prime)
    out = EcmSketch.__new__(EcmSketch)
    out.plan = base.plan
    out.seed = base.seed
    out.width, out.depth = base.width, base.depth
    out.mults, out.adds = base.mults, base.adds
    out.config = replace(base.config, eps=eps_prime,
                         capacity=sum(s.config.capacity for s in inputs))
    out.counters = [
        [merge_synopses([s.counters[j][i] for s in inputs], eps_prime) for i in range(base.width)]
        for j in range(base.depth)
    ]
    clocks = [s.clock for s in inputs if s.clock is not None]
    out.clock = max(clocks) if clocks else None
    out.merge_depth = 1 + max(s.merge_depth for s in inputs)
    out.sw_error = sw
    return out
