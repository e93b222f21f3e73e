"""Synthetic and file-backed event streams.

A stream is an iterable of ``(timestamp, key, value)`` with non-decreasing
timestamps. Files hold one event per line: ``timestamp<TAB>key[<TAB>value]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError


@dataclass(frozen=True)
class StreamSpec:
    """Generator parameters, or a file path."""

    distribution: str = "zipf"
    s: float = 1.0
    keys: int = 1 << 16
    events: int = 100_000
    seed: int = 0
    path: str | None = None

    def events_list(self):
        if self.path is not None:
            return read_stream(self.path)
        if self.distribution == "zipf":
            return zipf_stream(self.events, self.keys, self.s, self.seed)
        if self.distribution == "uniform":
            return uniform_stream(self.events, self.keys, self.seed)
        raise ValueError(f"unknown distribution {self.distribution!r}")


def parse_stream(text, seed=0):
    """``zipf:s,K,M``, ``uniform:K,M`` or a file path."""
    if text.startswith("zipf:"):
        try:
            s, k, m = text[5:].split(",")
            return StreamSpec("zipf", float(s), int(float(k)), int(float(m)), seed)
        except ValueError:
            raise ValueError(f"bad zipf spec {text!r}, expected zipf:s,K,M") from None
    if text.startswith("uniform:"):
        try:
            k, m = text[8:].split(",")
            return StreamSpec("uniform", 0.0, int(float(k)), int(float(m)), seed)
        except ValueError:
            raise ValueError(f"bad uniform spec {text!r}, expected uniform:K,M") from None
    return StreamSpec(path=text, seed=seed)


def zipf_keys(n, keys, s=1.0, seed=0):
    """``n`` draws from ranks ``0..keys-1`` with probability proportional to ``1/(rank+1)**s``."""
    rng = np.random.default_rng(seed)
    w = 1.0 / np.arange(1, keys + 1, dtype=float) ** s
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    return np.minimum(idx, keys - 1)


def zipf_stream(n, keys, s=1.0, seed=0):
    """One event per time unit starting at 1."""
    ks = zipf_keys(n, keys, s, seed).tolist()
    return [(i + 1, k, 1) for i, k in enumerate(ks)]


def uniform_stream(n, keys, seed=0):
    rng = np.random.default_rng(seed)
    ks = rng.integers(0, keys, n).tolist()
    return [(i + 1, k, 1) for i, k in enumerate(ks)]


def _key(tok):
    try:
        return int(tok)
    except ValueError:
        return tok


def read_stream(path):
    events = []
    last = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise FormatError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
            try:
                ts = int(parts[0])
                value = int(parts[2]) if len(parts) == 3 else 1
            except ValueError:
                raise FormatError(f"{path}:{lineno}: timestamp and value must be integers") from None
            if value < 1:
                raise FormatError(f"{path}:{lineno}: value must be positive")
            if last is not None and ts < last:
                raise FormatError(f"{path}:{lineno}: timestamp {ts} goes backwards")
            last = ts
            events.append((ts, _key(parts[1]), value))
    return events


def write_stream(path, events):
    with open(path, "w", encoding="utf-8") as fh:
        for ts, key, value in events:
            if value == 1:
                fh.write(f"{ts}\t{key}\n")
            else:
                fh.write(f"{ts}\t{key}\t{value}\n")
