import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecmsketch import kernels
from ecmsketch.errors import (
    CapacityError,
    FormatError,
    IncompatibleError,
    OrderingError,
    RangeError,
    UnsupportedMergeError,
)
from ecmsketch.windows import (
    DeterministicWave,
    ExponentialHistogram,
    RandomizedWave,
    WindowConfig,
    eh_buckets_per_level,
    eh_error_for_levels,
    eh_merge,
    in_window,
    load_synopsis,
    make_synopsis,
    merge_synopses,
    merged_error,
    multilevel_error,
    rwave_merge,
    wave_merge,
)


def exact(ts, now, r):
    return sum(1 for t in ts if in_window(t, now, r))


def suffix_ranges(window):
    out = {1, 2, 3, window}
    x = 1
    while x < window:
        out.add(x)
        x = x * 3 // 2 + 1
    return sorted(r for r in out if r <= window)


def worst_error(syn, ts, window, now=None):
    now = ts[-1] if now is None else now
    worst = 0.0
    for r in suffix_ranges(window):
        true = exact(ts, now, r)
        est = syn.query(r, now)
        if true == 0:
            assert est == 0
        else:
            worst = max(worst, abs(est - true) / true)
    return worst


# -- exponential histogram ------------------------------------------------------

def test_eh_single_insert(impl):
    eh = ExponentialHistogram(WindowConfig(100, eps=0.5), impl)
    eh.insert(1)
    assert eh.buckets() == [(1, 1)]
    assert eh.total == 1


def test_eh_k_one_stream_within_half(impl):
    eh = ExponentialHistogram(WindowConfig(100, eps=0.5), impl)
    assert eh.k == 1
    ts = [1, 2, 3, 4]
    for t in ts:
        eh.insert(t)
        assert eh.invariant_violations() == []
    assert worst_error(eh, ts, 100) <= 0.5


def test_eh_ordering_error(impl):
    eh = ExponentialHistogram(WindowConfig(100), impl)
    eh.insert(1)
    with pytest.raises(OrderingError):
        eh.insert(0)


def test_eh_range_error(impl):
    eh = ExponentialHistogram(WindowConfig(100), impl)
    eh.insert(5)
    with pytest.raises(RangeError):
        eh.query(101)
    with pytest.raises(RangeError):
        eh.query(0)


def test_eh_empty_range_is_zero(impl):
    eh = ExponentialHistogram(WindowConfig(100), impl)
    assert eh.query(50, 10) == 0
    eh.insert(10)
    assert eh.query(5, 30) == 0


@pytest.mark.parametrize("eps", [0.5, 0.3, 0.1, 0.05])
def test_eh_error_within_eps(impl, eps):
    rng = random.Random(int(eps * 1000))
    ts = sorted(rng.randint(1, 3000) for _ in range(2000))
    eh = ExponentialHistogram(WindowConfig(1000, eps=eps), impl)
    for t in ts:
        eh.insert(t)
    assert worst_error(eh, ts, 1000) <= eps
    assert eh.invariant_violations() == []


def test_eh_hundred_uniform_bits(impl):
    ts = list(range(1, 1001, 10))
    eh = ExponentialHistogram(WindowConfig(1000, eps=0.1), impl)
    for t in ts:
        eh.insert(t)
    assert worst_error(eh, ts, 1000) <= 0.1


def test_eh_straddling_bucket_costs_at_most_half(impl):
    # 16 bits at t=1..16 with k=1 leave an 8-bucket ending at 8
    eh = ExponentialHistogram(WindowConfig(100, eps=0.5), impl)
    for t in range(1, 17):
        eh.insert(t)
    sizes = [s for s, _ in eh.buckets()]
    assert sizes[0] == 8
    est = eh.query(13, 16)  # covers t=4..16, start inside the oldest bucket
    assert abs(est - 13) <= 4


def test_eh_expiry_drops_old_buckets(impl):
    eh = ExponentialHistogram(WindowConfig(10, eps=0.2), impl)
    for t in range(1, 51):
        eh.insert(t)
    assert all(end > 50 - 10 for _, end in eh.buckets())
    assert eh.query(10) <= 10 * 1.2


def test_eh_batch_insert_matches_repeated(impl):
    a = ExponentialHistogram(WindowConfig(1000, eps=0.1), impl)
    b = ExponentialHistogram(WindowConfig(1000, eps=0.1), impl)
    for t in range(1, 200, 3):
        a.insert(t, 5)
        for _ in range(5):
            b.insert(t)
    assert a.buckets() == b.buckets()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=300),
       st.sampled_from([0.5, 0.25, 0.1]), st.integers(5, 200))
def test_eh_property_error_and_invariant(gaps, eps, window):
    ts, t = [], 0
    for g in gaps:
        t += g
        ts.append(t)
    eh = ExponentialHistogram(WindowConfig(window, eps=eps))
    for x in ts:
        eh.insert(x)
    assert eh.invariant_violations() == []
    assert worst_error(eh, ts, window) <= eps + 1e-12


def test_buckets_per_level():
    assert eh_buckets_per_level(0.5) == 1
    assert eh_buckets_per_level(0.1) == 9
    for eps in (0.3, 0.1, 0.07, 0.01):
        k = eh_buckets_per_level(eps)
        assert 1 / (1 + k) <= eps


# -- deterministic wave ---------------------------------------------------------

def test_dw_empty_is_zero(impl):
    dw = DeterministicWave(WindowConfig(100), impl)
    assert dw.query(100, 0) == 0


@pytest.mark.parametrize("eps", [0.5, 0.2, 0.1, 0.05])
def test_dw_error_within_eps(impl, eps):
    rng = random.Random(7)
    ts = sorted(rng.randint(1, 3000) for _ in range(2000))
    dw = DeterministicWave(WindowConfig(1000, eps=eps, capacity=2000), impl)
    for t in ts:
        dw.insert(t)
    assert worst_error(dw, ts, 1000) <= eps


def test_dw_hundred_uniform_bits(impl):
    ts = list(range(1, 1001, 10))
    dw = DeterministicWave(WindowConfig(1000, eps=0.1), impl)
    for t in ts:
        dw.insert(t)
    assert worst_error(dw, ts, 1000) <= 0.1


def test_dw_capacity_error(impl):
    dw = DeterministicWave(WindowConfig(10_000, eps=0.5, capacity=8), impl)
    with pytest.raises(CapacityError):
        for t in range(1, 200):
            dw.insert(t)


def test_dw_batch_insert_matches_repeated(impl):
    a = DeterministicWave(WindowConfig(1000, eps=0.1, capacity=5000), impl)
    b = DeterministicWave(WindowConfig(1000, eps=0.1, capacity=5000), impl)
    for t in range(1, 600, 4):
        a.insert(t, 7)
        for _ in range(7):
            b.insert(t)
    now = 600
    for r in suffix_ranges(1000):
        assert a.query(r, now) == b.query(r, now)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=300),
       st.sampled_from([0.5, 0.25, 0.1]), st.integers(5, 200))
def test_dw_property_error(gaps, eps, window):
    ts, t = [], 0
    for g in gaps:
        t += g
        ts.append(t)
    dw = DeterministicWave(WindowConfig(window, eps=eps, capacity=len(ts)))
    for x in ts:
        dw.insert(x)
    assert worst_error(dw, ts, window) <= eps + 1e-12


# -- differential: compiled and pure-Python cores agree ----------------------------

@pytest.mark.skipif(len(kernels.available()) < 2, reason="compiled kernels not built")
@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(1, 4)), min_size=1, max_size=250),
       st.sampled_from([0.5, 0.2, 0.1]), st.integers(3, 150))
def test_cores_agree(steps, eps, window):
    cfg = WindowConfig(window, eps=eps, capacity=4 * len(steps))
    pairs = [(ExponentialHistogram(cfg, "python"), ExponentialHistogram(cfg, "cython")),
             (DeterministicWave(cfg, "python"), DeterministicWave(cfg, "cython"))]
    t = 0
    for gap, c in steps:
        t += gap
        for a, b in pairs:
            a.insert(t, c)
            b.insert(t, c)
    for a, b in pairs:
        assert a.to_bytes() == b.to_bytes()
        for r in (1, window // 2 + 1, window):
            assert a.query(r, t + 1) == b.query(r, t + 1)


# -- randomized wave ------------------------------------------------------------

def test_rw_empty_is_zero():
    assert RandomizedWave(WindowConfig(100, eps=0.3)).query(100, 0) == 0


def test_rw_exact_on_unsampled_level():
    rw = RandomizedWave(WindowConfig(1000, eps=0.3))
    ts = list(range(1, 501))
    for t in ts:
        rw.insert(t)
    # cap = 400 > 100 most recent events: level 0 answers exactly
    assert rw.query(100, 500) == 100


def test_rw_monte_carlo():
    ts = list(range(1, 10_001))
    hits = 0
    trials = 40
    for seed in range(trials):
        rw = RandomizedWave(WindowConfig(20_000, eps=0.2, delta=0.1, seed=seed))
        for t in ts:
            rw.insert(t)
        est = rw.query(10_000, 10_000)
        hits += abs(est - 10_000) <= 0.2 * 10_000
    assert hits >= 0.9 * trials


def test_rw_level_caps():
    rw = RandomizedWave(WindowConfig(5000, eps=0.3, seed=3))
    for t in range(1, 5000):
        rw.insert(t)
    assert all(len(q) <= rw.cap for levels in rw.levels for q in levels)


# -- merges ---------------------------------------------------------------------

def split_stream(n, parts, seed, span=None):
    rng = random.Random(seed)
    span = span or 2 * n
    ts = sorted(rng.randint(1, span) for _ in range(n))
    owner = [rng.randrange(parts) for _ in ts]
    return ts, [[t for t, o in zip(ts, owner) if o == p] for p in range(parts)]


@pytest.mark.parametrize("backend", ["eh", "dw"])
def test_two_way_merge_bound(impl, backend):
    for seed in range(4):
        ts, parts = split_stream(1000, 2, seed)
        cfg = WindowConfig(1000, eps=0.1, capacity=2000)
        syns = [make_synopsis(backend, cfg, impl) for _ in parts]
        for s, p in zip(syns, parts):
            for t in p:
                s.insert(t)
        m = merge_synopses(syns, 0.1)
        assert worst_error(m, ts, 1000) <= merged_error(0.1, 0.1) + 1e-12


def test_merge_with_empty(impl):
    ts, (a,) = split_stream(500, 1, 9)
    x = ExponentialHistogram(WindowConfig(1000, eps=0.1), impl)
    for t in a:
        x.insert(t)
    m = eh_merge([x, ExponentialHistogram(WindowConfig(1000, eps=0.1), impl)], 0.1)
    assert worst_error(m, ts, 1000) <= 0.21 + 1e-12


def test_four_way_two_level_bound(impl):
    for seed in range(3):
        ts, parts = split_stream(2000, 4, seed)
        cfg = WindowConfig(2000, eps=0.1, capacity=4000)
        leaves = []
        for p in parts:
            s = ExponentialHistogram(cfg, impl)
            for t in p:
                s.insert(t)
            leaves.append(s)
        root = eh_merge([eh_merge(leaves[:2], 0.1), eh_merge(leaves[2:], 0.1)], 0.1)
        assert worst_error(root, ts, 2000) <= multilevel_error(0.1, 2) + 1e-12


def test_merge_tracks_later_clock(impl):
    a = ExponentialHistogram(WindowConfig(100), impl)
    b = ExponentialHistogram(WindowConfig(100), impl)
    a.insert(10)
    b.insert(50)
    m = eh_merge([a, b], 0.1)
    assert m.last_arrival == 50
    assert m.query(100) == 2
    assert m.query(40) == 1


def test_count_based_merge_rejected(impl):
    cfg = WindowConfig(100, mode="count")
    with pytest.raises(UnsupportedMergeError):
        eh_merge([ExponentialHistogram(cfg, impl), ExponentialHistogram(cfg, impl)], 0.1)
    with pytest.raises(UnsupportedMergeError):
        wave_merge([DeterministicWave(cfg, impl), DeterministicWave(cfg, impl)], 0.1)


def test_merge_mismatch_rejected(impl):
    with pytest.raises(IncompatibleError):
        eh_merge([ExponentialHistogram(WindowConfig(100), impl),
                  ExponentialHistogram(WindowConfig(200), impl)], 0.1)
    with pytest.raises(IncompatibleError):
        eh_merge([ExponentialHistogram(WindowConfig(100), impl),
                  DeterministicWave(WindowConfig(100), impl)], 0.1)
    with pytest.raises(IncompatibleError):
        rwave_merge([RandomizedWave(WindowConfig(100, seed=1)),
                     RandomizedWave(WindowConfig(100, seed=2))])


def build_rw(cfg, events):
    rw = RandomizedWave(cfg)
    for t, eid in events:
        rw.insert(t, event_id=eid)
    return rw


def test_rw_merge_equals_union():
    cfg = WindowConfig(3000, eps=0.3, delta=0.1, capacity=3000, seed=5)
    rng = random.Random(1)
    ts = sorted(rng.sample(range(1, 8000), 4000))
    events = [(t, i) for i, t in enumerate(ts)]
    a = build_rw(cfg, events[0::2])
    b = build_rw(cfg, events[1::2])
    u = build_rw(cfg.with_(capacity=6000), events)
    m = rwave_merge([a, b])
    assert m.contents() == u.contents()
    assert m.evicted == u.evicted


def test_rw_merge_with_empty_is_identity():
    cfg = WindowConfig(3000, eps=0.3, capacity=3000, seed=5)
    a = build_rw(cfg, [(t, t) for t in range(1, 2000)])
    m = rwave_merge([a, RandomizedWave(cfg.with_(capacity=1))])
    assert [lv[:len(a.levels[0])] for lv in m.contents()] == a.contents()


def test_rw_merge_adds_levels_by_rehash():
    small = WindowConfig(10_000, eps=0.5, capacity=400, seed=2)
    a = build_rw(small, [(t, t) for t in range(1, 400)])
    b = build_rw(small, [(t, t) for t in range(400, 800)])
    m = rwave_merge([a, b])
    assert m.nlevels > a.nlevels
    deep = m.nlevels - 1
    for ci in range(m.copies):
        for _, eid in m.levels[ci][deep]:
            assert m.level_of(ci, eid) >= deep
    u = build_rw(small.with_(capacity=800), [(t, t) for t in range(1, 800)])
    assert m.contents() == u.contents()


def test_error_for_levels():
    assert eh_error_for_levels(0.21, 1) == pytest.approx(0.1, abs=1e-12)
    v = eh_error_for_levels(0.3, 3)
    assert multilevel_error(v, 3) <= 0.3 + 1e-9
    assert eh_error_for_levels(1e-9, 5) < 1e-9
    for h in (1, 2, 4):
        for eps in (0.05, 0.2):
            assert math.isclose(multilevel_error(eh_error_for_levels(eps, h), h), eps)


# -- frames ---------------------------------------------------------------------

@pytest.mark.parametrize("backend", ["eh", "dw", "rw"])
def test_round_trip(backend):
    cfg = WindowConfig(500, eps=0.2, capacity=2000, seed=4)
    s = make_synopsis(backend, cfg)
    for t in range(1, 1500, 2):
        s.insert(t)
    buf = s.to_bytes()
    x = load_synopsis(buf)
    assert x.to_bytes() == buf
    for r in (1, 10, 100, 500):
        assert x.query(r, 1500) == s.query(r, 1500)


def test_bad_frames():
    s = ExponentialHistogram(WindowConfig(100))
    s.insert(3)
    buf = s.to_bytes()
    with pytest.raises(FormatError):
        load_synopsis(b"XXXX" + buf[4:])
    with pytest.raises(FormatError):
        load_synopsis(buf[:-3])
    with pytest.raises(FormatError):
        load_synopsis(buf + b"\0")
    with pytest.raises(FormatError):
        load_synopsis(buf[:4] + b"\x09\x00" + buf[6:])


def test_config_validation():
    with pytest.raises(ValueError):
        WindowConfig(0)
    with pytest.raises(ValueError):
        WindowConfig(10, eps=1.0)
    with pytest.raises(ValueError):
        WindowConfig(10, mode="sideways")
    assert WindowConfig(10).capacity == 10
    assert WindowConfig(10, mode="count", capacity=99).capacity == 10
