import math
import random
import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from ecmsketch.errors import (
    FormatError,
    IncompatibleError,
    OrderingError,
    RangeError,
    UnsupportedMergeError,
)
from ecmsketch.oracle import ExactWindowStore, oracle_inner, oracle_l1, oracle_self_join
from ecmsketch.sketch import (
    EcmSketch,
    compose,
    inner_error,
    inner_split,
    plan,
    point_error,
    point_split,
    rw_split,
)
from ecmsketch.streams import zipf_stream
from ecmsketch.windows import ExponentialHistogram, WindowConfig, multilevel_error


def build(events, p, window=10**6, seed=0, impl=None):
    sk = EcmSketch(p, window, seed=seed, impl=impl)
    st = ExactWindowStore(window)
    for ts, k, v in events:
        sk.add(k, v, ts)
        st.add(ts, k, v)
    return sk, st


# -- planning -------------------------------------------------------------------

@pytest.mark.parametrize("eps", [0.01, 0.05, 0.1, 0.2, 0.5, 0.9])
def test_split_identities(eps):
    sw, cm = point_split(eps)
    assert abs(point_error(sw, cm) - eps) < 1e-12
    sw, cm = inner_split(eps)
    assert abs(inner_error(sw, cm) - eps) < 1e-12
    sw, cm = rw_split(eps)
    assert abs(point_error(sw, cm) - eps) < 1e-12


def test_point_split_value():
    sw, cm = point_split(0.1)
    assert sw == cm == pytest.approx(0.048808848, abs=1e-9)


def _argmin(f, hi):
    res = minimize_scalar(f, bounds=(1e-9, hi - 1e-12), method="bounded",
                          options={"xatol": 1e-13})
    return res.x


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.2, 0.4])
def test_splits_minimise_memory(eps):
    inner_cm = lambda s: (eps - s * s - 2 * s) / (1 + s) ** 2
    x = _argmin(lambda s: 1 / (s * inner_cm(s)), math.sqrt(1 + eps) - 1)
    assert inner_split(eps)[0] == pytest.approx(x, abs=1e-6)

    point_cm = lambda s: (eps - s) / (1 + s)
    x = _argmin(lambda s: 1 / (s * point_cm(s)), eps)
    assert point_split(eps)[0] == pytest.approx(x, abs=1e-6)
    x = _argmin(lambda s: 1 / (s * s * point_cm(s)), eps)
    assert rw_split(eps)[0] == pytest.approx(x, abs=1e-6)


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.3])
def test_splits_are_local_minima(eps):
    cases = [
        (point_split, lambda s: (eps - s) / (1 + s), lambda s, c: 1 / (s * c)),
        (inner_split, lambda s: (eps - s * s - 2 * s) / (1 + s) ** 2, lambda s, c: 1 / (s * c)),
        (rw_split, lambda s: (eps - s) / (1 + s), lambda s, c: 1 / (s * s * c)),
    ]
    for split, cm_of, objective in cases:
        sw, cm = split(eps)
        best = objective(sw, cm)
        for f in (0.99, 1.01):
            s = sw * f
            assert objective(s, cm_of(s)) > best


def test_plan_dimensions():
    p = plan(0.1, 0.1)
    assert p.width == math.ceil(math.e / p.eps_cm)
    assert p.depth == math.ceil(math.log(10))
    r = plan(0.1, 0.1, backend="rw")
    assert r.delta_sw == r.delta_cm == 0.05
    widths = [plan(e, 0.1).width for e in (0.4, 0.2, 0.1, 0.05, 0.01)]
    assert widths == sorted(widths)


def test_plan_rejects_bad_input():
    for eps, delta in ((1.0, 0.1), (0.0, 0.1), (0.1, 1.0), (0.1, 0.0)):
        with pytest.raises(ValueError):
            plan(eps, delta)
    with pytest.raises(ValueError):
        plan(0.1, 0.1, "inner", "rw")


# -- updates and point queries ------------------------------------------------------

def test_fresh_add_touches_one_counter_per_row(impl):
    sk = EcmSketch(plan(0.1, 0.1), 1000, impl=impl)
    sk.add("k", 1, 5)
    live = sum(1 for row in sk.counters for c in row if c.last_arrival is not None)
    assert live == sk.depth


def test_add_rejections():
    sk = EcmSketch(plan(0.1, 0.1), 1000)
    with pytest.raises(ValueError):
        sk.add("k", 0, 1)
    sk.add("k", 1, 10)
    with pytest.raises(OrderingError):
        sk.add("k", 1, 9)
    with pytest.raises(ValueError):
        sk.add("k", 1)
    with pytest.raises(RangeError):
        sk.point_query("k", 1001)


def test_empty_sketch_is_zero():
    sk = EcmSketch(plan(0.1, 0.1), 1000)
    assert sk.point_query("nothing") == 0
    assert sk.self_join() == 0


def test_single_key_bounds(impl):
    p = plan(0.1, 0.1)
    sk = EcmSketch(p, 1000, impl=impl)
    for t in range(1, 101):
        sk.add(42, 1, t)
    for r in (100, 1000):
        est = sk.point_query(42, r)
        assert 100 * (1 - p.eps_sw) <= est <= 100 * (1 + p.eps_sw)
    assert sk.point_query(42, 50) == pytest.approx(50, rel=p.eps_sw)


def test_row_min_dominance():
    sk, _ = build(zipf_stream(5000, 512, 1.0, 3), plan(0.2, 0.05))
    for k in range(50):
        rows = sk.row_estimates(k, 2000)
        assert sk.point_query(k, 2000) == min(rows)


def test_zipf_counters_keep_invariant():
    sk, _ = build(zipf_stream(100_000, 1 << 16, 1.0, 0), plan(0.1, 0.1))
    for row in sk.counters:
        for c in row:
            assert isinstance(c, ExponentialHistogram)
            assert c.invariant_violations() == []


def test_point_error_and_underestimate():
    p = plan(0.1, 0.1)
    sk, st = build(zipf_stream(20_000, 4096, 1.0, 5), p)
    rng = random.Random(5)
    now = st.clock
    within = 0
    probes = 300
    for _ in range(probes):
        r = rng.choice([10, 100, 1000, 10_000, 20_000])
        counts = st.counts(r, now)
        key = rng.choice(list(counts))
        f, l1 = counts[key], oracle_l1(st, r, now)
        est = sk.point_query(key, r, now)
        within += abs(est - f) <= 0.1 * l1
        assert f - est <= p.eps_sw * f + 1e-9
    assert within >= 0.9 * probes


def test_count_mode_window():
    sk = EcmSketch(plan(0.1, 0.1), 100, mode="count")
    for i in range(300):
        sk.add(i % 3)
    assert sk.clock == 300
    est = sk.point_query(0)
    assert 33 * 0.9 <= est <= 34 * 1.1 + 3
    with pytest.raises(ValueError):
        sk.add(1, 1, 5)


# -- inner products ----------------------------------------------------------------

def test_inner_with_empty_is_zero():
    p = plan(0.2, 0.1, "inner")
    a, _ = build(zipf_stream(1000, 100, 1.0, 1), p)
    b = EcmSketch(p, 10**6)
    assert a.inner_product(b) == 0


def test_self_join_within_bound():
    p = plan(0.2, 0.1, "inner")
    sk, st = build(zipf_stream(10_000, 1 << 12, 1.0, 2), p)
    assert sk.self_join() == sk.inner_product(sk)
    r = 1
    while r <= 16384:
        true = oracle_self_join(st, r)
        assert abs(sk.self_join(r) - true) <= 0.2 * oracle_l1(st, r) ** 2
        r *= 2


def test_disjoint_inner_product_is_collision_noise():
    p = plan(0.2, 0.1, "inner")
    a, sa = build([(t, f"a{t % 20}", 1) for t in range(1, 400)], p)
    b, sb = build([(t, f"b{t % 20}", 1) for t in range(1, 400)], p)
    assert oracle_inner(sa, sb) == 0
    est = a.inner_product(b)
    assert 0 <= est <= p.error() * oracle_l1(sa) * oracle_l1(sb)


def test_inner_product_needs_same_hashes():
    p = plan(0.2, 0.1, "inner")
    with pytest.raises(IncompatibleError):
        EcmSketch(p, 100, seed=1).inner_product(EcmSketch(p, 100, seed=2))


# -- composition -----------------------------------------------------------------

def test_compose_singleton_within_bound():
    p = plan(0.1, 0.1)
    events = zipf_stream(5000, 256, 1.0, 4)
    sk, st = build(events, p, window=3000)
    c = compose([sk])
    assert c.merge_depth == 1
    now = st.clock
    for r in (10, 100, 1000, 3000):
        l1 = oracle_l1(st, r, now)
        for k in range(20):
            f = st.counts(r, now).get(k, 0)
            assert abs(c.point_query(k, r, now) - f) <= c.error_bound() * l1 + 1e-9


def test_compose_four_sites_two_levels():
    p = plan(0.1, 0.1)
    events = zipf_stream(8000, 512, 1.0, 6)
    _, st = build(events, p)
    sites = [EcmSketch(p, 10**6, seed=0) for _ in range(4)]
    for i, (ts, k, v) in enumerate(events):
        sites[i % 4].add(k, v, ts)
    left = compose([compose(sites[:2]), compose(sites[2:])])
    right = compose([sites[0], compose([sites[1], compose(sites[2:])])])
    bound = p.eps_cm + multilevel_error(p.eps_sw, 2) + p.eps_cm * multilevel_error(p.eps_sw, 2)
    for root in (left, right):
        for r in (100, 1000, 8000):
            l1 = oracle_l1(st, r)
            for k in range(30):
                f = st.counts(r).get(k, 0)
                assert abs(root.point_query(k, r) - f) <= max(bound, root.error_bound()) * l1


def test_rw_compose_matches_union():
    p = plan(0.3, 0.2, backend="rw")
    events = zipf_stream(3000, 128, 1.0, 8)
    union = EcmSketch(p, 5000, capacity=6000, seed=3)
    parts = [EcmSketch(p, 5000, capacity=3000, seed=3) for _ in range(2)]
    for i, (ts, k, v) in enumerate(events):
        union.add(k, v, ts)
        parts[i % 2].add(k, v, ts)
    merged = compose(parts)
    for k in range(128):
        for r in (10, 500, 5000):
            assert merged.point_query(k, r) == union.point_query(k, r)


def test_compose_rejections():
    p = plan(0.1, 0.1)
    with pytest.raises(IncompatibleError):
        compose([EcmSketch(p, 100, seed=1), EcmSketch(p, 100, seed=2)])
    with pytest.raises(IncompatibleError):
        compose([EcmSketch(p, 100), EcmSketch(plan(0.1, 0.1, backend="dw"), 100)])
    a = EcmSketch(p, 100, mode="count")
    a.add(1)
    with pytest.raises(UnsupportedMergeError):
        compose([a, a.copy()])


# -- memory and frames ------------------------------------------------------------

def test_memory_report():
    sk = EcmSketch(plan(0.1, 0.1), 10**6)
    assert sk.memory_report()["model_bytes"] == 64
    last = 64
    for i, (ts, k, v) in enumerate(zipf_stream(4000, 1000, 1.0, 1)):
        sk.add(k, v, ts)
        if i % 500 == 499:
            m = sk.memory_report()["model_bytes"]
            assert m >= last
            last = m


def test_memory_scales_with_eps():
    # one synopsis: bucket count ~ 1/eps
    sizes = {}
    for eps in (0.05, 0.1):
        eh = ExponentialHistogram(WindowConfig(10**6, eps=eps))
        for t in range(1, 50_001):
            eh.insert(t)
        sizes[eps] = eh.model_bits()
    assert 1.5 <= sizes[0.05] / sizes[0.1] <= 2.5
    # whole sketch: the width halves as well
    events = zipf_stream(30_000, 1 << 14, 1.0, 2)
    a, _ = build(events, plan(0.1, 0.1))
    b, _ = build(events, plan(0.2, 0.1))
    ratio = a.memory_report()["model_bytes"] / b.memory_report()["model_bytes"]
    assert 2.0 <= ratio <= 4.0


@pytest.mark.parametrize("backend", ["eh", "dw", "rw"])
def test_sketch_round_trip(backend):
    sk, _ = build(zipf_stream(2000, 300, 1.0, 9), plan(0.2, 0.1, backend=backend), window=5000)
    buf = sk.to_bytes()
    x = EcmSketch.from_bytes(buf)
    assert x.to_bytes() == buf
    for k in range(30):
        assert x.point_query(k, 700) == sk.point_query(k, 700)
    assert np.array_equal(x.grid(), sk.grid())


def test_sketch_bad_frames():
    sk = EcmSketch(plan(0.3, 0.3), 100)
    buf = sk.to_bytes()
    with pytest.raises(FormatError):
        EcmSketch.from_bytes(b"NOPE" + buf[4:])
    with pytest.raises(FormatError):
        EcmSketch.from_bytes(buf[:-1])
    with pytest.raises(FormatError):
        EcmSketch.from_bytes(buf[:20])


def test_string_and_int_keys_hash_stably():
    a = EcmSketch(plan(0.1, 0.1), 100, seed=11)
    b = EcmSketch(plan(0.1, 0.1), 100, seed=11)
    for key in (0, 1, -5, 2**70, "x", b"x", "é"):
        assert a.columns(key) == b.columns(key)
    with pytest.raises(TypeError):
        a.columns(1.5)


def test_l1_estimate():
    sk, st = build(zipf_stream(5000, 512, 1.0, 1), plan(0.1, 0.1))
    assert sk.l1(1000) == pytest.approx(oracle_l1(st, 1000), rel=0.05)
