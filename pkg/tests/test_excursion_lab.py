import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thintorus import asymptotics as asy
from thintorus import excursion_lab as ex
from thintorus import lattice as lt
from thintorus import walk_engine as we

# three-state geometry: 0 inner, 1 annulus, 2 outside
INNER = np.array([True, False, False])
OUTER = np.array([True, True, False])


def brute_force_intervals(path, inner, outer):
    """Direct scan: last outside step before entering inner, first inner step, first later outside step."""
    out, last_outside, i = [], None, 0
    while i < len(path):
        if not outer[path[i]]:
            last_outside = i
            i += 1
            continue
        if inner[path[i]] and last_outside is not None:
            hit = i
            j = hit
            while j < len(path) and outer[path[j]]:
                j += 1
            if j == len(path):
                break
            out.append((last_outside, hit, j))
            last_outside = j
            i = j + 1
            continue
        i += 1
    return out


def test_no_inner_visit_gives_no_excursions():
    assert ex.decompose_excursions([2, 1, 2, 1, 1, 2], (INNER, OUTER)) == []


def test_handcrafted_two_excursions():
    recs = ex.decompose_excursions([2, 1, 0, 1, 2, 1, 0, 1, 2], (INNER, OUTER))
    assert [(r.start_step, r.hit_step, r.end_step) for r in recs] == [(0, 2, 4), (4, 6, 8)]
    assert all(r.hit_point == 0 and r.exit_point == 2 and r.entry_point == 1 for r in recs)


def test_incomplete_excursion_dropped():
    assert len(ex.decompose_excursions([2, 1, 0, 1, 0], (INNER, OUTER))) == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=80))
def test_intervals_match_brute_force(path):
    got = [tuple(r) for r in ex.excursion_intervals(path, (INNER, OUTER)).tolist()]
    assert got == brute_force_intervals(path, INNER, OUTER)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=120))
def test_records_disjoint_and_ordered(path):
    iv = ex.excursion_intervals(path, (INNER, OUTER))
    for a, b, c in iv:
        assert 0 <= a < b < c < len(path)
    # consecutive records may share only an outside step
    assert np.all(iv[1:, 0] >= iv[:-1, 2]) if len(iv) > 1 else True


def test_jsonl_roundtrip():
    recs = ex.decompose_excursions([2, 1, 0, 1, 2, 1, 0, 1, 2], (INNER, OUTER), annulus_id=3)
    buf = io.StringIO()
    ex.write_jsonl(recs, buf)
    buf.seek(0)
    assert ex.read_jsonl(buf) == recs


def test_region_annulus_needs_graph():
    with pytest.raises(ValueError):
        ex.decompose_excursions([0, 1], lt.Region.cylinder_annulus((0, 0), 1, 2))


def _contained(inner_iv, outer_iv):
    """Every [hit, end] of inner_iv that ends before the last outer end lies in some outer [hit, end]."""
    if len(outer_iv) == 0:
        return True
    horizon = outer_iv[-1, 2]
    for _, h, e in inner_iv:
        if e > horizon:
            continue
        if not np.any((outer_iv[:, 1] <= h) & (e <= outer_iv[:, 2])):
            return False
    return True


def test_ball_excursions_inside_level0_cylinder_excursions():
    n, h = 32, 4
    g = lt.build_torus(lt.TorusSpec(n, h))
    sched = lt.RadiiSchedule(2, (2.0, 3.75))
    assert sched.r_outer <= sched.R_mid[0]
    path = we.walk_path(g, g.index((16, 16, 0)), 400_000, True, we.trial_rng(0, "nest", 0))
    cyl = ex.excursion_intervals(path, sched.cylinder_annulus(0, (0, 0)), g)
    ball = ex.excursion_intervals(path, sched.ball_annulus((0, 0, 1)), g)
    assert len(ball) > 5 and len(cyl) > 5
    assert _contained(ball, cyl)


def test_level_excursions_nest():
    n, h = 32, 4
    g = lt.build_torus(lt.TorusSpec(n, h))
    sched = lt.RadiiSchedule(2, (1.5, 3.0))
    assert sched.M * sched.R_inner[0] <= sched.R_inner[1]
    path = we.walk_path(g, g.index((16, 16, 0)), 400_000, True, we.trial_rng(1, "nest", 0))
    lo = ex.excursion_intervals(path, sched.cylinder_annulus(0, (0, 0)), g)
    hi = ex.excursion_intervals(path, sched.cylinder_annulus(1, (0, 0)), g)
    assert len(lo) > 3 and len(hi) > 3
    assert _contained(lo, hi)


def test_typical_count_examples():
    nc, _ = asy.typical_counts(1.0, math.exp(10), 10.0, 1.0, 1.0)
    assert nc == pytest.approx(200 / math.log(10))
    assert nc == pytest.approx(86.859, abs=1e-3)
    _, nb = ex.typical_counts(1.0, math.exp(10), lt.RadiiSchedule(5, (1.0, 2.0)), a=2.0)
    assert nb == pytest.approx(100.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 3), st.floats(10, 1e6), st.integers(2, 9), st.floats(0.2, 4))
def test_count_ratio_identity(s, n, M, a):
    sched = lt.RadiiSchedule(M, (1.0, 2.0))
    nc, nb = ex.typical_counts(s, n, sched, a)
    h = a * math.log(n)
    assert nb / nc == pytest.approx(asy.excursion_ratio(sched.r_inner, h, M), rel=1e-12)


def _counts(cyl, ball=0):
    return ex.ExcursionCounts(tuple(cyl), ball, None, 0)


def test_type_all_ones_when_counts_high():
    sched = lt.RadiiSchedule(2, (1.0, 2.0, 3.0))
    nc, _ = ex.typical_counts(1.0, 1000, sched, 1.0)
    eta = 0.1
    c = math.ceil((1 - 2 * eta) ** 2 * nc)
    prof = ex.classify_type(_counts([c, c, c]), 1.0, eta, sched, 1000, 1.0)
    assert prof.z == (1.0, 1.0, 1.0)


def test_zero_count_maps_to_floor():
    eta = 0.1
    assert ex.grid_type(0, 50.0, eta, 2) == pytest.approx(2 * eta)
    assert ex.grid_type(0, 50.0, eta, 3) == pytest.approx(3 * eta)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 500), st.floats(0, 500), st.floats(1, 200), st.sampled_from([0.05, 0.1, 0.25]))
def test_type_monotone_in_count(c1, c2, typical, eta):
    lo, hi = sorted((c1, c2))
    assert ex.grid_type(lo, typical, eta, 2) <= ex.grid_type(hi, typical, eta, 2)


def test_admissibility_examples():
    assert ex.admissible((1.0, 1.0, 1.0), 100.0)
    assert not ex.admissible((0.0, 1.0), 4.0)
    b, _ = asy.b_alpha(0.0, 0.0, 4.0, 1.0)
    assert b == pytest.approx(1 - 4.0)


profiles = st.lists(st.sampled_from([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]), min_size=1, max_size=4).map(lambda z: tuple(z) + (1.0,))


@settings(max_examples=200, deadline=None)
@given(profiles, st.floats(0.5, 6), st.data())
def test_admissibility_monotone_and_matches_b(z, s, data):
    a = ex.admissible(z, s)
    assert a == ex.admissible_by_b(z, s)
    k = data.draw(st.integers(0, len(z) - 1))
    raised = list(z)
    raised[k] = 1.0
    if a:
        assert ex.admissible(tuple(raised), s)


def test_uncovered_set_edges():
    g = lt.build_torus(lt.TorusSpec(5, 3))
    res = we.run_until_cover(g, 4, True, we.trial_rng(0, "u", 0))
    assert len(ex.uncovered_set(res.visit_times, res.cover_time)) == 0
    u0 = ex.uncovered_set(res.visit_times, 0)
    assert sorted(u0.tolist()) == [v for v in range(g.num_vertices) if v != 4]


def test_uncovered_size_decay_trend():
    n = 64
    g = lt.torus((n, n))
    T = 4 / math.pi * n * n * math.log(n) ** 2
    grid = [0.2, 0.4, 0.6, 0.8]
    sizes = []
    for i in range(10):
        ft = we.first_hit_times(g, 0, int(T), False, we.trial_rng(0, "u", i))
        sizes.append([len(ex.uncovered_set(ft, s * T)) for s in grid])
    mean = np.mean(sizes, axis=0)
    assert np.all(np.diff(mean) < 0)
    slope = np.polyfit(grid, np.log(mean), 1)[0]
    # |U(s t)| ~ n^(2(1-s)): log-size slope near -2 ln n
    assert abs(slope / (-2 * math.log(n)) - 1) <= 0.25


def test_discrepancy_counting():
    g = lt.torus((8, 8))
    members = lt.region_members(g, lt.Region.cylinder((3, 3), 1.5))
    assert len(members) == 9
    lamps = np.zeros(g.num_vertices, dtype=np.uint8)
    assert ex.lamp_discrepancy(lamps, g, [(3, 3)], 1.5)[1] == 9
    lamps[members[:3]] = 1
    D, U = ex.lamp_discrepancy(lamps, g, [(3, 3)], 1.5)
    assert D.tolist() == [3] and U == 3


def test_discrepancy_accepts_lamp_state():
    g = lt.build_torus(lt.TorusSpec(16, 3))
    centers = ex.separated_centers(16, 8)
    ls = we.LampState.start(g, 0, seed=0)
    D, U = ex.lamp_discrepancy(ls, g, centers, 2.0)
    assert U == D.max() == len(lt.region_members(g, lt.Region.cylinder((0, 0), 2.0)))


def test_discrepancy_tail_under_fair_lamps():
    n, h, R = 32, 4, 2.0
    g = lt.build_torus(lt.TorusSpec(n, h))
    centers = ex.separated_centers(n, 4 * R)
    cd = ex.CylinderDiscrepancy(g, centers, R)
    lamps = np.random.default_rng(0).integers(0, 2, (10**4, g.num_vertices), dtype=np.uint8)
    _, U = cd(lamps)
    size = int(cd.sizes[0])
    for x in (n**0.6, n**0.75, n**0.9):
        freq = np.mean(U >= x)
        # Hoeffding for each cylinder plus a union bound
        bound = min(1.0, len(centers) * math.exp(-x * x / (2 * size)))
        assert freq <= bound + 3 * math.sqrt(max(freq * (1 - freq), 1e-4) / 10**4)


def test_separated_centers_are_maximal():
    n, sep = 20, 6.0
    c = ex.separated_centers(n, sep)
    for i, p in enumerate(c):
        for q in c[i + 1 :]:
            assert lt.torus_distance_2d(p, q, n) >= sep
    for x in range(n):
        for y in range(n):
            assert any(lt.torus_distance_2d((x, y), q, n) < sep for q in c)


def test_close_centers_rejected():
    g = lt.torus((16, 16))
    with pytest.raises(ValueError):
        ex.CylinderDiscrepancy(g, [(0, 0), (3, 0)], 1.0)


def test_checkpoint_ignores_later_path():
    n, h = 24, 3
    g = lt.build_torus(lt.TorusSpec(n, h))
    sched = lt.RadiiSchedule(2, (1.0, 2.0))
    args = dict(graph=g, schedule=sched, bases=[(0, 0), (0, 0)], ball_center=(0, 0, 0), s=0.01, n=n, a=h / math.log(n))
    path = we.walk_path(g, g.index((12, 12, 0)), 300_000, True, we.trial_rng(0, "cp", 0))
    first = ex.count_to_checkpoint(path, **args)
    assert first.checkpoint is not None
    tail = we.walk_path(g, int(path[first.checkpoint]), len(path) - first.checkpoint - 1, True, we.trial_rng(1, "cp", 0))
    spliced = np.concatenate([path[: first.checkpoint + 1], tail[1:]])
    second = ex.count_to_checkpoint(spliced, **args)
    assert first == second
    t1 = ex.classify_type(first, 0.01, 0.1, sched, n, args["a"])
    t2 = ex.classify_type(second, 0.01, 0.1, sched, n, args["a"])
    assert t1 == t2
    assert first.cylinder[-1] == first.target


def test_witness_parameters_below_threshold():
    phi = 1.0
    p = ex.find_witness_params(1.3, phi)
    assert p.violations() == []
    assert p.lam < 2 and p.A > 0


def test_witness_parameter_violations_reported():
    p = ex.WitnessParams(rho=0.5, delta=0.3, w=0.4, z=0.5, s=1.0, phi=1.0)
    assert p.violations()
