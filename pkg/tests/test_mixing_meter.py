import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thintorus import lattice as lt
from thintorus import mixing_meter as mm
from thintorus.asymptotics import psi_closed


def test_lamplighter_matrix_is_stochastic_with_uniform_law():
    g = lt.cycle(4)
    P = mm.lamplighter_matrix(g)
    assert np.allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-14)
    pi = mm.lamplighter_stationary(g)
    assert np.allclose(P.T @ pi, pi, atol=1e-15)


def test_tv_at_time_zero():
    g = lt.cycle(4)
    curve, _ = mm.exact_tv_curve(g, 5)
    assert curve.tv[0] == pytest.approx(1 - 1 / (4 * 16), abs=1e-15)


def test_exact_curve_non_increasing():
    curve, t_mix = mm.exact_tv_curve(lt.cycle(5), 60)
    assert np.all(np.diff(curve.tv) <= 1e-14)
    assert t_mix is not None and curve.tv[t_mix] <= mm.DEFAULT_DELTA < curve.tv[t_mix - 1]


def test_l1_and_event_forms_agree():
    curve, _ = mm.exact_tv_curve(lt.cycle(5), 40)
    assert np.abs(curve.tv - curve.tv_events).max() <= 1e-12


def test_worst_start_is_an_all_off_state():
    g = lt.cycle(4)
    every_state = list(range(4 * 16))
    l1_all, _ = mm.exact_tv_from(g, every_state, 30)
    curve, _ = mm.exact_tv_curve(g, 30)
    assert np.abs(l1_all.max(axis=0) - curve.tv).max() <= 1e-12


def test_state_space_limit():
    with pytest.raises(ValueError):
        mm.lamplighter_matrix(lt.cycle(17))
    with pytest.raises(ValueError):
        mm.expected_cover_time(lt.cycle(17), 0, True)


def test_exact_cover_and_hitting_oracles_on_c4():
    g = lt.cycle(4)
    assert mm.expected_cover_time(g, 0, False) == pytest.approx(6.0)
    assert mm.expected_cover_time(g, 0, True) == pytest.approx(12.0)
    assert mm.expected_hitting_time(g, 0, 2, False) == pytest.approx(4.0)
    assert mm.expected_hitting_time(g, 0, 2, True) == pytest.approx(8.0)


# ---------------------------------------------------------------- witness


def test_threshold_bound_identical_samples_is_zero():
    x = np.arange(100.0)
    assert mm.threshold_tv_lower(x, x).lower == 0.0


def test_threshold_bound_disjoint_samples():
    wb = mm.threshold_tv_lower(np.zeros(500), np.ones(500))
    assert wb.raw == 1.0 and wb.lower == 1.0 and wb.stderr == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(50, 400))
def test_threshold_bound_in_unit_interval(seed, k):
    rng = np.random.default_rng(seed)
    wb = mm.threshold_tv_lower(rng.normal(size=k), rng.normal(0.3, 1, size=k))
    assert 0.0 <= wb.lower <= wb.raw <= 1.0


def test_witness_at_time_zero_is_near_one():
    g = lt.cycle(6)
    wb = mm.witness_tv_lower(g, 0, trials=2000, rng=np.random.default_rng(0))
    assert wb.lower >= 0.95


def test_witness_vanishes_after_mixing():
    g = lt.cycle(6)
    wb = mm.witness_tv_lower(g, 400, trials=2000, rng=np.random.default_rng(1))
    assert wb.lower <= 0.02


def test_witness_never_exceeds_exact_distance():
    g = lt.cycle(6)
    curve, _ = mm.exact_tv_curve(g, 40)
    for t in (2, 6, 10, 16, 24, 32):
        wb = mm.witness_tv_lower(g, t, trials=3000, rng=np.random.default_rng(t))
        assert wb.lower <= curve.tv[t] + 3 * wb.stderr


def test_discrepancy_statistic_needs_torus():
    with pytest.raises(ValueError):
        mm.witness_tv_lower(lt.cycle(6), 3, statistic="discrepancy", trials=10)


def test_sampled_lamps_only_on_visited_vertices():
    g = lt.torus((8, 8))
    lamps = mm.sample_lamps_at(g, 0, 50, np.random.default_rng(0))
    assert lamps.sum() == 0
    lamps = mm.sample_lamps_at(g, 5, 200, np.random.default_rng(1))
    assert lamps.sum(axis=1).max() <= 6


# ---------------------------------------------------------------- certificate


def test_certificate_without_overlap_is_exactly_one():
    res = mm.certificate_from_overlaps([1.0, 2.0], np.zeros((1000, 2), dtype=np.int64))
    assert np.all(res.mean == 1.0) and np.all(res.stderr == 0.0)
    assert res.crossing() == 1.0


def test_certificate_overflow_handled():
    x = np.full((1000, 1), 5000)
    res = mm.certificate_from_overlaps([0.0], x)
    assert res.mean[0] == math.inf and res.log2_mean[0] == pytest.approx(5000)
    assert res.crossing() is None


def test_certificate_properties_on_small_torus():
    g = lt.build_torus(lt.TorusSpec(8, 3))
    s_grid = np.arange(0.0, 3.01, 0.25)
    res = mm.exp_moment_certificate(g, s_grid, 1000, seed=3)
    assert np.all(res.mean >= 1 - 1e-12)
    assert np.all(np.diff(res.log2_mean) <= 1e-12)
    # at s = 0 only the two starting vertices are ever hit
    assert res.log2_mean[0] >= g.num_vertices - 2
    assert res.mean[-1] <= 1.1


def test_certificate_needs_enough_pairs():
    with pytest.raises(ValueError):
        mm.exp_moment_certificate(lt.build_torus(lt.TorusSpec(4, 3)), [1.0], 10, seed=0)


def test_overlap_counts_example():
    a = np.array([0, 3, 7, 2])
    b = np.array([5, 1, 9, 0])
    # min first hits: 0, 1, 7, 0
    assert mm.overlap_counts(a, b, np.array([0, 1, 6, 7])).tolist() == [2, 1, 1, 0]


# ---------------------------------------------------------------- scan


def test_scan_height_clamped():
    assert mm.scan_height(0.25, 64) == 3
    assert mm.scan_height(3, 48) == 11


def test_scan_bracket_consistency():
    s_grid = np.arange(0.25, 3.01, 0.25)
    rows, br = mm.scan_config(0.25, 64, s_grid, 500, 1)
    assert [r.s for r in rows] == sorted(r.s for r in rows)
    assert all(r.s_lazy == 2 * r.s for r in rows)
    cert = np.array([r.certificate for r in rows])
    assert np.all(np.diff(cert) <= 1e-9)
    assert br.lower_edge is not None and br.upper_edge is not None
    assert br.lower_edge < br.upper_edge
    assert all(r.lower_bound <= 0.5 for r in rows if r.s > br.lower_edge)
    # a = 0.25 at n = 64 clamps h to 3, so the prediction uses the realized height
    assert br.phi == pytest.approx(math.pi * 0.25273 * 3 / math.log(64), rel=1e-3)
    assert abs(br.midpoint / psi_closed(br.phi) - 1) <= 0.5
