import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thintorus import _kernels as K
from thintorus import asymptotics as asy
from thintorus import lattice as lt

SQRT2 = math.sqrt(2)
KINK = 1 + SQRT2


# ---------------------------------------------------------------- closed form and variational problem


def test_psi_two_dimensional_limit():
    assert asy.psi_closed(1e-12) == pytest.approx(1.0, abs=1e-11)


def test_psi_at_one():
    assert asy.psi_closed(1.0) == pytest.approx((1 + (1 - 1 / SQRT2)) ** 2, abs=1e-15)
    assert asy.psi_closed(1.0) == pytest.approx(1.671573, abs=1e-6)


def test_psi_continuous_at_kink():
    c = 1 - 1 / SQRT2
    sub, sup = (1 + c * KINK) ** 2, (1 + 2 * KINK) / 2
    assert sub == pytest.approx(1.5 + SQRT2, abs=1e-12)
    assert sup == pytest.approx(1.5 + SQRT2, abs=1e-12)
    assert asy.psi_closed(KINK) == pytest.approx(2.914214, abs=1e-6)


def test_variational_optimizer_examples():
    s, rho = asy.psi_variational(1.0)
    assert rho == pytest.approx(SQRT2 - 1, abs=1e-5)
    assert abs(s - asy.psi_closed(1.0)) <= 1e-6
    assert asy.psi_variational(4.0)[1] == 1.0


@pytest.mark.parametrize("phi", [0.5, 1, 2, 3, 5])
def test_variational_matches_closed_form(phi):
    assert abs(asy.psi_variational(phi)[0] - asy.psi_closed(phi)) <= 1e-6


@pytest.mark.parametrize("phi", [0.3, 1.0, 2.0, KINK, 3.5])
def test_duality_routes_agree(phi):
    inf_form = asy.psi_infimum_form(phi)
    sup_form = asy.psi_supremum_form(phi)
    assert abs(inf_form - sup_form) <= 1e-5
    assert abs(inf_form - asy.psi_closed(phi)) <= 1e-5


def test_one_sided_slopes_match_finite_differences():
    h = 1e-6
    for phi in (1.0, KINK, 4.0):
        left, right = asy.psi_one_sided_slopes(phi)
        fd_left = (asy.psi_closed(phi) - asy.psi_closed(phi - h)) / h
        fd_right = (asy.psi_closed(phi + h) - asy.psi_closed(phi)) / h
        assert left == pytest.approx(fd_left, abs=1e-5)
        assert right == pytest.approx(fd_right, abs=1e-5)


def test_curvature_jumps_at_kink():
    left, right = asy.psi_one_sided_curvatures(KINK)
    assert left == pytest.approx(2 * (1 - 1 / SQRT2) ** 2)
    assert right == 0.0
    h = 1e-3
    fd_left = (asy.psi_closed(KINK) - 2 * asy.psi_closed(KINK - h) + asy.psi_closed(KINK - 2 * h)) / h**2
    assert fd_left == pytest.approx(left, rel=1e-6)


def test_normalized_threshold_decreasing_to_half():
    phis = np.linspace(0.01, 8, 800)
    ratio = np.array([asy.psi_closed(p) / (1 + 2 * p) for p in phis])
    assert np.all(np.diff(ratio) <= 1e-12)
    assert np.allclose(ratio[phis >= KINK], 0.5, atol=1e-14)
    assert np.all((ratio >= 0.5) & (ratio < 1))


def test_threshold_report_fields():
    r = asy.threshold_report(1.0)
    assert r.branch == "subcritical" and r.psi_L_eta is None
    assert r.psi_closed == pytest.approx(r.psi_variational, abs=1e-6)
    assert asy.threshold_report(3.0).branch == "supercritical"


# ---------------------------------------------------------------- b and alpha


def test_b_alpha_examples():
    b, alpha = asy.b_alpha(0.0, 1.0, 1.0, 2.0)
    assert b == 1.0  # 1 - rho - s (1 - z)^2 / (1 - rho) at rho = 0, z = 1
    assert alpha == pytest.approx(1 / 2.0)
    b, alpha = asy.b_alpha(0.0, 0.5, 1.0, 1.0)
    assert (b, alpha) == (pytest.approx(0.75), pytest.approx(0.25))


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 1), st.floats(0.05, 1), st.floats(0.5, 5), st.floats(0.1, 5))
def test_alpha_rho_is_infimal_convolution(w, rho, s, phi):
    _, alpha_rho = asy.b_alpha(rho, w, s, phi)
    assert abs(asy.alpha_rho_by_minimization(w, rho, s, phi) - alpha_rho) <= 1e-6


# ---------------------------------------------------------------- discretized threshold


def brute_force_feasible(s, phi, L, eta, step):
    """Admissible profiles (z_L = 1) all meet gamma_m >= eta; written straight from the definition."""
    k = round(1 / step)
    grid = [i / k for i in range(k + 1)]
    alpha = lambda z: s * z * z / phi
    for head in itertools.product(grid, repeat=L):
        z = list(head) + [1.0]
        if any(z[j] < 1 and math.sqrt(s) * (1 - z[j]) > 1 - j / L + 1e-12 for j in range(L)):
            continue
        for m in range(L + 1):
            g = alpha(max(z[0] - 4 * eta, 0.0)) - m * eta - 1 / L
            g -= sum(1 / L - 2 * s * L * max(z[j] - z[j - 1] - 2 * eta, 0.0) ** 2 for j in range(1, m + 1))
            if g < eta - 1e-12:
                return False
    return True


def brute_force_psi(phi, L, eta, step, s_max=20.0, ds=0.01):
    s = 1.0
    while s <= s_max:
        if brute_force_feasible(s, phi, L, eta, step):
            return s
        s = round(s + ds, 10)
    raise AssertionError("no feasible s")


def test_grid_threshold_matches_brute_force_l2():
    got = asy.psi_L_eta(1.0, 2, 0.1)
    oracle = brute_force_psi(1.0, 2, 0.1, 0.1)
    assert oracle - 0.01 - 1e-4 <= got <= oracle + 1e-4


def test_grid_threshold_matches_brute_force_l1():
    got = asy.psi_L_eta(0.7, 1, 0.05)
    oracle = brute_force_psi(0.7, 1, 0.05, 0.05)
    assert oracle - 0.01 - 1e-4 <= got <= oracle + 1e-4


@pytest.mark.parametrize("L,eta", [(2, 0.1), (3, 0.05)])
def test_feasibility_monotone_in_s(L, eta):
    flags = [asy.grid_feasible(s, 1.0, L, eta) for s in np.linspace(1, 15, 57)]
    first = flags.index(True)
    assert all(flags[first:])


def test_gamma_values_single_profile():
    # z = (0.5, 1), L = 1, s = 2, phi = 1, eta = 0.1
    g = asy.gamma_values([0.5, 1.0], 2.0, 1.0, 1, 0.1)
    a0 = 2.0 * (0.5 - 0.4) ** 2
    assert g[0] == pytest.approx(a0 - 1.0)
    assert g[1] == pytest.approx(a0 - 0.1 - 1.0 - (1.0 - 2 * 2.0 * 1 * (0.5 - 0.2) ** 2))


def test_limit_reduction_bounds_enumeration():
    for L, step in ((1, 0.001), (2, 0.01), (3, 0.02)):
        enumerated = asy.psi_L_eta(1.0, L, 0.0, grid_step=step)
        reduced = asy.psi_L_limit(1.0, L)
        assert enumerated <= reduced + 1e-4
        assert reduced - enumerated <= 0.1


def test_limit_trend_toward_closed_form():
    target = asy.psi_closed(1.0)
    values = [asy.psi_L_limit(1.0, L) for L in (2, 4, 8, 16, 32, 64)]
    gaps = [v - target for v in values]
    assert all(g >= 0 for g in gaps)
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.05


def test_grid_too_large_rejected():
    with pytest.raises(asy.GridTooLarge):
        asy.psi_L_eta(1.0, 8, 0.01)


# ---------------------------------------------------------------- large deviations


def test_mgf_edges_and_value():
    assert asy.mgf_lambda(0.1, 0.5, 0.0) == 0.0
    assert asy.mgf_lambda(0.1, 0.5, math.inf) == pytest.approx(math.log(0.9))
    assert asy.mgf_lambda(0.1, 0.5, 60.0) == pytest.approx(math.log(0.9), abs=1e-12)
    assert asy.mgf_lambda(0.1, 0.5, 1.0) == pytest.approx(-0.080624, abs=1e-6)


def test_mgf_against_monte_carlo():
    p, pp, theta, N = 0.1, 0.5, 1.0, 10**6
    rng = np.random.default_rng(0)
    j = rng.random(N) < p
    x = np.exp(-theta * j * rng.geometric(pp, N))  # 1 + Y is geometric on {1, 2, ...}
    se = x.std(ddof=1) / math.sqrt(N)
    assert abs(x.mean() - math.exp(asy.mgf_lambda(p, pp, theta))) <= 3 * se


def test_lambda_convex_decreasing():
    th = np.linspace(0, 8, 801)
    lam = np.array([asy.mgf_lambda(0.05, 0.1, t) for t in th])
    assert np.all(np.diff(lam) <= 0)
    assert np.all(np.diff(lam, 2) >= -1e-8)
    h = 1e-5
    for t in (0.01, 0.5, 3.0):
        fd = (asy.mgf_lambda(0.05, 0.1, t + h) - asy.mgf_lambda(0.05, 0.1, t - h)) / (2 * h)
        assert asy.mgf_lambda_derivative(0.05, 0.1, t) == pytest.approx(fd, rel=1e-6)


def test_rate_examples():
    assert asy.rate_I(0.4, 0.4, 1.0) == 0.0
    assert asy.rate_I(0.2, 1.0, 1.0) == pytest.approx(-0.64)
    assert abs(asy.rate_I(0.3, 1.0, 1.0, p=1e-3) - asy.rate_I(0.3, 1.0, 1.0)) <= 5e-3


def test_tilt_small_p_limit():
    p, kappa, z, w = 1e-4, 1.0, 0.3, 1.0
    assert abs(asy.tilt_parameter(p, kappa, z, w) / p - (math.sqrt(kappa) * w / z - kappa)) <= 1e-2


def test_rate_rejects_bad_arguments():
    with pytest.raises(ValueError):
        asy.rate_I(0.8, 0.5, 1.0)


def test_rate_on_the_mean_is_small():
    spec = asy.RateSpec(0.02, 0.02, 0.5, 0.5, 2500)
    est = asy.ldp_estimate(spec, 20_000, np.random.default_rng(1), mode="raw")
    assert abs(est.rate) <= math.log(4) / 50


@pytest.mark.parametrize("z,w,kappa", [(0.3, 1.0, 1.0), (0.5, 1.0, 1.0), (0.2, 0.8, 2.0), (0.4, 0.9, 0.5)])
def test_chernoff_bound_respected(z, w, kappa):
    spec = asy.RateSpec(0.02, kappa * 0.02, z, w, 2500)
    est = asy.ldp_estimate(spec, 50_000, np.random.default_rng(2))
    assert not est.chernoff_violated
    assert est.chernoff_log_bound == pytest.approx(asy.rate_I(z, w, kappa, p=0.02) * 0.02 * 2500, rel=1e-9)


def test_tilted_and_raw_estimates_agree():
    spec = asy.RateSpec(0.05, 0.05, 0.7, 1.0, 400)
    raw = asy.ldp_estimate(spec, 200_000, np.random.default_rng(3), mode="raw")
    tilted = asy.ldp_estimate(spec, 200_000, np.random.default_rng(4), mode="tilted")
    assert abs(raw.log_probability - tilted.log_probability) <= 3 * math.hypot(raw.log_probability_se, tilted.log_probability_se)


def test_tilted_rate_near_limit():
    spec = asy.RateSpec(0.02, 0.02, 0.3, 1.0, 2500)
    est = asy.ldp_estimate(spec, 100_000, np.random.default_rng(5), mode="tilted")
    assert abs(est.rate + 0.49) <= 0.2 * 0.49


# ---------------------------------------------------------------- escape constants and counts


def test_hit_probability_example():
    delta, _ = asy.hitting_constants(1.0, 0.5, 1.0, 5.0, 0.6595, 1e4)
    assert delta == pytest.approx(0.06298, abs=1e-5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 5), st.floats(0.01, 1), st.floats(0.1, 5), st.floats(1, 50), st.floats(0.3, 0.9), st.floats(10, 1e9))
def test_alpha_identity_residual(s, z, a, r, q, n):
    _, residual = asy.hitting_constants(s, z, a, r, q, n)
    assert residual <= 1e-12 * max(1.0, math.log(n))


def test_hit_probability_decreases_in_radius():
    deltas = [asy.hitting_constants(1, 0.5, 1, r, 0.66, 100)[0] for r in (1, 2, 5, 10)]
    assert all(b < a for a, b in zip(deltas, deltas[1:]))


def test_two_d_constants_large_n():
    c = asy.two_d_constants(1e6, 2, 8, 14, 0, 1)
    assert c.target == pytest.approx(4.0)
    assert abs(c.normalized / c.target - 1) <= 0.25


def test_two_d_constants_degenerate_radii():
    with pytest.raises(ValueError):
        asy.two_d_constants(1 / 256, 2, 2, 4, 0, 1)
    with pytest.raises(ValueError):
        asy.two_d_constants(16, 2, 2, 4, 1, 1)


def test_annulus_crossing_probability_monte_carlo():
    c = asy.two_d_constants(16, 2, 2, 4, 0, 1)  # R'_0 = 8, R'_1 = 32, R_1 = 64
    g = lt.torus((512, 512))
    xy = g.coordinate_array()
    d = np.hypot(xy[:, 0] - 256, xy[:, 1] - 256)
    target, stop = d <= 8, d > 64
    start = g.index((256 + 32, 256))
    rng = np.random.default_rng(0)
    trials = 4000
    hits = sum(K.hitting_set(g.neighbors, g.degree, start, target, stop, 10**8, True, rng)[0] for _ in range(trials))
    assert abs(hits / trials / c.p_in - 1) <= 0.10
    assert asy.disk_hit_probability(32, 8, 64) == pytest.approx(c.p_in)


def test_cover_prediction_examples():
    assert asy.cover_prediction(1e-9, 100).cover_time / asy.cover_prediction(1e-9, 100).box_time == pytest.approx(1, abs=1e-8)
    pred = asy.cover_prediction(1.0, 100, r3=0.2527)
    assert pred.phi == pytest.approx(0.7939, abs=1e-4)
    assert pred.cover_time / pred.box_time == pytest.approx(2.588, abs=1e-3)
    lazy = asy.cover_prediction(1.0, 100, "lazy", r3=0.2527)
    assert lazy.box_time == pytest.approx(2 * pred.box_time)


@pytest.mark.parametrize("a", [0.05, 0.3, 1, 2, 3, 5, 20])
def test_mixing_prediction_between_half_and_cover(a):
    pred = asy.cover_prediction(a, 1000)
    assert 0.5 <= pred.mixing_time / pred.cover_time < 1


def test_escape_constant_closed_form():
    assert asy.z3_escape_probability() == pytest.approx(0.659462670, abs=1e-8)
    assert asy.R3 == pytest.approx(0.25273, abs=1e-5)


def test_typical_counts_validation():
    with pytest.raises(ValueError):
        asy.typical_counts(1.0, 100, 1.0, 2.0, 1.0)
