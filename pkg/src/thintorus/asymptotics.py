"""Closed-form and variational constants.

Covers the mixing threshold function, its discretized versions, the
excursion large-deviation rate machinery, hitting and typical-count
constants, and cover-time predictions on thin tori.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import gamma as gamma_fn

SQRT2 = math.sqrt(2.0)
KINK = 1.0 + SQRT2
_C = 1.0 - 1.0 / SQRT2


class GridTooLarge(ValueError):
    pass


class Undersampled(RuntimeError):
    pass


# ---------------------------------------------------------------- threshold function


def psi_closed(phi: float) -> float:
    if phi <= 0:
        raise ValueError("phi must be positive")
    if phi <= KINK:
        return (1.0 + _C * phi) ** 2
    return (1.0 + 2.0 * phi) / 2.0


def psi_branch(phi: float) -> str:
    return "supercritical" if phi > KINK else "subcritical"


def psi_one_sided_slopes(phi: float) -> tuple[float, float]:
    """Exact left and right derivatives of the closed form at ``phi``."""
    left_branch = 2 * _C * (1 + _C * phi)
    if phi < KINK:
        return left_branch, left_branch
    if phi > KINK:
        return 1.0, 1.0
    return left_branch, 1.0


def psi_one_sided_curvatures(phi: float) -> tuple[float, float]:
    """Exact left and right second derivatives of the closed form."""
    sub = 2 * _C * _C
    if phi < KINK:
        return sub, sub
    if phi > KINK:
        return 0.0, 0.0
    return sub, 0.0


def _t_objective(rho, phi):
    return math.sqrt(rho * (phi + rho / 2)) + 1 - rho


def psi_variational(phi: float, resolution: int = 2001) -> tuple[float, float]:
    """Maximize sqrt(rho(phi + rho/2)) + 1 - rho over rho in [0, 1].

    A grid of ``resolution`` points brackets the maximizer, bounded Brent
    refines it.  Returns (t*^2, argmax rho).
    """
    if phi <= 0:
        raise ValueError("phi must be positive")
    grid = np.linspace(0.0, 1.0, resolution)
    vals = np.sqrt(grid * (phi + grid / 2)) + 1 - grid
    i = int(np.argmax(vals))
    best_rho, best = float(grid[i]), float(vals[i])
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, resolution - 1)]
    if hi > lo:
        res = minimize_scalar(lambda r: -_t_objective(r, phi), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        if -res.fun > best:
            best_rho, best = float(res.x), float(-res.fun)
    return best * best, best_rho


def b_alpha(rho: float, z: float, s: float, phi: float) -> tuple[float, float]:
    """(b_rho(z), alpha_rho(z)); b_1 is -inf off z = 1."""
    if not (0 <= rho <= 1 and 0 <= z <= 1) or s <= 0:
        raise ValueError("need rho, z in [0,1] and s > 0")
    alpha = s * z * z / (rho / 2 + phi)
    if rho == 1:
        return (0.0 if z == 1 else -math.inf), alpha
    return 1 - rho - s * (1 - z) ** 2 / (1 - rho), alpha


def alpha_rho_by_minimization(w: float, rho: float, s: float, phi: float, points: int = 20001) -> float:
    """inf over z in [0, w] of alpha(z) + 2 s (w - z)^2 / rho, by grid plus Brent."""
    f = lambda z: s * z * z / phi + 2 * s * (w - z) ** 2 / rho
    grid = np.linspace(0.0, w, points)
    vals = s * grid**2 / phi + 2 * s * (w - grid) ** 2 / rho
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, points - 1)]
    if hi <= lo:
        return float(vals[i])
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    return float(min(res.fun, vals[i]))


def _worst_alpha_gap(s: float, phi: float) -> float:
    """min over rho of alpha_rho(z_min) - rho, z_min the smallest z with b_rho(z) >= 0."""
    t = math.sqrt(s)

    def gap(rho):
        if rho >= 1:
            return s / (0.5 + phi) - 1
        z = max(0.0, 1 - (1 - rho) / t)
        return s * z * z / (rho / 2 + phi) - rho

    grid = np.linspace(0, 1, 2001)
    vals = np.array([gap(r) for r in grid])
    i = int(np.argmin(vals))
    best = float(vals[i])
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, 2000)]
    res = minimize_scalar(gap, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    return min(best, float(res.fun))


def psi_infimum_form(phi: float, tol: float = 1e-10) -> float:
    """Smallest s >= 1 such that b_rho(z) >= 0 forces alpha_rho(z) >= rho.

    Bisection on s; the inner minimum over rho is a grid scan refined by
    Brent.  The predicate is monotone since alpha_rho(z_min) grows with s.
    """
    if _worst_alpha_gap(1.0, phi) >= 0:
        return 1.0
    lo, hi = 1.0, 2.0
    while _worst_alpha_gap(hi, phi) < 0:
        lo, hi = hi, 2 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _worst_alpha_gap(mid, phi) >= 0:
            hi = mid
        else:
            lo = mid
    return hi


def _exists_z(s: float, rho: float, phi: float) -> bool:
    """Is there z in [0,1] with b_rho(z) >= 0 and alpha_rho(z) <= rho?"""
    if rho >= 1:
        return s / (0.5 + phi) <= 1
    z_lo = max(0.0, 1 - (1 - rho) / math.sqrt(s))
    z_hi = math.sqrt(rho * (rho / 2 + phi) / s)
    return z_lo <= min(z_hi, 1.0)


def _largest_s_for(rho: float, phi: float, tol: float) -> float:
    if not _exists_z(1.0, rho, phi):
        return -math.inf
    lo, hi = 1.0, 2.0
    while _exists_z(hi, rho, phi):
        lo, hi = hi, 2 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _exists_z(mid, rho, phi):
            lo = mid
        else:
            hi = mid
    return lo


def psi_supremum_form(phi: float, tol: float = 1e-11) -> float:
    """Largest s >= 1 admitting (rho, z) with b_rho(z) >= 0 and alpha_rho(z) <= rho.

    For each rho the largest feasible s is found by bisection on the
    existence predicate; the outer maximum over rho uses a grid and Brent.
    """
    grid = np.linspace(0, 1, 401)
    vals = np.array([_largest_s_for(r, phi, 1e-9) for r in grid])
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, 400)]
    res = minimize_scalar(lambda r: -_largest_s_for(r, phi, tol), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    return max(float(vals[i]), float(-res.fun), _largest_s_for(1.0, phi, tol), 1.0)


@dataclass(frozen=True)
class ThresholdReport:
    phi: float
    psi_closed: float
    psi_variational: float
    rho_star: float
    branch: str
    psi_L_eta: float | None = None


def threshold_report(phi: float, L: int | None = None, eta: float | None = None) -> ThresholdReport:
    value, rho = psi_variational(phi)
    extra = psi_L_eta(phi, L, eta) if L is not None else None
    return ThresholdReport(phi, psi_closed(phi), value, rho, psi_branch(phi), extra)


# ---------------------------------------------------------------- discretized threshold


def _grid_values(eta: float) -> np.ndarray:
    k = round(1 / eta)
    if k < 1 or abs(k * eta - 1) > 1e-9:
        raise ValueError(f"1/eta must be an integer, got eta={eta}")
    return np.arange(k + 1) / k


def _profile_chunks(values: np.ndarray, L: int, chunk: int = 1 << 18):
    """Yield (P, L+1) arrays of all profiles with z_L = 1."""
    it = itertools.product(values, repeat=L)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        z = np.ones((len(block), L + 1))
        z[:, :L] = np.array(block)
        yield z


def _gamma_coefficients(z: np.ndarray, L: int, phi: float, eta: float):
    """gamma_m = s * A[:, m] - B[m]; returns (A, B, admissibility bound on sqrt(s))."""
    x0 = np.maximum(z[:, 0] - 4 * eta, 0.0)
    jumps = np.maximum(np.diff(z, axis=1) - 2 * eta, 0.0)
    A = np.empty((len(z), L + 1))
    A[:, 0] = x0 * x0 / phi
    A[:, 1:] = A[:, :1] + 2 * L * np.cumsum(jumps**2, axis=1)
    m = np.arange(L + 1)
    B = m * eta + 1 / L + m / L
    rho = np.arange(L) / L
    with np.errstate(divide="ignore"):
        ratio = np.where(z[:, :L] < 1, (1 - rho) / (1 - z[:, :L]), np.inf)
    return A, B, ratio.min(axis=1)


def gamma_values(z, s: float, phi: float, L: int, eta: float) -> np.ndarray:
    """gamma_{m,eta}(z) for m = 0..L of a single profile (z_0..z_L)."""
    z = np.asarray(z, dtype=float)[None, :]
    if z.shape[1] != L + 1:
        raise ValueError("profile needs L+1 entries")
    A, B, _ = _gamma_coefficients(z, L, phi, eta)
    return s * A[0] - B


def grid_feasible(s: float, phi: float, L: int, eta: float, grid_step: float | None = None) -> bool:
    """Every admissible grid profile has gamma_m >= eta for all m."""
    values = _grid_values(grid_step if grid_step is not None else eta)
    t = math.sqrt(s)
    for z in _profile_chunks(values, L):
        A, B, bound = _gamma_coefficients(z, L, phi, eta)
        adm = t <= bound
        if not adm.any():
            continue
        ok = (s * A[adm] - B >= eta - 1e-12).all(axis=1)
        if not ok.all():
            return False
    return True


def psi_L_eta(phi: float, L: int, eta: float, grid_step: float | None = None, tol: float = 1e-4, max_profiles: int = 10**7) -> float:
    """Minimal s >= 1 with every admissible profile satisfying gamma_m >= eta.

    Profiles z_0..z_{L-1} range over the grid of step ``grid_step``
    (default ``eta``); ``eta = 0`` with a finite grid step gives the
    eta -> 0 requirement gamma_m(z, 0) >= 0.  Feasibility is monotone in s
    (gamma grows and the admissible set shrinks), so bisection applies.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if phi <= 0:
        raise ValueError("phi must be positive")
    step = grid_step if grid_step is not None else eta
    if step is None or step <= 0:
        raise ValueError("need a positive grid step")
    size = (round(1 / step) + 1) ** L
    if size > max_profiles:
        raise GridTooLarge(f"{size:.3g} profiles exceed the limit {max_profiles:.3g}")
    feas = lambda s: grid_feasible(s, phi, L, eta, step)
    if feas(1.0):
        return 1.0
    lo, hi = 1.0, 2.0
    while not feas(hi):
        lo, hi = hi, 2 * hi
        if hi > 1e8:
            raise RuntimeError("no feasible s below 1e8")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feas(mid):
            hi = mid
        else:
            lo = mid
    return hi


def psi_L_limit(phi: float, L: int) -> float:
    """eta -> 0 limit of the discretized threshold via constant-jump profiles.

    For rho = m/L the worst profile has a flat jump Delta on the first m
    levels and delta = 1 afterwards; the inner minimum over Delta in [0, 1]
    of (c - rho Delta)^2 - phi rho (1 - 2 Delta^2) is at
    Delta = c / (rho + 2 phi) clipped to [0, 1], with c = t - (1 - rho).
    """
    if L < 1 or phi <= 0:
        raise ValueError("need L >= 1 and phi > 0")

    def margin(t, rho):
        c = t - (1 - rho)
        d = min(max(c / (rho + 2 * phi), 0.0), 1.0) if rho > 0 else 0.0
        return (c - rho * d) ** 2 - phi * rho * (1 - 2 * d * d) - phi / L

    t_best = 1.0
    for m in range(L + 1):
        rho = m / L
        if margin(1.0, rho) >= 0:
            continue
        lo, hi = 1.0, 2.0
        while margin(hi, rho) < 0:
            lo, hi = hi, 2 * hi
        t_best = max(t_best, brentq(lambda t: margin(t, rho), lo, hi, xtol=1e-14))
    return t_best * t_best


# ---------------------------------------------------------------- large deviations


def mgf_lambda(p: float, p_prime: float, theta: float) -> float:
    """log E exp(-theta J (1 + Y)), J ~ Bernoulli(p), Y ~ Geometric(p') on {0, 1, ...}."""
    if theta < 0:
        raise ValueError("theta must be >= 0")
    if np.isinf(theta):
        return math.log1p(-p)
    return math.log1p(-p + p * p_prime / (math.expm1(theta) + p_prime))


def mgf_lambda_derivative(p: float, p_prime: float, theta: float) -> float:
    e = math.exp(theta)
    d = e - 1 + p_prime
    inner = 1 - p + p * p_prime / d
    return -p * p_prime * e / (d * d) / inner


def _check_rate_args(z, w, kappa):
    if not (kappa > 0 and z > 0 and w >= math.sqrt(kappa) * z):
        raise ValueError("need kappa > 0 and w >= sqrt(kappa) z > 0")


def _solve_tilt(p: float, p_prime: float, mean_per_term: float) -> float:
    """theta >= 0 with Lambda'(theta) = -mean_per_term (0 if the mean is already below)."""
    f = lambda th: mgf_lambda_derivative(p, p_prime, th) + mean_per_term
    if f(0.0) >= 0:
        return 0.0
    hi = 1.0
    while f(hi) < 0:
        hi *= 2
    return brentq(f, 0.0, hi, xtol=1e-15, rtol=1e-14)


def tilt_parameter(p: float, kappa: float, z: float, w: float) -> float:
    """theta_p: the root of Lambda'(theta) = -(z/w)^2 (0 when w = sqrt(kappa) z)."""
    _check_rate_args(z, w, kappa)
    return _solve_tilt(p, kappa * p, (z / w) ** 2)


def rate_I(z: float, w: float, kappa: float, p: float | None = None) -> float:
    """Rate function; the small-p limit -(w - sqrt(kappa) z)^2 unless ``p`` is given.

    With ``p`` the finite value (1/p) inf_theta {z^2 theta + w^2 Lambda(theta)}
    is computed; the infimum sits at the tilt parameter.
    """
    _check_rate_args(z, w, kappa)
    if p is None:
        return -((w - math.sqrt(kappa) * z) ** 2)
    th = tilt_parameter(p, kappa, z, w)
    return (z * z * th + w * w * mgf_lambda(p, kappa * p, th)) / p


@dataclass(frozen=True)
class RateSpec:
    p: float
    p_prime: float
    z: float
    w: float
    mean_count: float  # the typical count N-bar

    def __post_init__(self):
        if not (0 < self.p < 1 and 0 < self.p_prime < 1):
            raise ValueError("p and p' must lie in (0, 1)")
        _check_rate_args(self.z, self.w, self.kappa)

    @property
    def kappa(self) -> float:
        return self.p_prime / self.p

    @property
    def terms(self) -> int:
        return int(round(self.w * self.w * self.mean_count))

    @property
    def threshold(self) -> float:
        return self.z * self.z * self.mean_count

    def chernoff_log_bound(self) -> float:
        """inf_theta {theta c + N Lambda(theta)} >= log P[Z <= c]."""
        c, N = self.threshold, self.terms
        th = self.tilt()
        return th * c + N * mgf_lambda(self.p, self.p_prime, th)

    def tilt(self) -> float:
        """Tilt whose mean of Z equals the threshold z^2 N-bar."""
        return _solve_tilt(self.p, self.p_prime, self.threshold / self.terms)


@dataclass(frozen=True)
class LDPEstimate:
    rate: float
    stderr: float
    log_probability: float
    log_probability_se: float
    theta: float
    hits: int
    trials: int
    chernoff_log_bound: float

    @property
    def chernoff_violated(self) -> bool:
        return self.log_probability > self.chernoff_log_bound + 3 * self.log_probability_se


def _sample_sums(spec: RateSpec, theta: float, trials: int, rng) -> np.ndarray:
    """Draws of sum_i J_i (1 + Y_i) under the exponentially tilted law."""
    p, pp, N = spec.p, spec.p_prime, spec.terms
    e = math.exp(-theta)
    m = math.exp(mgf_lambda(p, pp, theta))
    p_on = p * pp * e / (1 - (1 - pp) * e) / m
    pp_t = 1 - (1 - pp) * e
    k = rng.binomial(N, p_on, size=trials)
    extra = np.zeros(trials, dtype=np.int64)
    pos = k > 0
    extra[pos] = rng.negative_binomial(k[pos], pp_t)
    return k + extra


def ldp_estimate(spec: RateSpec, trials: int, rng, mode: str = "auto") -> LDPEstimate:
    """Empirical rate (1 / (p N-bar)) log P[Z <= z^2 N-bar].

    ``mode``: "raw" samples the original law, "tilted" samples at theta_p
    and reweights by exp(theta Z + N Lambda(theta)), "auto" switches to the
    tilt when fewer than 10 raw hits are seen.
    """
    if trials < 2:
        raise ValueError("need at least two trials")
    c, N = spec.threshold, spec.terms
    bound = spec.chernoff_log_bound()
    scale = spec.p * spec.mean_count
    if mode in ("raw", "auto"):
        zs = _sample_sums(spec, 0.0, trials, rng)
        hits = int((zs <= c).sum())
        if hits >= 10 or mode == "raw":
            if hits == 0:
                raise Undersampled(f"no events in {trials} raw trials")
            f = hits / trials
            se_log = math.sqrt((1 - f) / (f * trials))
            return LDPEstimate(math.log(f) / scale, se_log / scale, math.log(f), se_log, 0.0, hits, trials, bound)
    elif mode != "tilted":
        raise ValueError(f"unknown mode {mode!r}")
    theta = spec.tilt()
    zs = _sample_sums(spec, theta, trials, rng)
    hit = zs <= c
    logw = theta * zs + N * mgf_lambda(spec.p, spec.p_prime, theta)
    if not hit.any():
        raise Undersampled(f"no events in {trials} tilted trials")
    shift = logw[hit].max()
    wts = np.where(hit, np.exp(logw - shift), 0.0)
    mean = wts.mean()
    se_mean = wts.std(ddof=1) / math.sqrt(trials)
    logp = math.log(mean) + shift
    se_log = se_mean / mean
    return LDPEstimate(logp / scale, se_log / scale, logp, se_log, theta, int(hit.sum()), trials, bound)


# ---------------------------------------------------------------- escape constants & counts


def z3_escape_probability() -> float:
    """Escape probability of the 3D simple random walk from Watson's integral.

    u(3) = sqrt(6) / (32 pi^3) Gamma(1/24) Gamma(5/24) Gamma(7/24) Gamma(11/24)
    is the expected number of visits to the origin, and q = 1 / u(3).
    """
    u = math.sqrt(6) / (32 * math.pi**3) * gamma_fn(1 / 24) * gamma_fn(5 / 24) * gamma_fn(7 / 24) * gamma_fn(11 / 24)
    return 1 / u


R3 = 1 / (6 * z3_escape_probability())


def phi_of(a: float, r3: float = R3) -> float:
    return math.pi * r3 * a


def typical_counts(s: float, n: float, radius_ratio: float, r_inner: float, a: float) -> tuple[float, float]:
    """(cylinder count 2 s ln^2 n / ln(R/R'), ball count 4 s r' ln n / a)."""
    if s <= 0 or radius_ratio <= 1 or a <= 0:
        raise ValueError("need s > 0, R/R' > 1, a > 0")
    ln = math.log(n)
    return 2 * s * ln * ln / math.log(radius_ratio), 4 * s * r_inner * ln / a


def excursion_ratio(r_inner: float, h: float, radius_ratio: float) -> float:
    return 2 * r_inner / h * math.log(radius_ratio)


def hitting_constants(s: float, z: float, a: float, r_inner: float, q: float, n: float) -> tuple[float, float]:
    """Hit probability Delta = (3 / 2pi) q / r' and the residual of Delta z^2 N_B = alpha(z) ln n."""
    if min(s, z, a, r_inner, q, n) <= 0:
        raise ValueError("inputs must be positive")
    delta = 3 / (2 * math.pi) * q / r_inner
    phi = phi_of(a, 1 / (6 * q))
    nb = 4 * s * r_inner * math.log(n) / a
    alpha = s * z * z / phi
    return delta, abs(delta * z * z * nb - alpha * math.log(n))


@dataclass(frozen=True)
class TwoDConstants:
    p_out: float  # p_{k->j}
    p_in: float  # p_{j->k}
    normalized: float  # p_{k->j} N-bar / ln n
    target: float  # 2 s / (rho_j - rho_k)


def two_d_constants(n: float, L: int, M: float, h: float, k: int, j: int, s: float = 1.0) -> TwoDConstants:
    """Annulus crossing probabilities with R_k = n^(k/L) M^2 h and R'_k = R_k / M."""
    if not 0 <= k < j <= L:
        raise ValueError("need 0 <= k < j <= L")
    R = M * M * h
    Rk, Rj = n ** (k / L) * R, n ** (j / L) * R
    Rk_in, Rj_in = Rk / M, Rj / M
    denom = math.log(Rj) - math.log(Rk_in)
    if denom <= 0:
        raise ValueError("degenerate radii: ln R_j - ln R'_k must be positive")
    p_out = (math.log(Rk) - math.log(Rk_in)) / denom
    p_in = (math.log(Rj) - math.log(Rj_in)) / denom
    nbar = 2 * s * math.log(n) ** 2 / math.log(M)
    return TwoDConstants(p_out, p_in, p_out * nbar / math.log(n), 2 * s / ((j - k) / L))


def disk_hit_probability(r_start: float, r_in: float, r_out: float) -> float:
    """Planar Brownian motion from radius r_start: P(hit radius r_in before r_out)."""
    return math.log(r_out / r_start) / math.log(r_out / r_in)


@dataclass(frozen=True)
class CoverPrediction:
    a: float
    n: float
    phi: float
    box_time: float
    cover_time: float
    mixing_time: float
    convention: str


def cover_prediction(a: float, n: float, convention: str = "srw", r3: float = R3) -> CoverPrediction:
    """Leading-order cover and mixing times of the thin torus.

    ``convention`` "srw" counts simple-random-walk steps, "lazy" counts lazy
    steps (twice as many).
    """
    if a <= 0 or n <= 1:
        raise ValueError("need a > 0 and n > 1")
    if convention not in ("srw", "lazy"):
        raise ValueError("convention is 'srw' or 'lazy'")
    phi = phi_of(a, r3)
    box = 1.5 * 4 / math.pi * n * n * math.log(n) ** 2
    if convention == "lazy":
        box *= 2
    return CoverPrediction(a, n, phi, box, (1 + 2 * phi) * box, psi_closed(phi) * box, convention)
