"""Mixing-time measurement for lamplighter chains.

Exact total-variation curves on tiny base graphs, Monte Carlo lower bounds
from threshold events of lamp statistics, the exponential-moment upper
certificate E 2^|U cap U'| over pairs of independent walks, and scans that
bracket the mixing threshold on thin tori.

Given the walk, the lamps are i.i.d. fair bits on every vertex the walk
has moved through (including the start once it has moved) and off
elsewhere; the Monte Carlo routines sample lamps this way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels as K
from .asymptotics import R3, psi_closed
from .excursion_lab import CylinderDiscrepancy, separated_centers
from .lattice import Graph, TorusSpec, build_torus
from .walk_engine import first_hit_times, trial_rng

STATE_LIMIT = 10**6
DEFAULT_DELTA = 1 / (2 * math.e)


@dataclass(frozen=True)
class TVCurve:
    times: np.ndarray
    tv: np.ndarray
    method: str
    tv_events: np.ndarray | None = None  # exact curves: max over events of |mu(A) - pi(A)|

    def mixing_time(self, delta: float = DEFAULT_DELTA) -> int | None:
        below = np.flatnonzero(self.tv <= delta)
        return int(self.times[below[0]]) if len(below) else None


def _check_state_space(graph: Graph) -> int:
    V = graph.num_vertices
    size = V * 2**V
    if size > STATE_LIMIT:
        raise ValueError(f"lamplighter state space |V| 2^|V| = {size} exceeds {STATE_LIMIT}")
    return size


def lamplighter_matrix(graph: Graph) -> sp.csr_matrix:
    """Lazy lamplighter transition matrix on states f * |V| + x (f a lamp bitmask)."""
    V = graph.num_vertices
    S = _check_state_space(graph)
    f = np.repeat(np.arange(2**V, dtype=np.int64), V)
    x = np.tile(np.arange(V, dtype=np.int64), 2**V)
    rows, cols, vals = [np.arange(S)], [np.arange(S)], [np.full(S, 0.5)]
    for j in range(graph.max_degree):
        y = graph.neighbors[x, j]
        ok = y >= 0
        p = 0.5 / graph.degree[x[ok]]
        base = f[ok] & ~(1 << x[ok]) & ~(1 << y[ok])
        for bx in (0, 1):
            for by in (0, 1):
                g = base | (bx << x[ok]) | (by << y[ok])
                rows.append(np.flatnonzero(ok))
                cols.append(g * V + y[ok])
                vals.append(p / 4)
    P = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(S, S))
    return P.tocsr()


def lamplighter_stationary(graph: Graph) -> np.ndarray:
    V = graph.num_vertices
    pos = graph.degree / graph.degree.sum()
    return np.tile(pos, 2**V) / 2**V


def exact_tv_from(graph: Graph, starts: Sequence[int], horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """TV to stationarity for each start state; returns (l1 form, event form), shape (len(starts), horizon+1)."""
    P = lamplighter_matrix(graph)
    PT = P.T.tocsr()
    pi = lamplighter_stationary(graph)
    S = len(pi)
    mu = np.zeros((S, len(starts)))
    mu[np.asarray(starts), np.arange(len(starts))] = 1.0
    l1 = np.empty((len(starts), horizon + 1))
    ev = np.empty_like(l1)
    for t in range(horizon + 1):
        d = mu - pi[:, None]
        l1[:, t] = 0.5 * np.abs(d).sum(axis=0)
        ev[:, t] = np.clip(d, 0, None).sum(axis=0)
        if t < horizon:
            mu = PT @ mu
    return l1, ev


def exact_tv_curve(base_graph: Graph, horizon: int, delta: float = DEFAULT_DELTA) -> tuple[TVCurve, int | None]:
    """Worst-start TV curve of the lazy lamplighter chain, starts with all lamps off.

    Returns the curve and the first time it is <= delta (None if beyond horizon).
    """
    V = base_graph.num_vertices
    l1, ev = exact_tv_from(base_graph, list(range(V)), horizon)
    curve = TVCurve(np.arange(horizon + 1), l1.max(axis=0), "exact", ev.max(axis=0))
    return curve, curve.mixing_time(delta)


def _visited_states(graph: Graph):
    V = graph.num_vertices
    full = (1 << V) - 1
    states = [(S, x) for S in range(1, full) for x in range(V) if S >> x & 1]
    return states, {st: i for i, st in enumerate(states)}, full


def expected_cover_time(graph: Graph, start: int, lazy: bool) -> float:
    """Exact expected cover time via the absorbing chain on (visited set, position)."""
    V = graph.num_vertices
    if V * 2**V > STATE_LIMIT:
        raise ValueError("graph too large for the exact cover-time oracle")
    states, index, full = _visited_states(graph)
    rows, cols, vals = [], [], []
    for i, (S, x) in enumerate(states):
        d = int(graph.degree[x])
        if lazy:
            rows.append(i), cols.append(i), vals.append(0.5)
        p = (0.5 if lazy else 1.0) / d
        for y in graph.neighbors[x, :d]:
            T = S | (1 << int(y))
            if T != full:
                rows.append(i), cols.append(index[(T, int(y))]), vals.append(p)
    n = len(states)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    times = spla.spsolve((sp.identity(n) - Q).tocsc(), np.ones(n))
    return float(times[index[(1 << start, start)]])


def expected_hitting_time(graph: Graph, start: int, target: int, lazy: bool) -> float:
    """Exact E_start[tau_target] from a linear solve."""
    if start == target:
        return 0.0
    P = graph.transition_matrix(lazy)
    keep = np.flatnonzero(np.arange(graph.num_vertices) != target)
    A = (sp.identity(len(keep)) - P[keep][:, keep]).tocsc()
    h = spla.spsolve(A, np.ones(len(keep)))
    return float(h[np.searchsorted(keep, start)])


# ---------------------------------------------------------------- witness lower bound


@dataclass(frozen=True)
class WitnessBound:
    lower: float
    raw: float
    stderr: float
    threshold: float
    undersampled: bool


def threshold_tv_lower(p_values: np.ndarray, q_values: np.ndarray, sigmas: float = 3.0) -> WitnessBound:
    """max_c |P(S <= c) - Q(S <= c)| minus ``sigmas`` standard errors, clamped to [0, 1]."""
    p_values, q_values = np.sort(p_values), np.sort(q_values)
    cuts = np.unique(np.concatenate([p_values, q_values]))
    Fp = np.searchsorted(p_values, cuts, side="right") / len(p_values)
    Fq = np.searchsorted(q_values, cuts, side="right") / len(q_values)
    gap = np.abs(Fp - Fq)
    i = int(np.argmax(gap))
    se = math.sqrt(Fp[i] * (1 - Fp[i]) / len(p_values) + Fq[i] * (1 - Fq[i]) / len(q_values))
    lower = min(max(gap[i] - sigmas * se, 0.0), 1.0)
    return WitnessBound(lower, float(gap[i]), se, float(cuts[i]), se > 0.05)


def on_count(lamps: np.ndarray) -> np.ndarray:
    return np.asarray(lamps, dtype=np.int64).sum(axis=-1)


def discrepancy_statistic(graph: Graph, radius: float) -> Callable:
    """U_n over a lexicographic maximal 4*radius-separated set of cylinder centers."""
    centers = separated_centers(graph.shape[0], 4 * radius)
    cd = CylinderDiscrepancy(graph, centers, radius)
    return lambda lamps: cd(np.atleast_2d(lamps))[1]


def _resolve_statistic(graph: Graph, statistic):
    if callable(statistic):
        return statistic
    if statistic == "on_count":
        return on_count
    if statistic in (None, "discrepancy"):
        shape = graph.shape
        if shape is None or len(shape) not in (2, 3) or not graph.periodic:
            if statistic is None:
                return on_count
            raise ValueError("the discrepancy statistic needs a 2D or 3D torus")
        radius = shape[2] if len(shape) == 3 else 1.0
        return discrepancy_statistic(graph, min(radius, shape[0] / 2 - 1))
    raise ValueError(f"unknown statistic {statistic!r}")


def sample_lamps_at(graph: Graph, t: int, trials: int, rng: np.random.Generator, start: int = 0, lazy: bool = True) -> np.ndarray:
    """(trials, V) lamp configurations after t lamplighter steps from all-off."""
    V = graph.num_vertices
    out = np.zeros((trials, V), dtype=np.uint8)
    touched = np.zeros(V, dtype=np.bool_)
    for i in range(trials):
        touched[:] = False
        K.randomized_set(graph.neighbors, graph.degree, int(start), int(t), lazy, rng, touched)
        bits = rng.integers(0, 2, V, dtype=np.uint8)
        out[i] = bits & touched
    return out


def witness_tv_lower(graph: Graph, t: int, statistic=None, trials: int = 2000, rng=None, start: int = 0) -> WitnessBound:
    """Lower bound on the lamp-marginal TV distance at lazy time t.

    ``statistic`` maps a (k, V) lamp array to k values; strings "on_count"
    and "discrepancy" select the built-in ones.
    """
    rng = rng if rng is not None else np.random.default_rng()
    stat = _resolve_statistic(graph, statistic)
    p = np.asarray(stat(sample_lamps_at(graph, t, trials, rng, start)), dtype=float)
    q = np.asarray(stat(rng.integers(0, 2, (trials, graph.num_vertices), dtype=np.uint8)), dtype=float)
    return threshold_tv_lower(p, q)


# ---------------------------------------------------------------- certificate


def box_time(graph: Graph) -> float:
    """Cover time of the 2D projection in simple-random-walk steps, (6/pi) n^2 ln^2 n."""
    if graph.shape is None or len(graph.shape) != 3:
        raise ValueError("time unit defined for thin tori; pass time_unit explicitly")
    n = graph.shape[0]
    return 6 / math.pi * n * n * math.log(n) ** 2


@dataclass(frozen=True)
class CertificateResult:
    s_grid: np.ndarray
    log2_mean: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    cap_hits: np.ndarray
    pairs: int
    pass_threshold: float = 1.1

    @property
    def passing(self) -> np.ndarray:
        return self.mean <= self.pass_threshold

    def crossing(self) -> float | None:
        ok = np.flatnonzero(self.passing)
        return float(self.s_grid[ok[0]]) if len(ok) else None


def _log2_mean_exp2(x: np.ndarray) -> np.ndarray:
    """log2 of the column means of 2**x, shifted by the column max so constant columns are exact."""
    top = x.max(axis=0)
    return top + np.log2(np.exp2(x - top).mean(axis=0))


def certificate_from_overlaps(s_grid, overlaps: np.ndarray, cap: int = 1000, pass_threshold: float = 1.1) -> CertificateResult:
    """``overlaps[i, j]`` = |U cap U'| of pair i at s_grid[j]."""
    x = np.asarray(overlaps, dtype=float)
    pairs = x.shape[0]
    log2_mean = _log2_mean_exp2(x)
    finite = log2_mean < cap
    mean = np.where(finite, np.exp2(np.minimum(log2_mean, cap)), np.inf)
    # second moment in log space; the variance is only reported where it is finite
    log2_second = _log2_mean_exp2(2 * x)
    ok = finite & (log2_second < cap)
    var = np.full(len(mean), np.inf)
    var[ok] = np.maximum(np.exp2(log2_second[ok]) - mean[ok] ** 2, 0)
    se = np.sqrt(var / max(pairs - 1, 1))
    return CertificateResult(np.asarray(s_grid, dtype=float), log2_mean, mean, se, (x > cap).mean(axis=0), pairs, pass_threshold)


def overlap_counts(first_a: np.ndarray, first_b: np.ndarray, times: np.ndarray) -> np.ndarray:
    """|{v: both walks first hit v after time T}| for each T in ``times``."""
    m = np.sort(np.minimum(first_a, first_b))
    return len(m) - np.searchsorted(m, times, side="right")


def exp_moment_certificate(graph: Graph, s_grid, trials: int, rng=None, time_unit: float | None = None, seed: int | None = None, cap: int = 1000) -> CertificateResult:
    """E 2^|U(sT) cap U'(sT)| over ``trials`` pairs of independent simple random walks.

    T is ``time_unit`` (default the 2D-projection cover time) and each walk
    starts at an independent uniform vertex.  Every pair serves all s at
    once, so the estimate is exactly non-increasing in s.
    """
    if trials < 1000:
        raise ValueError("need at least 1e3 walk pairs")
    unit = box_time(graph) if time_unit is None else time_unit
    s_grid = np.asarray(s_grid, dtype=float)
    times = np.round(s_grid * unit).astype(np.int64)
    horizon = int(times.max())
    V = graph.num_vertices
    out = np.empty((trials, len(s_grid)), dtype=np.int64)
    for i in range(trials):
        r = rng if seed is None else trial_rng(seed, "certificate", i)
        a = first_hit_times(graph, int(r.integers(V)), horizon, False, r)
        b = first_hit_times(graph, int(r.integers(V)), horizon, False, r)
        out[i] = overlap_counts(a, b, times)
    return certificate_from_overlaps(s_grid, out, cap)


# ---------------------------------------------------------------- cutoff scan


@dataclass(frozen=True)
class ScanRow:
    a: float
    n: int
    h: int
    phi: float
    s: float
    s_lazy: float
    lower_bound: float
    lower_se: float
    certificate: float
    certificate_log2: float
    psi_prediction: float
    seed: int


@dataclass(frozen=True)
class Bracket:
    a: float
    n: int
    phi: float
    lower_edge: float | None
    upper_edge: float | None
    psi_prediction: float

    @property
    def midpoint(self) -> float | None:
        if self.lower_edge is None or self.upper_edge is None:
            return None
        return 0.5 * (self.lower_edge + self.upper_edge)

    @property
    def normalized_midpoint(self) -> float | None:
        m = self.midpoint
        return None if m is None else m / (1 + 2 * self.phi)


@dataclass
class ScanResult:
    rows: list[ScanRow] = field(default_factory=list)
    brackets: list[Bracket] = field(default_factory=list)


def scan_height(a: float, n: int) -> int:
    """floor(a ln n), raised to 3 so the torus stays simple."""
    return max(3, int(math.floor(a * math.log(n) + 1e-12)))


def _scan_statistics(graph: Graph) -> list[Callable]:
    n, h = graph.shape[0], graph.shape[2]
    stats = [on_count]
    for radius in (h / 2, float(h)):
        if 4 * radius < n and radius < n / 2:
            stats.append(discrepancy_statistic(graph, radius))
    return stats


def scan_config(a: float, n: int, s_grid, trials: int, seed: int, r3: float = R3) -> tuple[list[ScanRow], Bracket]:
    """Witness lower bound and certificate along s_grid for one thin torus.

    Time is counted in simple-random-walk moves, s * (6/pi) n^2 ln^2 n; the
    lazy chain needs about twice as many steps (reported as ``s_lazy``).
    ``trials`` walks feed the witness; consecutive pairs feed the certificate.
    """
    h = scan_height(a, n)
    spec = TorusSpec(n, h)
    graph = build_torus(spec)
    phi = math.pi * r3 * spec.effective_a
    psi = psi_closed(phi)
    s_grid = np.asarray(sorted(s_grid), dtype=float)
    unit = box_time(graph)
    moves = np.round(s_grid * unit).astype(np.int64)
    horizon = int(moves.max())
    V = graph.num_vertices
    stats = _scan_statistics(graph)
    hits = np.empty((trials, V), dtype=np.int64)
    for i in range(trials):
        rng = trial_rng(seed, f"scan-{a}-{n}", i)
        hits[i] = first_hit_times(graph, int(rng.integers(V)), horizon, False, rng)
    noise = trial_rng(seed, f"scan-lamps-{a}-{n}", 0)
    bits = noise.integers(0, 2, (trials, V), dtype=np.uint8)
    ref = noise.integers(0, 2, (trials, V), dtype=np.uint8)
    q_vals = [np.asarray(st(ref), dtype=float) for st in stats]
    pairs = trials // 2
    overlaps = np.empty((pairs, len(s_grid)), dtype=np.int64)
    for i in range(pairs):
        overlaps[i] = overlap_counts(hits[2 * i], hits[2 * i + 1], moves)
    cert = certificate_from_overlaps(s_grid, overlaps) if pairs else None
    rows = []
    for j, (s, K_moves) in enumerate(zip(s_grid, moves)):
        touched = (hits <= K_moves) if K_moves > 0 else np.zeros_like(hits, dtype=bool)
        lamps = bits & touched
        best = None
        for st, qv in zip(stats, q_vals):
            wb = threshold_tv_lower(np.asarray(st(lamps), dtype=float), qv)
            if best is None or wb.lower > best.lower:
                best = wb
        rows.append(
            ScanRow(a, n, h, phi, float(s), float(2 * s), best.lower, best.stderr,
                    float(cert.mean[j]) if cert else math.nan, float(cert.log2_mean[j]) if cert else math.nan, psi, seed)
        )
    lower = [r.s for r in rows if r.lower_bound > 0.5]
    upper = [r.s for r in rows if r.certificate <= 1.1]
    bracket = Bracket(a, n, phi, max(lower) if lower else None, min(upper) if upper else None, psi)
    return rows, bracket


def cutoff_scan(a_list, n_list, s_grid, trials: int, seed: int) -> ScanResult:
    """Scan every (a, n); brackets are [max s with lower bound > 0.5, min s with certificate <= 1.1]."""
    out = ScanResult()
    for n in n_list:
        for a in a_list:
            rows, br = scan_config(a, int(n), s_grid, trials, seed)
            out.rows.extend(rows)
            out.brackets.append(br)
    return out
