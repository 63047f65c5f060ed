"""Excursion decomposition and the statistics built on it.

An excursion across an annulus (inner set A inside outer set D) runs from
the last step outside D before entering A (start), through the first step
in A (hit), to the first later step outside D (end).  [start, hit) is the
external part, [hit, end] the internal part.  Only completed excursions
are recorded.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from .asymptotics import b_alpha
from .asymptotics import typical_counts as _typical_counts
from .lattice import Graph, RadiiSchedule, Region, region_mask, torus_distance_2d


@dataclass(frozen=True)
class ExcursionRecord:
    annulus_id: int
    start_step: int
    hit_step: int
    end_step: int
    entry_point: int
    hit_point: int
    exit_point: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _masks(annulus, graph: Graph | None):
    if isinstance(annulus, Region):
        if graph is None:
            raise ValueError("a Region needs its graph")
        if not annulus.is_annulus:
            raise ValueError("excursions need an annulus region")
        return region_mask(graph, annulus.inner_region()), region_mask(graph, annulus.outer_region())
    inner, outer = annulus
    inner, outer = np.asarray(inner, dtype=bool), np.asarray(outer, dtype=bool)
    if np.any(inner & ~outer):
        raise ValueError("inner set must lie inside the outer set")
    return inner, outer


def excursion_intervals(path, annulus, graph: Graph | None = None) -> np.ndarray:
    """(k, 3) array of (start, hit, end) steps."""
    inner, outer = _masks(annulus, graph)
    return K.count_excursions(np.asarray(path, dtype=np.int64), inner, outer)


def decompose_excursions(path, annulus, graph: Graph | None = None, annulus_id: int = 0) -> list[ExcursionRecord]:
    """Maximal disjoint excursions of ``path`` in path order.

    ``annulus`` is an annulus ``Region`` (with ``graph``) or a pair of
    boolean masks (inner, outer).
    """
    path = np.asarray(path, dtype=np.int64)
    iv = excursion_intervals(path, annulus, graph)
    return [
        ExcursionRecord(annulus_id, int(a), int(b), int(c), int(path[a + 1]), int(path[b]), int(path[c]))
        for a, b, c in iv
    ]


def write_jsonl(records: Sequence[ExcursionRecord], fh):
    for r in records:
        fh.write(r.to_json() + "\n")


def read_jsonl(fh) -> list[ExcursionRecord]:
    return [ExcursionRecord(**json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------- counts and types


def typical_counts(s: float, n: float, schedule: RadiiSchedule, a: float) -> tuple[float, float]:
    """Typical cylinder and ball excursion counts by time s times the 2D cover time."""
    return _typical_counts(s, n, schedule.M, schedule.r_inner, a)


@dataclass(frozen=True)
class ExcursionCounts:
    """Counts of completed excursions up to the checkpoint.

    ``cylinder[k]`` counts level-k excursions, ``ball`` counts excursions of
    the ball annulus; ``checkpoint`` is None when the path ended before the
    required number of top-level excursions (counts then cover the path).
    """

    cylinder: tuple[int, ...]
    ball: int
    checkpoint: int | None
    target: int


def count_to_checkpoint(path, graph: Graph, schedule: RadiiSchedule, bases: Sequence, ball_center, s: float, n: float, a: float) -> ExcursionCounts:
    """Per-level counts until the ceil(N_C)-th top-level excursion completes.

    ``bases[k]`` is the base point of the level-k cylinder annulus.
    """
    path = np.asarray(path, dtype=np.int64)
    if len(bases) != schedule.L + 1:
        raise ValueError("need one base point per level")
    nc, _ = typical_counts(s, n, schedule, a)
    target = math.ceil(nc)
    top = excursion_intervals(path, schedule.cylinder_annulus(schedule.L, bases[-1]), graph)
    checkpoint = int(top[target - 1, 2]) if len(top) >= target else None
    horizon = checkpoint if checkpoint is not None else len(path) - 1
    counts = []
    for k in range(schedule.L + 1):
        iv = excursion_intervals(path, schedule.cylinder_annulus(k, bases[k]), graph)
        counts.append(int(np.sum(iv[:, 2] <= horizon)))
    biv = excursion_intervals(path, schedule.ball_annulus(ball_center), graph)
    return ExcursionCounts(tuple(counts), int(np.sum(biv[:, 2] <= horizon)), checkpoint, target)


@dataclass(frozen=True)
class TypeProfile:
    z: tuple[float, ...]
    eta: float
    s: float
    ball_z: float | None = None
    rule: str = "largest grid z whose lower threshold is met"


def _grid(eta: float) -> np.ndarray:
    k = round(1 / eta)
    if eta <= 0 or abs(k * eta - 1) > 1e-9:
        raise ValueError(f"eta must divide 1, got {eta}")
    return np.arange(k + 1) / k


def grid_type(count: float, typical: float, eta: float, shift: float) -> float:
    """Largest grid z with count >= (z - shift*eta)_+^2 * typical."""
    g = _grid(eta)
    thr = np.maximum(g - shift * eta, 0.0) ** 2 * typical
    ok = np.flatnonzero(count >= thr - 1e-12)
    return float(g[ok[-1]]) if len(ok) else 0.0


def classify_type(counts: ExcursionCounts, s: float, eta: float, schedule: RadiiSchedule, n: float, a: float) -> TypeProfile:
    """z-type of the counts: thresholds (z - 2 eta)^2 for cylinders, (z - 3 eta)^2 for the ball."""
    nc, nb = typical_counts(s, n, schedule, a)
    z = [grid_type(c, nc, eta, 2) for c in counts.cylinder[:-1]] + [1.0]
    return TypeProfile(tuple(z), eta, s, grid_type(counts.ball, nb, eta, 3))


def admissible(profile, s: float, L: int | None = None, phi: float | None = None) -> bool:
    """sqrt(s) <= min_k (1 - k/L) / (1 - z_k) over k < L; equivalently b_{k/L}(z_k) >= 0."""
    z = profile.z if isinstance(profile, TypeProfile) else tuple(profile)
    L = len(z) - 1 if L is None else L
    if len(z) != L + 1:
        raise ValueError("profile needs L+1 entries")
    t = math.sqrt(s)
    for k in range(L):
        if z[k] < 1 and t * (1 - z[k]) > 1 - k / L + 1e-12:
            return False
    return True


def admissible_by_b(profile, s: float, phi: float = 1.0) -> bool:
    """Same predicate through b_rho(z) >= 0 (phi does not enter b)."""
    z = profile.z if isinstance(profile, TypeProfile) else tuple(profile)
    L = len(z) - 1
    return all(b_alpha(k / L, z[k], s, phi)[0] >= -1e-12 for k in range(L))


# ---------------------------------------------------------------- uncovered set and lamps


def uncovered_set(visit_times: np.ndarray, t: float) -> np.ndarray:
    """Vertices first hit strictly after time t."""
    return np.flatnonzero(np.asarray(visit_times) > t)


def separated_centers(n: int, separation: float, exclude=None, exclude_radius: float = 0.0) -> list[tuple[int, int]]:
    """Greedy lexicographic maximal set of base points with pairwise torus distance >= separation."""
    chosen: list[tuple[int, int]] = []
    for i in range(n):
        for j in range(n):
            p = (i, j)
            if exclude is not None and torus_distance_2d(p, exclude, n) < exclude_radius:
                continue
            if all(torus_distance_2d(p, q, n) >= separation for q in chosen):
                chosen.append(p)
    return chosen


class CylinderDiscrepancy:
    """Precomputed cylinder memberships for repeated discrepancy evaluation."""

    def __init__(self, graph: Graph, centers: Sequence, radius: float):
        n = graph.shape[0]
        for i, p in enumerate(centers):
            for q in centers[i + 1 :]:
                if torus_distance_2d(p, q, n) < 4 * radius:
                    raise ValueError(f"centers {p} and {q} closer than 4 x radius")
        rows, cols = [], []
        for i, c in enumerate(centers):
            m = np.flatnonzero(region_mask(graph, Region.cylinder(c, radius)))
            rows.append(np.full(len(m), i))
            cols.append(m)
        self.centers = list(centers)
        self.radius = radius
        self.sizes = np.array([len(c) for c in cols])
        self.membership = sp.csr_matrix(
            (np.ones(sum(self.sizes)), (np.concatenate(rows), np.concatenate(cols))), shape=(len(centers), graph.num_vertices)
        )

    def __call__(self, lamps) -> tuple[np.ndarray, float]:
        lamps = getattr(lamps, "lamps", lamps)
        on = self.membership @ np.asarray(lamps, dtype=float).T
        D = self.sizes[:, None] - 2 * on if np.ndim(lamps) == 2 else self.sizes - 2 * on
        return D, D.max(axis=0)


def lamp_discrepancy(lamps, graph: Graph, centers: Sequence, radius: float) -> tuple[np.ndarray, float]:
    """Off-minus-on lamp counts over cylinders C(v, radius) and their maximum."""
    D, U = CylinderDiscrepancy(graph, centers, radius)(lamps)
    return D, float(U)


# ---------------------------------------------------------------- witness parameters


@dataclass(frozen=True)
class WitnessParams:
    rho: float
    delta: float
    w: float
    z: float
    s: float
    phi: float

    @property
    def lam(self) -> float:
        return 2 * self.s * (self.w - self.z + self.delta) ** 2 / (self.rho - self.delta) ** 2

    @property
    def A(self) -> float:
        return ((self.z - self.delta) * self.rho - self.w * self.delta) / (self.w - self.z + self.delta)

    def violations(self) -> list[str]:
        r, d, w, z, s, phi = self.rho, self.delta, self.w, self.z, self.s, self.phi
        out = []
        if not (0 < r <= 1 and 0 < w <= 1 and 0 < z <= 1 and d > 0):
            return ["parameters out of range"]
        if not w > z > (1 + w / r) * d:
            out.append("ordering w > z > (1 + w/rho) delta")
        if w - d < 0 or z + 3 * d > 1 or b_alpha(r, w - d, s, phi)[0] < 2 * d:
            out.append("b_rho(w - delta) >= 2 delta")
        elif s * (z + 3 * d) ** 2 / phi + self.lam * (r - d) > r - 5 * d:
            out.append("alpha(z + 3 delta) + lambda (rho - delta) <= rho - 5 delta")
        if not self.lam < 2:
            out.append("lambda < 2")
        if not self.A > 0:
            out.append("A > 0")
        return out


def find_witness_params(s: float, phi: float) -> WitnessParams:
    """Search for parameters meeting the witness inequalities at time parameter s.

    Such parameters exist for every s below the threshold; z is taken at
    the minimizer of alpha(z) + 2 s (w - z)^2 / rho.
    """
    t = math.sqrt(s)
    for delta in (1e-2, 3e-3, 1e-3, 3e-4, 1e-4):
        for rho in np.linspace(0.02, 0.98, 49):
            z_lo = max(0.0, 1 - (1 - rho) / t)
            for w in np.linspace(z_lo, 1.0, 41)[1:]:
                z = (2 / rho) * w / (2 / rho + 1 / phi)
                p = WitnessParams(float(rho), delta, float(w), float(z), s, phi)
                if not p.violations():
                    return p
    raise ValueError(f"no witness parameters found at s={s}, phi={phi}")


# ---------------------------------------------------------------- planar concentration


@dataclass(frozen=True)
class PlanarCounts:
    counts: np.ndarray
    typical: float
    steps: int
    outer_radius: float
    inner_radius: float

    def fraction_within(self, rel: float) -> float:
        return float(np.mean(np.abs(self.counts - self.typical) <= rel * self.typical))


def planar_excursion_counts(n: int, s: float, trials: int, seed: int, outer_radius: float | None = None, ratio: float = 2.0) -> PlanarCounts:
    """Completed excursions of Z_n^2 walks across disk annuli, run s (4/pi) n^2 ln^2 n steps.

    The annulus is centred at the origin with outer radius R (default the
    largest integer below n/2) and inner radius R/ratio; each trial starts
    at a uniform vertex.  The typical count is 2 s ln^2 n / ln(ratio).
    """
    from .lattice import torus
    from .walk_engine import trial_rng

    g = torus((n, n))
    R = float(math.ceil(n / 2) - 1) if outer_radius is None else float(outer_radius)
    r = R / ratio
    inner = region_mask(g, Region.cylinder((0, 0), r))
    outer = region_mask(g, Region.cylinder((0, 0), R))
    steps = int(round(s * 4 / math.pi * n * n * math.log(n) ** 2))
    counts = np.empty(trials, dtype=np.int64)
    for t in range(trials):
        rng = trial_rng(seed, "planar-excursions", t)
        start = int(rng.integers(g.num_vertices))
        counts[t] = K.excursion_count_online(g.neighbors, g.degree, start, steps, False, rng, inner, outer)
    typical = 2 * s * math.log(n) ** 2 / math.log(ratio)
    return PlanarCounts(counts, typical, steps, R, r)
