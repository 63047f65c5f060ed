"""Electrical-network computations on finite graphs with unit resistors.

Effective resistance, energy-minimizing flows, killed-walk flows, Green's
functions of stopped walks, Gaussian free field sampling and the
GFF-based cover-time estimate.

The GFF uses density proportional to exp(-1/4 sum over ordered neighbor
pairs (eta_u - eta_v)^2): the precision matrix is the graph Laplacian, so
E(eta_u - eta_v)^2 equals the effective resistance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import Graph, Region, region_mask

DENSE_LIMIT = 4000


class FactorizationError(np.linalg.LinAlgError):
    pass


class _Solver:
    """Factorized symmetric positive definite matrix (dense Cholesky or sparse LU)."""

    def __init__(self, A: sp.spmatrix, tol: float):
        self.A = sp.csc_matrix(A)
        self.tol = tol
        self.dense = A.shape[0] <= DENSE_LIMIT
        try:
            if self.dense:
                self.factor = la.cho_factor(self.A.toarray(), lower=True)
            else:
                self.factor = spla.splu(self.A)
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise FactorizationError(f"factorization failed: {exc}; {_condition_report(self.A)}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = la.cho_solve(self.factor, b) if self.dense else self.factor.solve(b)
        r = self.A @ x - b
        scale = max(np.abs(b).max(), 1e-300)
        if np.abs(r).max() > self.tol * scale * max(1.0, math.sqrt(self.A.shape[0])):
            raise FactorizationError(f"residual {np.abs(r).max():.3g} above tolerance; {_condition_report(self.A)}")
        return x


def _condition_report(A) -> str:
    try:
        if A.shape[0] <= DENSE_LIMIT:
            return f"condition number {np.linalg.cond(A.toarray()):.3g}"
        big = spla.eigsh(A, k=1, which="LA", return_eigenvectors=False)[0]
        return f"largest eigenvalue {big:.3g}, size {A.shape[0]}"
    except Exception as exc:  # diagnostics only
        return f"condition unavailable ({exc})"


class PotentialSystem:
    """Laplacian of a graph plus cached factorizations.

    The grounded Laplacian (vertex ``ground`` removed) is factorized once
    and reused for resistances and flows.
    """

    def __init__(self, graph: Graph, tol: float = 1e-10, ground: int = 0):
        if graph.num_vertices < 2:
            raise ValueError("need at least two vertices")
        if not graph.is_connected():
            raise ValueError("graph is disconnected; Laplacian solves are singular")
        self.graph = graph
        self.tol = tol
        self.laplacian = graph.laplacian().tocsc()
        self.ground = int(ground)
        keep = np.ones(graph.num_vertices, dtype=bool)
        keep[self.ground] = False
        self._keep = np.flatnonzero(keep)
        self._solver = _Solver(self.laplacian[self._keep][:, self._keep], tol)

    def potential(self, divergence: np.ndarray) -> np.ndarray:
        """phi with L phi = divergence, phi[ground] = 0."""
        phi = np.zeros(self.graph.num_vertices)
        phi[self._keep] = self._solver.solve(np.asarray(divergence, dtype=float)[self._keep])
        return phi

    def green_grounded(self) -> np.ndarray:
        """Dense inverse of the grounded Laplacian padded with a zero row/column."""
        V = self.graph.num_vertices
        if V > DENSE_LIMIT:
            raise ValueError(f"dense Green matrix limited to {DENSE_LIMIT} vertices")
        G = np.zeros((V, V))
        G[np.ix_(self._keep, self._keep)] = self._solver.solve(np.eye(V - 1))
        return G


def effective_resistance(system: PotentialSystem, u: int, v: int) -> float:
    u, v = int(u), int(v)
    if u == v:
        raise ValueError("effective resistance needs distinct vertices")
    b = np.zeros(system.graph.num_vertices)
    b[u], b[v] = 1.0, -1.0
    phi = system.potential(b)
    return float(phi[u] - phi[v])


def resistance_matrix(system: PotentialSystem) -> np.ndarray:
    """All-pairs effective resistances (dense; small graphs)."""
    G = system.green_grounded()
    d = np.diag(G)
    R = d[:, None] + d[None, :] - 2 * G
    np.fill_diagonal(R, 0.0)
    return R


@dataclass(frozen=True)
class FlowAssignment:
    """Flow on the edges (u, v), u < v, positive in the u -> v direction.

    ``divergence[v]`` is outgoing minus incoming flow at v.
    """

    edges: np.ndarray
    values: np.ndarray
    divergence: np.ndarray

    @property
    def energy(self) -> float:
        return float(np.sum(self.values**2))


def flow_divergence(num_vertices: int, edges: np.ndarray, values: np.ndarray) -> np.ndarray:
    div = np.zeros(num_vertices)
    np.add.at(div, edges[:, 0], values)
    np.add.at(div, edges[:, 1], -values)
    return div


def min_energy_flow(system: PotentialSystem, divergence) -> FlowAssignment:
    """Unit flow of least energy with prescribed divergence (the current flow)."""
    rho = np.asarray(divergence, dtype=float)
    if rho.shape != (system.graph.num_vertices,):
        raise ValueError("divergence must have one entry per vertex")
    if abs(rho.sum()) > 1e-12 * max(1.0, np.abs(rho).sum()):
        raise ValueError(f"unbalanced divergence: sum = {rho.sum():.3g}")
    if abs(0.5 * np.abs(rho).sum() - 1) > 1e-9:
        raise ValueError("divergence must carry unit flow: (1/2) sum |rho| = 1")
    phi = system.potential(rho)
    e = system.graph.edges()
    vals = phi[e[:, 0]] - phi[e[:, 1]]
    return FlowAssignment(e, vals, flow_divergence(system.graph.num_vertices, e, vals))


@dataclass(frozen=True)
class KilledWalkFlow:
    flow: FlowAssignment
    end_distribution: np.ndarray  # P[X_T = v]
    normalized_visits: np.ndarray  # E[visits to v before T] / deg v
    continue_probability: float

    @property
    def energy(self) -> float:
        return self.flow.energy


def killed_walk_flow(system: PotentialSystem, origin: int, kill_rate: float) -> KilledWalkFlow:
    """Flow of expected net crossings of a geometrically killed walk.

    The simple random walk from ``origin`` survives each step with
    probability t = 1 - kill_rate.  The flow on edge (u, v) is
    t (visits(u)/deg u - visits(v)/deg v); its divergence is
    1{origin} - P[X_T = v] and its energy is at most visits(origin)/deg(origin).
    """
    if not 0 < kill_rate < 1:
        raise ValueError("kill_rate must lie in (0, 1)")
    g = system.graph
    t = 1.0 - kill_rate
    P = g.transition_matrix(lazy=False)
    A = (sp.identity(g.num_vertices) - t * P.T).tocsc()
    rhs = np.zeros(g.num_vertices)
    rhs[int(origin)] = 1.0
    occ = spla.spsolve(A, rhs)
    res = np.abs(A @ occ - rhs).max()
    if res > system.tol:
        raise FactorizationError(f"occupation solve residual {res:.3g}")
    ell = occ / g.degree
    e = g.edges()
    vals = t * (ell[e[:, 0]] - ell[e[:, 1]])
    flow = FlowAssignment(e, vals, flow_divergence(g.num_vertices, e, vals))
    return KilledWalkFlow(flow, (1 - t) * occ, ell, t)


# ---------------------------------------------------------------- stopped walks


@dataclass(frozen=True)
class StoppedWalk:
    """Simple random walk on ``inside`` stopped on leaving it."""

    graph: Graph
    inside: np.ndarray  # sorted vertex indices
    boundary: np.ndarray  # outer vertex boundary
    green: np.ndarray  # green[i, j] = G(inside[i], inside[j])

    def local(self, v: int) -> int:
        i = int(np.searchsorted(self.inside, v))
        if i >= len(self.inside) or self.inside[i] != v:
            raise ValueError(f"vertex {v} is not inside the region")
        return i

    def harmonic_measure(self, w: int) -> np.ndarray:
        """P_v[exit at w] for every inside vertex v."""
        g = self.graph
        if w not in set(self.boundary.tolist()):
            raise ValueError(f"{w} is not on the outer boundary")
        P = g.transition_matrix(lazy=False)
        step_out = np.asarray(P[self.inside][:, [w]].todense()).ravel()
        return self.green @ step_out


def stopped_walk(graph: Graph, region, tol: float = 1e-10) -> StoppedWalk:
    """Exact Green's function of the walk killed on exiting ``region``."""
    mask = region_mask(graph, region) if isinstance(region, Region) else _as_mask(graph, region)
    inside = np.flatnonzero(mask)
    P = graph.transition_matrix(lazy=False)
    Q = P[inside][:, inside]
    A = (sp.identity(len(inside)) - Q).tocsc()
    if len(inside) > DENSE_LIMIT:
        raise ValueError(f"stopped Green matrix limited to {DENSE_LIMIT} vertices")
    G = la.solve(A.toarray(), np.eye(len(inside)))
    res = np.abs(A @ G - np.eye(len(inside))).max()
    if res > tol:
        raise FactorizationError(f"Green solve residual {res:.3g}")
    nbrs = graph.neighbors[inside]
    out = np.unique(nbrs[(nbrs >= 0)])
    boundary = out[~mask[out]]
    return StoppedWalk(graph, inside, boundary, G)


def _as_mask(graph: Graph, vertices) -> np.ndarray:
    m = np.zeros(graph.num_vertices, dtype=bool)
    m[np.asarray(vertices, dtype=np.int64)] = True
    return m


def stopped_green(walk: StoppedWalk, v: int, x: int, exit_vertex: int | None = None) -> float:
    """G(v, x) for the stopped walk, or G^w(v, x) conditioned on exiting at ``exit_vertex``.

    The conditional value uses G^w(v, x) = P_x[exit w] / P_v[exit w] * G(v, x).
    """
    i, j = walk.local(v), walk.local(x)
    G = float(walk.green[i, j])
    if exit_vertex is None:
        return G
    hm = walk.harmonic_measure(int(exit_vertex))
    if hm[i] <= 0:
        raise ValueError("exit vertex unreachable from v")
    return hm[j] / hm[i] * G


def conditioned_green_by_h_transform(walk: StoppedWalk, v: int, x: int, exit_vertex: int) -> float:
    """G^w(v, x) computed directly from the Doob-transformed chain.

    Independent of the ratio identity: builds the killed chain conditioned
    on exiting at ``exit_vertex`` and inverts it.
    """
    hm = walk.harmonic_measure(int(exit_vertex))
    P = walk.graph.transition_matrix(lazy=False)
    Q = np.asarray(P[walk.inside][:, walk.inside].todense())
    live = hm > 0
    Qh = Q[np.ix_(live, live)] * hm[live][None, :] / hm[live][:, None]
    Gh = la.solve(np.eye(int(live.sum())) - Qh, np.eye(int(live.sum())))
    idx = np.cumsum(live) - 1
    return float(Gh[idx[walk.local(v)], idx[walk.local(x)]])


# ---------------------------------------------------------------- GFF


@dataclass(frozen=True)
class GFFSample:
    values: np.ndarray  # (samples, V)
    pinned: np.ndarray
    seed: int | None = None

    def save(self, path_prefix: str, graph_name: str = ""):
        """Flat little-endian float64 array plus a JSON header."""
        data = np.ascontiguousarray(self.values, dtype="<f8")
        data.tofile(path_prefix + ".bin")
        header = {"shape": list(data.shape), "dtype": "<f8", "pinned": self.pinned.tolist(), "seed": self.seed, "graph": graph_name}
        with open(path_prefix + ".json", "w") as fh:
            json.dump(header, fh, sort_keys=True)

    @classmethod
    def load(cls, path_prefix: str) -> "GFFSample":
        with open(path_prefix + ".json") as fh:
            header = json.load(fh)
        vals = np.fromfile(path_prefix + ".bin", dtype=header["dtype"]).reshape(header["shape"])
        return cls(vals, np.array(header["pinned"], dtype=np.int64), header["seed"])


class GFFSampler:
    """Exact sampler for the GFF pinned at a vertex or on a Dirichlet set.

    Covariance = inverse of the Laplacian restricted to the free vertices.
    Small systems use a dense Cholesky factor; a square 2D/3D torus pinned
    at one vertex can instead use the Fourier basis (``method="fft"``),
    which diagonalizes the Laplacian exactly.
    """

    def __init__(self, graph: Graph, pinning, method: str = "auto"):
        pinned = np.atleast_1d(np.asarray(pinning, dtype=np.int64))
        if pinned.size == 0:
            raise ValueError("pinning must be nonempty")
        self.graph = graph
        self.pinned = np.unique(pinned)
        free = np.ones(graph.num_vertices, dtype=bool)
        free[self.pinned] = False
        self.free = np.flatnonzero(free)
        fft_ok = graph.periodic and graph.shape is not None and len(self.pinned) == 1
        if method == "auto":
            method = "cholesky" if len(self.free) <= DENSE_LIMIT or not fft_ok else "fft"
        if method == "fft" and not fft_ok:
            raise ValueError("fft sampling needs a torus pinned at a single vertex")
        self.method = method
        if method == "cholesky":
            if len(self.free) > 5 * 10**4:
                raise ValueError("dense factorization limited to 5e4 free vertices")
            Lf = graph.laplacian()[self.free][:, self.free].toarray()
            try:
                self._chol = la.cholesky(Lf, lower=True)
            except np.linalg.LinAlgError as exc:
                raise FactorizationError(f"Cholesky failed: {exc}; condition number {np.linalg.cond(Lf):.3g}") from exc
        elif method == "fft":
            eig = np.zeros(graph.shape)
            for axis, size in enumerate(graph.shape):
                k = np.arange(size)
                lam = 2 - 2 * np.cos(2 * np.pi * k / size)
                eig = eig + lam.reshape([-1 if a == axis else 1 for a in range(len(graph.shape))])
            with np.errstate(divide="ignore"):
                self._scale = np.where(eig > 0, 1 / np.sqrt(eig), 0.0)
        else:
            raise ValueError(f"unknown method {method!r}")

    def covariance(self) -> np.ndarray:
        """Full V x V covariance (zero on pinned rows/columns)."""
        V = self.graph.num_vertices
        C = np.zeros((V, V))
        if self.method == "cholesky":
            inv = la.cho_solve((self._chol, True), np.eye(len(self.free)))
            C[np.ix_(self.free, self.free)] = inv
        else:
            L = self.graph.laplacian().toarray()
            Lp = np.linalg.pinv(L)
            p = self.pinned[0]
            C = Lp - Lp[:, [p]] - Lp[[p], :] + Lp[p, p]
        return C

    def sample(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        V = self.graph.num_vertices
        out = np.zeros((size, V))
        if self.method == "cholesky":
            z = rng.standard_normal((len(self.free), size))
            out[:, self.free] = la.solve_triangular(self._chol.T, z, lower=False).T
            return out
        axes = tuple(range(1, len(self.graph.shape) + 1))
        # unitary DFT of white noise scaled by lambda^-1/2: covariance is the Laplacian pseudo-inverse
        w = rng.standard_normal((size,) + self.graph.shape)
        f = np.fft.fftn(w, axes=axes, norm="ortho") * self._scale
        field = np.fft.ifftn(f, axes=axes, norm="ortho").real.reshape(size, V)
        return field - field[:, self.pinned[:1]]


def sample_gff(system: PotentialSystem, pinning, rng: np.random.Generator, size: int = 1, method: str = "auto") -> GFFSample:
    sampler = GFFSampler(system.graph, pinning, method)
    return GFFSample(sampler.sample(rng, size), sampler.pinned)


@dataclass(frozen=True)
class DingEstimate:
    estimate: float
    stderr: float
    mean_max: float
    mean_max_se: float
    samples: int


def ding_cover_estimate(system: PotentialSystem, samples: int, rng: np.random.Generator, batch: int = 256, method: str = "auto") -> DingEstimate:
    """|E| (E max_v eta_v)^2 for the GFF pinned at vertex 0."""
    if samples < 1000:
        raise ValueError("need at least 1e3 samples")
    sampler = GFFSampler(system.graph, [0], method)
    maxima = []
    done = 0
    while done < samples:
        k = min(batch, samples - done)
        maxima.append(sampler.sample(rng, k).max(axis=1))
        done += k
    m = np.concatenate(maxima)
    mean, se = float(m.mean()), float(m.std(ddof=1) / math.sqrt(samples))
    E = system.graph.num_edges
    return DingEstimate(E * mean * mean, 2 * E * abs(mean) * se, mean, se, samples)


@dataclass(frozen=True)
class SudakovReport:
    difference: float
    stderr: float
    scale: float
    domination_slack: float
    violated: bool


def sudakov_check(first: GFFSampler, second: GFFSampler, mapping, samples: int, rng: np.random.Generator, scale: float | None = None) -> SudakovReport:
    """Compare E max of two Gaussian fields on a common index set.

    ``mapping`` is a (k, 2) array pairing vertices of the first field with
    vertices of the second.  The second field is multiplied by ``scale``;
    by default the largest scale keeping the first field's increments
    dominant is used.  Reports E max(first) - E max(scale * second).
    """
    mapping = np.asarray(mapping, dtype=np.int64)
    if len(np.unique(mapping[:, 0])) != len(mapping) or len(np.unique(mapping[:, 1])) != len(mapping):
        raise ValueError("mapping must be injective")
    C1 = first.covariance()[np.ix_(mapping[:, 0], mapping[:, 0])]
    C2 = second.covariance()[np.ix_(mapping[:, 1], mapping[:, 1])]
    inc1 = np.diag(C1)[:, None] + np.diag(C1)[None, :] - 2 * C1
    inc2 = np.diag(C2)[:, None] + np.diag(C2)[None, :] - 2 * C2
    off = ~np.eye(len(mapping), dtype=bool)
    if scale is None:
        ratios = inc1[off] / np.where(inc2[off] > 0, inc2[off], np.nan)
        scale = float(np.sqrt(np.nanmin(ratios)))
    slack = float(np.min(inc1[off] - scale**2 * inc2[off]))
    if slack < -1e-9:
        raise ValueError(f"increment domination fails by {-slack:.3g}")
    a = first.sample(rng, samples)[:, mapping[:, 0]].max(axis=1)
    b = scale * second.sample(rng, samples)[:, mapping[:, 1]].max(axis=1)
    d = a - b
    diff, se = float(d.mean()), float(d.std(ddof=1) / math.sqrt(samples))
    return SudakovReport(diff, se, scale, slack, diff < -3 * se)


def thin_torus_max_prediction(a: float, n: float, r3: float) -> float:
    """Leading-order E max of the thin-torus GFF: 2 sqrt(r3 + 1/(2 a pi)) sqrt(ln n)."""
    return 2 * math.sqrt(r3 + 1 / (2 * a * math.pi)) * math.sqrt(math.log(n))
