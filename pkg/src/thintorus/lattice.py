"""Finite graphs used throughout the package.

The main object is the thin torus Z_n x Z_n x Z_h.  Cycles, 2D tori, boxes
and complete graphs are also provided because several exact oracles need
them.  Every graph is stored as a padded neighbor table, which is the
layout the compiled walk kernels consume.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp


class Vertex(NamedTuple):
    x1: int
    x2: int
    x3: int


@dataclass(frozen=True)
class TorusSpec:
    """Side length ``n`` and height ``h`` of Z_n^2 x Z_h.

    ``a`` is set only when the height was derived from it, in which case
    ``h == floor(a * ln n)``.
    """

    n: int
    h: int
    a: float | None = None

    def __post_init__(self):
        if int(self.n) != self.n or int(self.h) != self.h:
            raise ValueError("n and h must be integers")
        if self.n < 3 or self.h < 3:
            raise ValueError(f"n and h must be >= 3 to keep the graph simple (got n={self.n}, h={self.h})")
        if self.a is not None and self.a <= 0:
            raise ValueError("a must be positive")

    @classmethod
    def from_height_parameter(cls, n: int, a: float) -> "TorusSpec":
        return cls(n=n, h=height_from_parameter(n, a), a=a)

    @property
    def effective_a(self) -> float:
        """Height parameter implied by the integer height, h / ln n."""
        return self.h / math.log(self.n)

    @property
    def num_vertices(self) -> int:
        return self.n * self.n * self.h

    def vertex(self, x1: int, x2: int, x3: int) -> Vertex:
        return Vertex(x1 % self.n, x2 % self.n, x3 % self.h)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TorusSpec":
        _reject_unknown(d, {"n", "h", "a"}, "TorusSpec")
        return cls(**d)


def height_from_parameter(n: int, a: float) -> int:
    # floor, not rounding; 1e-12 guards exact products such as 3*ln(e^k)
    return int(math.floor(a * math.log(n) + 1e-12))


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph as a padded neighbor table.

    ``neighbors[v, :degree[v]]`` lists the neighbors of ``v``; unused slots
    hold -1.  ``shape`` is the torus/box shape for coordinate-indexed graphs
    (row-major vertex numbering), or ``None``.
    """

    neighbors: np.ndarray
    degree: np.ndarray
    shape: tuple[int, ...] | None = None
    periodic: bool = True
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.neighbors.flags.writeable = False
        self.degree.flags.writeable = False

    @property
    def num_vertices(self) -> int:
        return int(self.degree.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.degree.sum()) // 2

    @property
    def max_degree(self) -> int:
        return int(self.neighbors.shape[1])

    def index(self, v) -> int:
        if isinstance(v, (int, np.integer)):
            if not 0 <= v < self.num_vertices:
                raise ValueError(f"vertex index {v} out of range")
            return int(v)
        if self.shape is None:
            raise ValueError("coordinate vertices need a shaped graph")
        coords = tuple(int(c) for c in v)
        if len(coords) != len(self.shape):
            raise ValueError(f"expected {len(self.shape)} coordinates, got {len(coords)}")
        if self.periodic:
            coords = tuple(c % s for c, s in zip(coords, self.shape))
        return int(np.ravel_multi_index(coords, self.shape))

    def coords(self, index: int) -> tuple[int, ...]:
        if self.shape is None:
            raise ValueError("graph has no coordinates")
        return tuple(int(c) for c in np.unravel_index(int(index), self.shape))

    def coordinate_array(self) -> np.ndarray:
        """(V, dim) integer coordinates of every vertex."""
        if "coords" not in self._cache:
            grids = np.indices(self.shape).reshape(len(self.shape), -1).T
            grids.flags.writeable = False
            self._cache["coords"] = grids
        return self._cache["coords"]

    def neighbors_of(self, v) -> np.ndarray:
        i = self.index(v)
        return self.neighbors[i, : self.degree[i]]

    def edges(self) -> np.ndarray:
        """(E, 2) array of edges with u < v, sorted lexicographically."""
        if "edges" not in self._cache:
            rows = np.repeat(np.arange(self.num_vertices), self.max_degree)
            cols = self.neighbors.ravel()
            keep = (cols >= 0) & (rows < cols)
            e = np.stack([rows[keep], cols[keep]], axis=1)
            e = e[np.lexsort((e[:, 1], e[:, 0]))]
            e.flags.writeable = False
            self._cache["edges"] = e
        return self._cache["edges"]

    def adjacency(self) -> sp.csr_matrix:
        e = self.edges()
        V = self.num_vertices
        ones = np.ones(len(e))
        A = sp.coo_matrix((np.r_[ones, ones], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(V, V))
        return A.tocsr()

    def laplacian(self) -> sp.csr_matrix:
        return (sp.diags(self.degree.astype(float)) - self.adjacency()).tocsr()

    def transition_matrix(self, lazy: bool = True) -> sp.csr_matrix:
        P = sp.diags(1.0 / self.degree) @ self.adjacency()
        if lazy:
            P = 0.5 * (P + sp.identity(self.num_vertices))
        return sp.csr_matrix(P)

    def is_connected(self) -> bool:
        from scipy.sparse.csgraph import connected_components

        return connected_components(self.adjacency(), directed=False)[0] == 1

    def without_edge(self, u: int, v: int) -> "Graph":
        """Copy of the graph with edge {u, v} removed (coordinates kept)."""
        nb = np.array(self.neighbors)
        deg = np.array(self.degree)
        for a, b in ((u, v), (v, u)):
            row = [w for w in nb[a, : deg[a]] if w != b]
            if len(row) == deg[a]:
                raise ValueError(f"{{{u}, {v}}} is not an edge")
            nb[a, :] = -1
            nb[a, : len(row)] = row
            deg[a] = len(row)
        return Graph(nb, deg, self.shape, self.periodic, self.name + f"-minus({u},{v})")


def _from_adjacency_lists(adj: Sequence[Sequence[int]], shape=None, periodic=True, name="") -> Graph:
    deg = np.array([len(a) for a in adj], dtype=np.int64)
    width = int(deg.max()) if len(deg) else 0
    nb = np.full((len(adj), width), -1, dtype=np.int64)
    for v, a in enumerate(adj):
        nb[v, : len(a)] = a
    return Graph(nb, deg, shape, periodic, name)


def torus(shape: Sequence[int]) -> Graph:
    """Periodic grid Z_{d1} x ... x Z_{dk}; every side must be >= 3.

    Neighbor slots are ordered (+axis0, -axis0, +axis1, -axis1, ...).
    """
    shape = tuple(int(s) for s in shape)
    if any(s < 3 for s in shape):
        raise ValueError(f"torus sides must be >= 3, got {shape}")
    V = math.prod(shape)
    coords = np.indices(shape).reshape(len(shape), -1)
    cols = []
    for axis, size in enumerate(shape):
        for sign in (1, -1):
            c = coords.copy()
            c[axis] = (c[axis] + sign) % size
            cols.append(np.ravel_multi_index(tuple(c), shape))
    nb = np.stack(cols, axis=1).astype(np.int64)
    deg = np.full(V, 2 * len(shape), dtype=np.int64)
    name = "torus" + "x".join(str(s) for s in shape)
    return Graph(nb, deg, shape, True, name)


def build_torus(spec: TorusSpec) -> Graph:
    """Thin torus Z_n^2 x Z_h; vertex index is (x1*n + x2)*h + x3."""
    return torus((spec.n, spec.n, spec.h))


def cycle(n: int) -> Graph:
    return torus((n,))


def complete_graph(n: int) -> Graph:
    if n < 2:
        raise ValueError("complete graph needs at least 2 vertices")
    return _from_adjacency_lists([[u for u in range(n) if u != v] for v in range(n)], name=f"K{n}")


def box(n1: int, n2: int) -> Graph:
    """Free-boundary grid {0..n1-1} x {0..n2-1}."""
    if n1 < 2 or n2 < 2:
        raise ValueError("box sides must be >= 2")
    adj = []
    for x, y in itertools.product(range(n1), range(n2)):
        a = []
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            if 0 <= x + dx < n1 and 0 <= y + dy < n2:
                a.append((x + dx) * n2 + y + dy)
        adj.append(a)
    return _from_adjacency_lists(adj, shape=(n1, n2), periodic=False, name=f"box{n1}x{n2}")


def box_boundary(graph: Graph) -> np.ndarray:
    """Outer ring of a box graph."""
    n1, n2 = graph.shape
    c = graph.coordinate_array()
    ring = (c[:, 0] == 0) | (c[:, 0] == n1 - 1) | (c[:, 1] == 0) | (c[:, 1] == n2 - 1)
    return np.flatnonzero(ring)


def lazy_kernel(graph: Graph, x, y, exact: bool = False):
    """Lazy walk transition probability P(x, y).

    1/2 on the diagonal, 1/(2 deg x) to each neighbor.  With ``exact`` the
    value is a ``Fraction``.
    """
    i, j = graph.index(x), graph.index(y)
    one = Fraction(1) if exact else 1.0
    if i == j:
        return one / 2
    if j in graph.neighbors_of(i):
        return one / (2 * int(graph.degree[i]))
    return one * 0


# ---------------------------------------------------------------- regions

_KINDS = ("ball", "cylinder", "ball_annulus", "cylinder_annulus")


@dataclass(frozen=True)
class Region:
    """Ball, cylinder, or the annulus between two concentric ones.

    ``center`` is a full vertex for balls and a 2D base point for cylinders.
    ``inner`` is only set for annuli.  Regions are closed: a vertex at
    distance exactly ``outer`` belongs to it.
    """

    kind: str
    center: tuple[int, ...]
    outer: float
    inner: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown region kind {self.kind!r}")
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        if self.outer <= 0:
            raise ValueError("radius must be positive")
        if self.kind.endswith("annulus"):
            if self.inner is None or not 0 < self.inner < self.outer:
                raise ValueError("annulus needs 0 < inner < outer")
        elif self.inner is not None:
            raise ValueError(f"{self.kind} takes a single radius")

    @classmethod
    def ball(cls, center, r):
        return cls("ball", tuple(center), float(r))

    @classmethod
    def cylinder(cls, base, R):
        return cls("cylinder", tuple(base), float(R))

    @classmethod
    def ball_annulus(cls, center, r_in, r_out):
        return cls("ball_annulus", tuple(center), float(r_out), float(r_in))

    @classmethod
    def cylinder_annulus(cls, base, R_in, R_out):
        return cls("cylinder_annulus", tuple(base), float(R_out), float(R_in))

    @property
    def is_annulus(self) -> bool:
        return self.kind.endswith("annulus")

    def inner_region(self) -> "Region":
        base = self.kind.replace("_annulus", "")
        return Region(base, self.center, self.inner)

    def outer_region(self) -> "Region":
        base = self.kind.replace("_annulus", "")
        return Region(base, self.center, self.outer)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        _reject_unknown(d, {"kind", "center", "outer", "inner"}, "Region")
        return cls(d["kind"], tuple(d["center"]), d["outer"], d.get("inner"))


def _wrapped_sq_distance(coords: np.ndarray, center: Sequence[int], sides: Sequence[int]) -> np.ndarray:
    d2 = np.zeros(len(coords), dtype=np.int64)
    for axis, (c, s) in enumerate(zip(center, sides)):
        d = np.abs(coords[:, axis] - c) % s
        d = np.minimum(d, s - d)
        d2 += d * d
    return d2


def region_mask(graph: Graph, region: Region) -> np.ndarray:
    """Boolean membership vector of ``region`` (annuli: outer minus inner)."""
    if graph.shape is None or len(graph.shape) not in (2, 3) or not graph.periodic:
        raise ValueError("regions are defined on 2D or 3D tori")
    if region.is_annulus:
        return region_mask(graph, region.outer_region()) & ~region_mask(graph, region.inner_region())
    n = graph.shape[0]
    if graph.shape[1] != n:
        raise ValueError("regions need a square horizontal base")
    if region.outer >= n / 2:
        raise ValueError(f"radius {region.outer} wraps around a torus of side {n} (needs < {n / 2})")
    coords = graph.coordinate_array()
    r2 = region.outer**2
    if region.kind == "cylinder" or len(graph.shape) == 2:
        if len(region.center) != 2 and region.kind == "cylinder":
            raise ValueError("cylinder center is a 2D base point")
        d2 = _wrapped_sq_distance(coords[:, :2], region.center[:2], graph.shape[:2])
    else:
        if len(region.center) != 3:
            raise ValueError("ball center is a full vertex")
        d2 = _wrapped_sq_distance(coords, region.center, graph.shape)
    return d2 <= r2 + 1e-9


def region_members(graph: Graph, region: Region) -> np.ndarray:
    """Sorted vertex indices of ``region``."""
    return np.flatnonzero(region_mask(graph, region))


def torus_distance_2d(p, q, n: int) -> float:
    d = [min(abs(a - b) % n, n - abs(a - b) % n) for a, b in zip(p, q)]
    return math.hypot(*d)


# ---------------------------------------------------------------- radii


@dataclass(frozen=True)
class RadiiSchedule:
    """Per-level radii R''_k < R'_k = M R''_k < R_k = M R'_k for k = 0..L.

    Ball radii around a point are r' = M (inner) and r = M^2 (outer).
    """

    M: int
    base_radii: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "base_radii", tuple(float(r) for r in self.base_radii))
        if int(self.M) != self.M or self.M < 2:
            raise ValueError("M must be an integer >= 2")
        if len(self.base_radii) < 2:
            raise ValueError("need levels 0..L with L >= 1")
        if any(r <= 0 for r in self.base_radii):
            raise ValueError("radii must be positive")
        if any(b < a for a, b in zip(self.base_radii, self.base_radii[1:])):
            raise ValueError(f"radii must be non-decreasing in k, got {self.base_radii}")

    @property
    def L(self) -> int:
        return len(self.base_radii) - 1

    @property
    def R_inner(self) -> np.ndarray:
        """R''_k."""
        return np.array(self.base_radii)

    @property
    def R_mid(self) -> np.ndarray:
        """R'_k = M R''_k."""
        return self.M * self.R_inner

    @property
    def R_outer(self) -> np.ndarray:
        """R_k = M R'_k."""
        return self.M * self.R_mid

    @property
    def r_inner(self) -> float:
        return float(self.M)

    @property
    def r_outer(self) -> float:
        return float(self.M * self.M)

    @classmethod
    def standard(cls, n: int, h: int, L: int, M: int) -> "RadiiSchedule":
        """R''_0 = h, R''_k = n^(k/L) h for 0 < k < L, R''_L = n / M^5.

        Only fits once n is astronomically large relative to h and M; at
        desk scale the constructor raises.
        """
        base = [float(h)] + [n ** (k / L) * h for k in range(1, L)] + [n / M**5]
        return cls(M, tuple(base))

    @classmethod
    def geometric(cls, n: int, L: int, M: int, smallest: float, largest: float | None = None) -> "RadiiSchedule":
        """Desk-scale schedule with geometrically spaced levels.

        ``largest`` is the top outer radius R_L; by default the largest value
        below n/2.
        """
        if largest is None:
            largest = n / 2 - 0.5
        top = largest / M**2
        if top < smallest:
            raise ValueError(f"R_L={largest} leaves no room above R''_0={smallest} at M={M}")
        ratio = (top / smallest) ** (1.0 / L)
        return cls(M, tuple(smallest * ratio**k for k in range(L + 1)))

    def fits(self, n: int) -> bool:
        return bool(self.R_outer[-1] < n / 2)

    def centers(self, n: int, k: int) -> list[tuple[int, int]]:
        """Base points of the level-k sub-lattice.

        Spacing 2*ceil(R_k)+1 keeps the closed outer disks disjoint; only
        complete cells are used so wrap-around never merges two disks.  A
        level too wide for one cell still gets a single base point while its
        outer radius stays below n/2.
        """
        spacing = 2 * math.ceil(self.R_outer[k]) + 1
        per_axis = n // spacing
        if per_axis == 0 and self.R_outer[k] < n / 2:
            return [(0, 0)]
        if per_axis == 0:
            raise ValueError(f"level {k} outer radius {self.R_outer[k]} does not fit in side {n}")
        return [(i * spacing, j * spacing) for i in range(per_axis) for j in range(per_axis)]

    def cylinder_annulus(self, k: int, base) -> Region:
        return Region.cylinder_annulus(base, self.R_mid[k], self.R_outer[k])

    def ball_annulus(self, center) -> Region:
        return Region.ball_annulus(center, self.r_inner, self.r_outer)

    def to_dict(self) -> dict:
        return {"M": self.M, "base_radii": list(self.base_radii)}

    @classmethod
    def from_dict(cls, d: dict) -> "RadiiSchedule":
        _reject_unknown(d, {"M", "base_radii"}, "RadiiSchedule")
        return cls(d["M"], tuple(d["base_radii"]))


def _reject_unknown(d: dict, allowed: set, what: str):
    extra = set(d) - allowed
    if extra:
        raise ValueError(f"unknown {what} field(s): {sorted(extra)}")


def dumps(obj) -> str:
    """JSON text for a TorusSpec, Region or RadiiSchedule."""
    return json.dumps({"type": type(obj).__name__, **obj.to_dict()}, sort_keys=True)


def loads(text: str):
    d = json.loads(text)
    kind = d.pop("type")
    types = {"TorusSpec": TorusSpec, "Region": Region, "RadiiSchedule": RadiiSchedule}
    if kind not in types:
        raise ValueError(f"unknown type {kind!r}")
    return types[kind].from_dict(d)
