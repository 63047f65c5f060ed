"""Seeded simulation of simple random walks and the lamplighter chain.

Randomness comes from PCG64 generators (128-bit state) keyed by
``(master seed, experiment id, trial index)``, so any single trial can be
replayed in isolation and the worker count never changes results.
"""

from __future__ import annotations

import csv
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import _kernels as K
from .lattice import Graph


class StepBudgetExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------- streams


def experiment_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def trial_rng(seed: int, experiment: str, trial: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(experiment_id(experiment), int(trial)))
    return np.random.Generator(np.random.PCG64(ss))


def _call_trial(args):
    fn, seed, experiment, trial = args
    return fn(trial, trial_rng(seed, experiment, trial))


def run_trials(fn: Callable, seed: int, experiment: str, trials: int, workers: int = 1) -> list:
    """Evaluate ``fn(trial, rng)`` for every trial, results in trial order.

    ``fn`` must be picklable when ``workers > 1``.
    """
    jobs = [(fn, seed, experiment, t) for t in range(trials)]
    if workers <= 1 or trials < 2:
        return [_call_trial(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call_trial, jobs, chunksize=max(1, trials // (4 * workers))))


# ---------------------------------------------------------------- states


@dataclass
class WalkState:
    """Walker position plus the generator that drives it.

    Steps mutate the state in place and return it.
    """

    position: int
    step_count: int
    seed: int
    stream: tuple[str, int]
    rng: np.random.Generator = field(repr=False)

    @classmethod
    def start(cls, position: int, seed: int, experiment: str = "walk", trial: int = 0) -> "WalkState":
        return cls(int(position), 0, int(seed), (experiment, int(trial)), trial_rng(seed, experiment, trial))


@dataclass
class LampState:
    lamps: np.ndarray
    walker: WalkState

    @classmethod
    def start(cls, graph: Graph, position: int, seed: int, experiment: str = "lamplighter", trial: int = 0):
        return cls(np.zeros(graph.num_vertices, dtype=np.uint8), WalkState.start(position, seed, experiment, trial))


def step_srw(state: WalkState, graph: Graph, lazy: bool = True) -> WalkState:
    u = state.rng.random()
    state.position = int(K.step_from_uniform(graph.neighbors, graph.degree, state.position, lazy, u))
    state.step_count += 1
    return state


def step_lamplighter(state: LampState, graph: Graph) -> LampState:
    """One lazy lamplighter step; on a move both endpoint lamps are redrawn."""
    w = state.walker
    x = w.position
    y = int(K.step_from_uniform(graph.neighbors, graph.degree, x, True, w.rng.random()))
    if y != x:
        state.lamps[x] = w.rng.random() < 0.5
        state.lamps[y] = w.rng.random() < 0.5
    w.position = y
    w.step_count += 1
    return state


def run_lamplighter(state: LampState, graph: Graph, nsteps: int) -> int:
    """Advance ``nsteps`` compiled steps; returns the number of moves."""
    moves = np.zeros(1, dtype=np.int64)
    w = state.walker
    w.position = int(K.lamplighter_run(graph.neighbors, graph.degree, state.lamps, w.position, nsteps, w.rng, moves))
    w.step_count += nsteps
    return int(moves[0])


def walk_path(graph: Graph, start: int, nsteps: int, lazy: bool, rng: np.random.Generator) -> np.ndarray:
    return K.walk_path(graph.neighbors, graph.degree, int(start), int(nsteps), lazy, rng)


# ---------------------------------------------------------------- cover & hitting


@dataclass(frozen=True)
class CoverResult:
    cover_time: int
    last_vertex: int
    visit_times: np.ndarray


def predicted_cover_time(graph: Graph, lazy: bool) -> float:
    """Rough expected cover time, used only to size step budgets."""
    from .asymptotics import cover_prediction

    V = graph.num_vertices
    shape = graph.shape if graph.periodic else None
    if shape is not None and len(shape) == 3 and shape[0] == shape[1]:
        n, h = shape[0], shape[2]
        t = cover_prediction(h / math.log(n), n).cover_time
    elif shape is not None and len(shape) == 2 and shape[0] == shape[1]:
        t = 4 / math.pi * V * math.log(shape[0]) ** 2
    elif shape is not None and len(shape) == 1:
        t = V * (V - 1) / 2
    else:
        # 2|E|(|V|-1) bounds the expected cover time of any connected graph
        t = 2 * graph.num_edges * (V - 1)
    return 2 * t if lazy else t


def default_budget(graph: Graph, lazy: bool) -> int:
    return int(max(100 * predicted_cover_time(graph, lazy), 10_000))


def run_until_cover(graph: Graph, start: int, lazy: bool, rng: np.random.Generator, budget: int | None = None) -> CoverResult:
    if budget is None:
        budget = default_budget(graph, lazy)
    first, t, last = K.cover(graph.neighbors, graph.degree, int(start), lazy, int(budget), rng)
    if t < 0:
        raise StepBudgetExceeded(f"graph {graph.name} not covered within {budget} steps")
    return CoverResult(int(t), int(last), first)


def first_hit_times(graph: Graph, start: int, nsteps: int, lazy: bool, rng: np.random.Generator) -> np.ndarray:
    """First-hit step per vertex within ``nsteps`` steps (``nsteps + 1`` if never hit)."""
    return K.first_hits(graph.neighbors, graph.degree, int(start), int(nsteps), lazy, rng)


def hitting_time(graph: Graph, start: int, target: int, lazy: bool, rng: np.random.Generator, trials: int, budget: int | None = None):
    """Sample mean and standard error of the hitting time of ``target``."""
    if budget is None:
        budget = default_budget(graph, lazy)
    times = np.empty(trials, dtype=np.int64)
    for i in range(trials):
        t = K.hitting(graph.neighbors, graph.degree, int(start), int(target), lazy, int(budget), rng)
        if t < 0:
            raise StepBudgetExceeded(f"target {target} not hit within {budget} steps")
        times[i] = t
    se = times.std(ddof=1) / math.sqrt(trials) if trials > 1 else float("nan")
    return float(times.mean()), float(se)


# ---------------------------------------------------------------- escape probability


@dataclass(frozen=True)
class EscapeEstimate:
    q: float
    r3: float
    stderr: float
    radii: tuple[float, ...]
    q_by_radius: np.ndarray
    se_by_radius: np.ndarray
    flags: tuple[str, ...] = ()

    @property
    def r3_stderr(self) -> float:
        return self.stderr / (6 * self.q * self.q)


def extrapolation_weights(radii) -> np.ndarray:
    """Weights w with sum_i w_i f(R_i) = P(0) for the polynomial P in 1/R interpolating f."""
    x = 1.0 / np.asarray(radii, dtype=float)
    w = np.ones(len(x))
    for i in range(len(x)):
        for j in range(len(x)):
            if j != i:
                w[i] *= x[j] / (x[j] - x[i])
    return w


def estimate_q_r3(rng: np.random.Generator, trials: int, radii=(16, 32, 64)) -> EscapeEstimate:
    """Escape probability of the 3D simple random walk.

    Every trial runs one walk from the origin until it returns or crosses
    the largest radius, so the per-radius escape frequencies are coupled and
    decrease with the radius by construction.  The finite-radius bias is
    O(1/R); a polynomial in 1/R through all radii is extrapolated to R = inf.
    """
    radii = tuple(float(r) for r in radii)
    if trials < 10_000:
        raise ValueError("need at least 1e4 trials")
    if any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] < 2:
        raise ValueError("escape radii must be increasing and >= 2")
    m = len(radii)
    hist = np.zeros(m + 1, dtype=np.int64)
    K.escape_histogram(np.array([r * r for r in radii]), int(trials), rng, hist)
    reached = np.cumsum(hist[::-1])[::-1][1:]  # trials that crossed radius i
    q_r = reached / trials
    se_r = np.sqrt(q_r * (1 - q_r) / trials)

    w = extrapolation_weights(radii)
    # a trial that crossed exactly k radii contributes sum_{i<k} w_i
    contrib = np.concatenate([[0.0], np.cumsum(w)])
    q = float(contrib @ hist / trials)
    var = float((contrib**2) @ hist / trials - q * q)
    se = math.sqrt(var / trials)

    flags = []
    if np.any(np.diff(q_r) > 0):
        flags.append("escape frequency increases with radius")
    if m >= 3:
        d = -np.diff(q_r)
        if np.any(d[1:] > d[:-1] + 3 * se_r[1:]):
            flags.append("radius corrections do not shrink")
    if q > q_r[-1] + 3 * se:
        flags.append("extrapolation moved above the largest-radius estimate")
    return EscapeEstimate(q, 1 / (6 * q), se, radii, q_r, se_r, tuple(flags))


# ---------------------------------------------------------------- output


TRIAL_COLUMNS = ("experiment", "seed", "trial", "statistic", "value")


def write_trial_rows(fh, experiment: str, seed: int, rows: Iterable[tuple[int, str, float]], header: bool = True):
    """Stream ``(trial, statistic, value)`` rows as CSV."""
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(TRIAL_COLUMNS)
    for trial, stat, value in rows:
        w.writerow((experiment, seed, trial, stat, repr(value) if isinstance(value, float) else value))
