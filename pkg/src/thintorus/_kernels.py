"""Compiled inner loops.  One uniform draw per walk step, always.

Step rule shared by every kernel and by the pure-Python steppers:
lazy walks hold when u < 1/2 and otherwise use u' = 2u - 1; the neighbor
slot is floor(u' * deg).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def step_from_uniform(nbr, deg, x, lazy, u):
    if lazy:
        if u < 0.5:
            return x
        u = 2.0 * u - 1.0
    d = deg[x]
    j = int(u * d)
    if j >= d:
        j = d - 1
    return nbr[x, j]


@njit(cache=True)
def walk_path(nbr, deg, start, nsteps, lazy, rng):
    path = np.empty(nsteps + 1, dtype=np.int64)
    x = start
    path[0] = x
    for t in range(nsteps):
        x = step_from_uniform(nbr, deg, x, lazy, rng.random())
        path[t + 1] = x
    return path


@njit(cache=True)
def cover(nbr, deg, start, lazy, budget, rng):
    """Returns (first_hit, cover_time, last_vertex); cover_time -1 on budget exhaustion."""
    V = deg.shape[0]
    first = np.full(V, -1, dtype=np.int64)
    first[start] = 0
    seen = 1
    x = start
    t = 0
    while seen < V:
        if t >= budget:
            return first, -1, x
        x = step_from_uniform(nbr, deg, x, lazy, rng.random())
        t += 1
        if first[x] < 0:
            first[x] = t
            seen += 1
    return first, t, x


@njit(cache=True)
def first_hits(nbr, deg, start, nsteps, lazy, rng):
    """First-hit step of every vertex within nsteps; unvisited -> nsteps + 1."""
    V = deg.shape[0]
    first = np.full(V, nsteps + 1, dtype=np.int64)
    first[start] = 0
    x = start
    for t in range(1, nsteps + 1):
        x = step_from_uniform(nbr, deg, x, lazy, rng.random())
        if first[x] > t:
            first[x] = t
    return first


@njit(cache=True)
def hitting(nbr, deg, start, target, lazy, budget, rng):
    """Steps until target is hit; -1 on budget exhaustion."""
    x = start
    t = 0
    while x != target:
        if t >= budget:
            return -1
        x = step_from_uniform(nbr, deg, x, lazy, rng.random())
        t += 1
    return t


@njit(cache=True)
def hitting_set(nbr, deg, start, target_mask, stop_mask, budget, lazy, rng):
    """Runs until target_mask or stop_mask is hit; returns (hit_target, steps)."""
    x = start
    t = 0
    while True:
        if target_mask[x]:
            return True, t
        if stop_mask[x]:
            return False, t
        if t >= budget:
            return False, -1
        x = step_from_uniform(nbr, deg, x, lazy, rng.random())
        t += 1


@njit(cache=True)
def lamplighter_run(nbr, deg, lamps, x, nsteps, rng, moves_out):
    """Lazy lamplighter chain for nsteps; lamps updated in place.

    Each move draws two further uniforms: first for the departure lamp,
    then for the arrival lamp.  Returns the final position; moves_out[0]
    receives the number of non-hold steps.
    """
    moves = 0
    for _ in range(nsteps):
        y = step_from_uniform(nbr, deg, x, True, rng.random())
        if y != x:
            lamps[x] = 1 if rng.random() < 0.5 else 0
            lamps[y] = 1 if rng.random() < 0.5 else 0
            moves += 1
            x = y
    moves_out[0] = moves
    return x


@njit(cache=True)
def randomized_set(nbr, deg, start, nsteps, lazy, rng, touched):
    """Marks vertices whose lamp a lamplighter walk re-randomized.

    That is every vertex of the move trajectory, including the start once
    at least one move happened.  Returns (final position, move count).
    """
    x = start
    moves = 0
    for _ in range(nsteps):
        y = step_from_uniform(nbr, deg, x, lazy, rng.random())
        if y != x:
            touched[x] = True
            touched[y] = True
            moves += 1
            x = y
    return x, moves


@njit(cache=True)
def escape_histogram(radii_sq, trials, rng, hist):
    """Non-lazy SRW on Z^3 from the origin, stopped at return or at the last radius.

    hist[k] counts trials that crossed exactly the first k radii before
    returning (k = len(radii_sq): escaped the outermost sphere).
    Returns total steps taken.
    """
    m = radii_sq.shape[0]
    total = 0
    for _ in range(trials):
        x = 0
        y = 0
        z = 0
        k = 0
        while True:
            d = int(rng.random() * 6.0)
            if d == 0:
                x += 1
            elif d == 1:
                x -= 1
            elif d == 2:
                y += 1
            elif d == 3:
                y -= 1
            elif d == 4:
                z += 1
            else:
                z -= 1
            total += 1
            if x == 0 and y == 0 and z == 0:
                break
            r2 = x * x + y * y + z * z
            while k < m and r2 >= radii_sq[k]:
                k += 1
            if k == m:
                break
        hist[k] += 1
    return total


@njit(cache=True)
def count_excursions(path, inner, outer):
    """Excursions of a path between an inner set and the complement of an outer set.

    An excursion starts at the last step outside ``outer`` before entering
    ``inner``, hits ``inner`` and ends at the first later step outside
    ``outer``.  Returns an (k, 3) array of (start, hit, end) steps; only
    completed excursions are reported.
    """
    T = path.shape[0]
    out = np.empty((T // 2 + 1, 3), dtype=np.int64)
    k = 0
    last_out = -1
    inside = False
    hit = -1
    for t in range(T):
        v = path[t]
        if not inside:
            if not outer[v]:
                last_out = t
            elif inner[v] and last_out >= 0:
                inside = True
                hit = t
        else:
            if not outer[v]:
                out[k, 0] = last_out
                out[k, 1] = hit
                out[k, 2] = t
                k += 1
                inside = False
                last_out = t
    return out[:k]


@njit(cache=True)
def excursion_count_online(nbr, deg, start, nsteps, lazy, rng, inner, outer):
    """Completed excursion count of a walk without storing its path."""
    x = start
    seen_out = not outer[x]
    inside = False
    count = 0
    for _ in range(nsteps):
        x = step_from_uniform(nbr, deg, x, lazy, rng.random())
        if not inside:
            if not outer[x]:
                seen_out = True
            elif inner[x] and seen_out:
                inside = True
        elif not outer[x]:
            count += 1
            inside = False
    return count
