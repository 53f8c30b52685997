"""Compiled inner loops for the Monte Carlo estimators.

Every kernel seeds numba's generator from an explicit integer so a call is a
pure function of its arguments.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@njit(cache=True)
def _draw(cum):
    u = np.random.random()
    lo, hi = 0, cum.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cum[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True)
def induced_chain_runs(cum, start, in_domain, t, center, radius, trials, seed):
    """Run the induced chain until ``t`` visits to ``D`` or escape.

    ``cum[y]`` holds cumulative transition weights to the ``|D|`` domain states
    followed by the escape state.  Returns the number of runs with ``tau < inf``
    and ``||L/t - center||_1 <= radius``.
    """
    _seed(seed)
    nd = center.shape[0]
    counts = np.zeros(nd)
    hits = 0
    for _ in range(trials):
        counts[:] = 0.0
        visits = 0
        cur = start
        if in_domain:
            counts[start] += 1
            visits = 1
        ok = True
        while visits < t:
            nxt = _draw(cum[cur])
            if nxt >= nd:
                ok = False
                break
            counts[nxt] += 1
            visits += 1
            cur = nxt
        if ok:
            dist = 0.0
            for i in range(nd):
                dist += abs(counts[i] / t - center[i])
            if dist <= radius + 1e-12:
                hits += 1
    return hits


@njit(cache=True)
def raw_walk_runs(index_grid, offset, start, t, center, radius, trials, kill, max_steps, seed):
    """Simple random walk version of :func:`induced_chain_runs` in d = 3.

    ``index_grid`` maps ``site + offset`` to the domain index or -1.  Walks
    leaving the sup-norm ball of radius ``kill`` or exceeding ``max_steps``
    count as ``tau = inf``.
    """
    _seed(seed)
    nd = center.shape[0]
    counts = np.zeros(nd)
    hits = 0
    side = index_grid.shape[0]
    for _ in range(trials):
        counts[:] = 0.0
        x0, x1, x2 = start[0], start[1], start[2]
        visits = 0
        steps = 0
        ok = True
        while True:
            a, b, c = x0 + offset, x1 + offset, x2 + offset
            if 0 <= a < side and 0 <= b < side and 0 <= c < side:
                k = index_grid[a, b, c]
                if k >= 0:
                    counts[k] += 1
                    visits += 1
                    if visits == t:
                        break
            if steps >= max_steps or max(abs(x0), abs(x1), abs(x2)) > kill:
                ok = False
                break
            r = np.random.randint(6)
            if r == 0:
                x0 += 1
            elif r == 1:
                x0 -= 1
            elif r == 2:
                x1 += 1
            elif r == 3:
                x1 -= 1
            elif r == 4:
                x2 += 1
            else:
                x2 -= 1
            steps += 1
        if ok:
            dist = 0.0
            for i in range(nd):
                dist += abs(counts[i] / t - center[i])
            if dist <= radius + 1e-12:
                hits += 1
    return hits


@njit(cache=True)
def stay_runs(neigh, start, steps, trials, seed):
    """Count walks from ``start`` whose first ``steps`` steps stay in the set.

    ``neigh[i, e]`` is the index of the ``e``-th neighbour of site ``i`` in
    the set, or -1 when that neighbour lies outside.
    """
    _seed(seed)
    ndir = neigh.shape[1]
    ok = 0
    for _ in range(trials):
        cur = start
        alive = True
        for _s in range(steps):
            cur = neigh[cur, np.random.randint(ndir)]
            if cur < 0:
                alive = False
                break
        if alive:
            ok += 1
    return ok


@njit(cache=True)
def stay_end_runs(neigh, start, target, steps, trials, seed):
    """Count walks staying in the set for ``steps`` steps and ending at ``target``."""
    _seed(seed)
    ndir = neigh.shape[1]
    ok = 0
    for _ in range(trials):
        cur = start
        alive = True
        for _s in range(steps):
            cur = neigh[cur, np.random.randint(ndir)]
            if cur < 0:
                alive = False
                break
        if alive and cur == target:
            ok += 1
    return ok


@njit(cache=True)
def kernel_paths(neigh, cum, start, steps, trials, seed):
    """Sample paths of a kernel on an index set; returns the path matrix."""
    _seed(seed)
    out = np.empty((trials, steps + 1), dtype=np.int64)
    for i in range(trials):
        cur = start
        out[i, 0] = cur
        for s in range(steps):
            e = _draw(cum[cur])
            cur = neigh[cur, e]
            out[i, s + 1] = cur
    return out


@njit(cache=True)
def kernel_endpoints(neigh, cum, starts, steps, seed):
    """Endpoint of one kernel path from each start."""
    _seed(seed)
    out = np.empty(starts.shape[0], dtype=np.int64)
    for i in range(starts.shape[0]):
        cur = starts[i]
        for s in range(steps):
            cur = neigh[cur, _draw(cum[cur])]
        out[i] = cur
    return out


@njit(cache=True)
def kernel_hits(neigh, cum, starts, steps, core_mask, target_mask, seed):
    """Per start: (bridge accepted, visited target) for kernel paths."""
    _seed(seed)
    n = starts.shape[0]
    acc = np.zeros(n, dtype=np.bool_)
    hit = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        cur = starts[i]
        h = target_mask[cur]
        for s in range(steps):
            cur = neigh[cur, _draw(cum[cur])]
            if target_mask[cur]:
                h = True
        acc[i] = core_mask[cur]
        hit[i] = h
    return acc, hit


@njit(cache=True)
def free_walk_ranges(d, N, walks, seed):
    """Range sizes ``|{S_0..S_N}|`` of independent simple random walks."""
    _seed(seed)
    out = np.empty(walks, dtype=np.int64)
    pos = np.zeros((N + 1, d), dtype=np.int64)
    keys = np.empty(N + 1, dtype=np.int64)
    for w in range(walks):
        for s in range(N):
            r = np.random.randint(2 * d)
            for i in range(d):
                pos[s + 1, i] = pos[s, i]
            pos[s + 1, r // 2] += 1 - 2 * (r % 2)
        for s in range(N + 1):
            key = 0
            for i in range(d):
                key = key * (4 * N + 3) + pos[s, i] + 2 * N + 1
            keys[s] = key
        srt = np.sort(keys)
        cnt = 1
        for s in range(1, N + 1):
            if srt[s] != srt[s - 1]:
                cnt += 1
        out[w] = cnt
    return out


@njit(cache=True)
def free_walk_positions(d, N, seed, index):
    """Positions of walk number ``index`` of ``free_walk_ranges(d, N, ., seed)``."""
    _seed(seed)
    pos = np.zeros((N + 1, d), dtype=np.int64)
    for w in range(index + 1):
        for s in range(N):
            r = np.random.randint(2 * d)
            for i in range(d):
                pos[s + 1, i] = pos[s, i]
            pos[s + 1, r // 2] += 1 - 2 * (r % 2)
    return pos
