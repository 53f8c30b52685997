"""Sampling the range-penalised walk measure and estimating its partition function.

The target on step sequences of length ``N`` is proportional to
``exp(-beta |R_N|)`` against the uniform measure; ``beta = 1`` is the model,
smaller values are used for tempering.  Four symmetric proposals are used:

* redraw one step at a uniform index,
* redraw a uniform window of at most ``sqrt(N)`` steps,
* apply a uniform non-identity lattice symmetry to the steps after (or
  before) a uniform index,
* exchange two steps at most ``sqrt(N)`` apart.

The exchange keeps both endpoints and only moves the sites in between, so it
is cheap and rarely rejected once the walk is compact; it drives the mixing of
the sampler at ``beta = 1``.

Positions are stored up to a global translation: every move keeps the longer
side of the walk in place and moves the shorter one, which leaves the range
size unchanged and halves the cost.  Site occupancy lives in an
open-addressing hash table, so memory stays ``O(N)`` for stretched walks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _kernels
from .lattice_core import (
    SiteField, WalkPath, all_step_sequences, build_walk, dirichlet_energy, encode_sites,
    hyperoctahedral_group, positions_from_steps, site_index, unit_vectors,
)
from .spectral import DiscreteEigenpair

__all__ = [
    "ChainConfig", "MetropolisChain", "TiltedKernel", "exact_partition", "metropolis_step",
    "proposal_distribution", "exact_transition_matrix", "ais_partition", "default_schedule",
    "tilted_kernel", "importance_weight", "survival_identity", "walk_energy",
]

MOVES = ("single", "block", "pivot", "swap")


@dataclass
class ChainConfig:
    """Parameters of a Metropolis chain.

    Attributes
    ----------
    d, N : int
    beta : float
        Penalty strength in ``[0, 1]``.
    moves : tuple of float
        Probabilities of the single, block, pivot and swap proposals (a
        three-entry tuple sets the swap probability to 0).
    seed : int
    sweeps : int
        One sweep is ``N`` proposals.
    thin : int
        Record every ``thin`` sweeps.
    """
    d: int
    N: int
    beta: float = 1.0
    moves: tuple = (0.02, 0.01, 0.01, 0.96)
    seed: int = 0
    sweeps: int = 100
    thin: int = 1

    def __post_init__(self):
        self.moves = _normalise_moves(self.moves)
        if min(self.moves) < 0 or abs(sum(self.moves) - 1) > 1e-12:
            raise ValueError("move probabilities must be three nonnegative numbers summing to 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.d < 1 or self.N < 0 or self.sweeps < 0 or self.thin < 1:
            raise ValueError("invalid chain size parameters")


@njit(cache=True)
def _range_histogram(d, N):
    """Counts of step sequences by range size, by iterative depth-first search."""
    hist = np.zeros(N + 2, dtype=np.int64)
    if N == 0:
        hist[1] = 1
        return hist
    side = 2 * N + 1
    grid = np.zeros(side ** d, dtype=np.int32)
    mul = np.ones(d, dtype=np.int64)
    for i in range(1, d):
        mul[i] = mul[i - 1] * side
    cell = np.zeros(N + 1, dtype=np.int64)
    for i in range(d):
        cell[0] += N * mul[i]
    grid[cell[0]] = 1
    size = np.ones(N + 1, dtype=np.int64)
    code = np.full(N, -1, dtype=np.int64)
    depth = 0
    while depth >= 0:
        if code[depth] >= 0:
            grid[cell[depth + 1]] -= 1
        code[depth] += 1
        if code[depth] == 2 * d:
            code[depth] = -1
            depth -= 1
            continue
        c = code[depth]
        cell[depth + 1] = cell[depth] + (1 - 2 * (c % 2)) * mul[c // 2]
        grid[cell[depth + 1]] += 1
        size[depth + 1] = size[depth] + (1 if grid[cell[depth + 1]] == 1 else 0)
        if depth + 1 == N:
            hist[size[N]] += 1
        else:
            depth += 1
    return hist


def exact_partition(d: int, N: int, beta: float = 1.0, budget: float = 1e8) -> float:
    """``E(exp(-beta |R_N|))`` by enumerating all ``(2d)^N`` step sequences.

    Raises
    ------
    ValueError
        If ``(2d)^N`` exceeds ``budget``.
    """
    if (2 * d) ** N > budget:
        raise ValueError(f"(2d)^N = {(2 * d) ** N} exceeds the enumeration budget")
    hist = _range_histogram(int(d), int(N)).astype(float)
    sizes = np.arange(N + 2)
    return float(np.sum(hist * np.exp(-beta * sizes)) / float(2 * d) ** N)


def _normalise_moves(moves):
    moves = tuple(float(m) for m in moves)
    if len(moves) == 3:
        moves = moves + (0.0,)
    if len(moves) != 4 or min(moves) < 0 or abs(sum(moves) - 1) > 1e-12:
        raise ValueError("move probabilities must be 3 or 4 nonnegative numbers summing to 1")
    return moves


def _swap_span(N):
    return max(1, min(math.isqrt(N), N - 1))


def _group_tables(d):
    """Hyperoctahedral group with the identity first, and its action on step codes."""
    group = hyperoctahedral_group(d)
    ident = (tuple(range(d)), tuple([1] * d))
    group = [ident] + [g for g in group if g != ident]
    G = len(group)
    perm = np.array([g[0] for g in group], dtype=np.int64)
    signs = np.array([g[1] for g in group], dtype=np.int64)
    codes = np.zeros((G, 2 * d), dtype=np.int64)
    for gi in range(G):
        for c in range(2 * d):
            v = np.zeros(d, dtype=np.int64)
            v[c // 2] = 1 - 2 * (c % 2)
            w = signs[gi] * v[perm[gi]]
            ax = int(np.nonzero(w)[0][0])
            codes[gi, c] = 2 * ax + (0 if w[ax] > 0 else 1)
    return perm, signs, codes


def _range_of_steps(steps, d):
    pos = positions_from_steps(np.zeros(d, dtype=np.int64), steps, d)
    return np.unique(encode_sites(pos)).size


def proposal_distribution(steps, d: int, moves=ChainConfig.moves) -> dict:
    """All proposals from a step sequence with their probabilities.

    Returns
    -------
    dict
        Maps the proposed step tuple to its total probability.
    """
    steps = np.asarray(steps, dtype=np.int64)
    N = steps.shape[0]
    out: dict = {}

    def add(s, p):
        key = tuple(int(v) for v in s)
        out[key] = out.get(key, 0.0) + p

    if N == 0:
        add(steps, 1.0)
        return out
    ps, pb, pp, pw = _normalise_moves(moves)
    for k in range(N):
        for c in range(2 * d):
            s = steps.copy()
            s[k] = c
            add(s, ps / (N * 2 * d))
    wmax = max(1, min(int(math.isqrt(N)), N))
    for w in range(1, wmax + 1):
        windows = all_step_sequences(d, w)
        n_a = N - w + 1
        for a in range(n_a):
            for codes in windows:
                s = steps.copy()
                s[a:a + w] = codes
                add(s, pb / (wmax * n_a * (2 * d) ** w))
    perm, signs, gcode = _group_tables(d)
    G = perm.shape[0]
    if N >= 2:
        for k in range(1, N):
            for g in range(1, G):
                s = steps.copy()
                if N - k <= k:
                    s[k:] = gcode[g, s[k:]]
                else:
                    s[:k] = gcode[g, s[:k]]
                add(s, pp / ((N - 1) * (G - 1)))
    else:
        add(steps, pp)
    if N >= 2:
        jmax = _swap_span(N)
        for j in range(1, jmax + 1):
            for k in range(N - j):
                s = steps.copy()
                s[k], s[k + j] = s[k + j], s[k]
                add(s, pw / (jmax * (N - j)))
    else:
        add(steps, pw)
    return out


def exact_transition_matrix(d: int, N: int, beta: float = 1.0, moves=ChainConfig.moves):
    """Metropolis kernel over all step sequences, assembled exactly.

    Returns
    -------
    P : ndarray, shape ((2d)^N, (2d)^N)
    sizes : ndarray
        ``|R_N|`` of each state.
    """
    states = all_step_sequences(d, N)
    base = (2 * d) ** np.arange(N - 1, -1, -1) if N else np.zeros(0, dtype=np.int64)
    sizes = np.array([_range_of_steps(s, d) for s in states])
    S = states.shape[0]
    P = np.zeros((S, S))
    for i, s in enumerate(states):
        for prop, p in proposal_distribution(s, d, moves).items():
            j = int(np.dot(prop, base)) if N else 0
            acc = min(1.0, math.exp(-beta * (sizes[j] - sizes[i])))
            P[i, j] += p * acc
        P[i, i] += 1.0 - P[i].sum()
    return P, sizes


def metropolis_step(state: WalkPath, config: ChainConfig, rng: np.random.Generator) -> WalkPath:
    """One Metropolis update of a walk (reference implementation, ``O(N)``).

    Returns a new WalkPath; the input is not modified.
    """
    d, N = state.d, state.N
    steps = state.steps.copy()
    if N == 0:
        return state.copy()
    move = rng.choice(4, p=config.moves)
    if move == 0:
        steps[rng.integers(N)] = rng.integers(2 * d)
    elif move == 1:
        wmax = max(1, min(int(math.isqrt(N)), N))
        w = int(rng.integers(1, wmax + 1))
        a = int(rng.integers(0, N - w + 1))
        steps[a:a + w] = rng.integers(0, 2 * d, w)
    elif move == 2 and N >= 2:
        perm, signs, gcode = _group_tables(d)
        k = int(rng.integers(1, N))
        g = int(rng.integers(1, perm.shape[0]))
        if N - k <= k:
            steps[k:] = gcode[g, steps[k:]]
        else:
            steps[:k] = gcode[g, steps[:k]]
    elif move == 3 and N >= 2:
        j = int(rng.integers(1, _swap_span(N) + 1))
        k = int(rng.integers(0, N - j))
        steps[k], steps[k + j] = steps[k + j], steps[k]
    new = build_walk(state.start, steps, d)
    delta = new.range_size - state.range_size
    if delta <= 0 or rng.random() < math.exp(-config.beta * delta):
        return new
    return state.copy()


# --- compiled engine -------------------------------------------------------

@njit(cache=True)
def _slot(keys, counts, arr, j, d):
    """Slot holding ``p`` or the empty slot where it would go (linear probing)."""
    mask = counts.shape[0] - 1
    h = np.int64(0)
    for i in range(d):
        h = (h ^ arr[j, i]) * np.int64(0x100000001B3)
        h ^= h >> 29
    h &= mask
    while counts[h] >= 0:
        same = True
        for i in range(d):
            if keys[h, i] != arr[j, i]:
                same = False
                break
        if same:
            return h
        h = (h + 1) & mask
    return h


@njit(cache=True, inline="always")
def _cell(arr, j, origin, side, d):
    idx = 0
    mul = 1
    for i in range(d):
        idx += (arr[j, i] - origin[i]) * mul
        mul *= side[i]
    return idx


@njit(cache=True, inline="always")
def _inside(arr, j, origin, side, d):
    for i in range(d):
        v = arr[j, i] - origin[i]
        if v < 0 or v >= side[i]:
            return False
    return True


@njit(cache=True)
def _rebuild(pos, extra, lo_e, hi_e, d):
    """Fresh occupancy table for ``pos``, sized to also hold ``extra[lo_e:hi_e+1]``.

    A dense grid over the padded bounding box is used while it has at most
    ``max(2^21, 64 (N + 1))`` cells, a hash table with load factor at most
    1/4 otherwise.
    """
    lo = pos[0].copy()
    hi = pos[0].copy()
    for j in range(pos.shape[0]):
        for i in range(d):
            lo[i] = min(lo[i], pos[j, i])
            hi[i] = max(hi[i], pos[j, i])
    for j in range(lo_e, hi_e + 1):
        for i in range(d):
            lo[i] = min(lo[i], extra[j, i])
            hi[i] = max(hi[i], extra[j, i])
    side = np.empty(d, dtype=np.int64)
    origin = np.empty(d, dtype=np.int64)
    vol = 1.0
    for i in range(d):
        ext = hi[i] - lo[i] + 1
        margin = 4 + ext // 4
        side[i] = ext + 2 * margin
        origin[i] = lo[i] - margin
        vol *= side[i]
    used = 0
    dense = vol <= max(2.0 ** 21, 64.0 * pos.shape[0])
    if dense:
        keys = np.zeros((0, d), dtype=np.int64)
        counts = np.zeros(int(vol), dtype=np.int32)
    else:
        cap = 16
        while cap < 4 * pos.shape[0]:
            cap *= 2
        keys = np.zeros((cap, d), dtype=np.int64)
        counts = np.full(cap, -1, dtype=np.int32)
    for j in range(pos.shape[0]):
        h = _cell(pos, j, origin, side, d) if dense else _slot(keys, counts, pos, j, d)
        if counts[h] < 0:
            for i in range(d):
                keys[h, i] = pos[j, i]
            counts[h] = 0
            used += 1
        counts[h] += 1
    return keys, counts, origin, side, used


@njit(cache=True)
def _run(steps, pos, keys, counts, origin, side, used, R, beta, n_moves, probs, perm, signs, gcode,
         record_every, seed):
    """Perform ``n_moves`` proposals in place; returns the updated table state and trace."""
    np.random.seed(seed)
    N = steps.shape[0]
    d = pos.shape[1]
    G = perm.shape[0]
    wmax = max(1, min(int(np.sqrt(N)), N))
    jmax = max(1, min(int(np.sqrt(N)), N - 1))
    newpos = np.empty_like(pos)
    newsteps = np.empty(wmax, dtype=np.int64)
    vec = np.zeros(d, dtype=np.int64)
    rel = np.zeros(d, dtype=np.int64)
    n_rec = n_moves // record_every if record_every > 0 else 0
    trace = np.empty(n_rec, dtype=np.int64)
    accepted = 0
    dense = keys.shape[0] == 0
    for m in range(n_moves):
        if N == 0:
            if record_every > 0 and (m + 1) % record_every == 0:
                trace[(m + 1) // record_every - 1] = R
            continue
        u = np.random.random()
        kind = 3
        acc_p = 0.0
        for q in range(3):
            acc_p += probs[q]
            if u < acc_p:
                kind = q
                break
        lo = 0
        hi = -1
        a = 0
        w = 0
        k = 0
        g = 0
        if kind >= 2 and N < 2:
            accepted += 1
            if record_every > 0 and (m + 1) % record_every == 0:
                trace[(m + 1) // record_every - 1] = R
            continue
        if kind == 3:
            w = 1 + np.random.randint(jmax)
            a = np.random.randint(N - w)
            c0 = steps[a]
            c1 = steps[a + w]
            for i in range(d):
                vec[i] = 0
            vec[c1 // 2] += 1 - 2 * (c1 % 2)
            vec[c0 // 2] -= 1 - 2 * (c0 % 2)
            lo, hi = a + 1, a + w
            for j in range(lo, hi + 1):
                for i in range(d):
                    newpos[j, i] = pos[j, i] + vec[i]
        elif kind == 2:
            if N < 2:
                accepted += 1
                if record_every > 0 and (m + 1) % record_every == 0:
                    trace[(m + 1) // record_every - 1] = R
                continue
            k = 1 + np.random.randint(N - 1)
            g = 1 + np.random.randint(G - 1)
            if N - k <= k:
                lo, hi = k + 1, N
            else:
                lo, hi = 0, k - 1
            for j in range(lo, hi + 1):
                for i in range(d):
                    rel[i] = pos[j, i] - pos[k, i]
                for i in range(d):
                    newpos[j, i] = pos[k, i] + signs[g, i] * rel[perm[g, i]]
        else:
            if kind == 0:
                w = 1
                a = np.random.randint(N)
            else:
                w = 1 + np.random.randint(wmax)
                a = np.random.randint(N - w + 1)
            for i in range(d):
                vec[i] = 0
            for t in range(w):
                c = np.random.randint(2 * d)
                newsteps[t] = c
                vec[c // 2] += 1 - 2 * (c % 2)
                oc = steps[a + t]
                vec[oc // 2] -= 1 - 2 * (oc % 2)
            if N - (a + w) <= a:
                lo, hi = a + 1, N
                for i in range(d):
                    newpos[a, i] = pos[a, i]
                for t in range(w):
                    c = newsteps[t]
                    for i in range(d):
                        newpos[a + t + 1, i] = newpos[a + t, i]
                    newpos[a + t + 1, c // 2] += 1 - 2 * (c % 2)
                for j in range(a + w + 1, N + 1):
                    for i in range(d):
                        newpos[j, i] = pos[j, i] + vec[i]
            else:
                lo, hi = 0, a + w - 1
                for i in range(d):
                    newpos[a + w, i] = pos[a + w, i]
                for t in range(w - 1, -1, -1):
                    c = newsteps[t]
                    for i in range(d):
                        newpos[a + t, i] = newpos[a + t + 1, i]
                    newpos[a + t, c // 2] -= 1 - 2 * (c % 2)
                for j in range(0, a):
                    for i in range(d):
                        newpos[j, i] = pos[j, i] - vec[i]
        if dense:
            for j in range(lo, hi + 1):
                if not _inside(newpos, j, origin, side, d):
                    keys, counts, origin, side, used = _rebuild(pos, newpos, lo, hi, d)
                    dense = keys.shape[0] == 0
                    break
        # occupancy updates are written out in place: helper calls in this
        # loop cost an order of magnitude more under numba
        Rn = R
        for j in range(lo, hi + 1):
            h = _cell(pos, j, origin, side, d) if dense else _slot(keys, counts, pos, j, d)
            counts[h] -= 1
            if counts[h] == 0:
                Rn -= 1
        for j in range(lo, hi + 1):
            h = _cell(newpos, j, origin, side, d) if dense else _slot(keys, counts, newpos, j, d)
            if counts[h] < 0:
                for i in range(d):
                    keys[h, i] = newpos[j, i]
                counts[h] = 0
                used += 1
            counts[h] += 1
            if counts[h] == 1:
                Rn += 1
        dR = Rn - R
        ok = dR <= 0
        if not ok:
            ok = np.random.random() < np.exp(-beta * dR)
        if ok:
            accepted += 1
            R = Rn
            for j in range(lo, hi + 1):
                for i in range(d):
                    pos[j, i] = newpos[j, i]
            if kind == 3:
                c0 = steps[a]
                steps[a] = steps[a + w]
                steps[a + w] = c0
            elif kind == 2:
                if N - k <= k:
                    for j in range(k, N):
                        steps[j] = gcode[g, steps[j]]
                else:
                    for j in range(0, k):
                        steps[j] = gcode[g, steps[j]]
            else:
                for t in range(w):
                    steps[a + t] = newsteps[t]
        else:
            for j in range(lo, hi + 1):
                counts[_cell(newpos, j, origin, side, d) if dense else _slot(keys, counts, newpos, j, d)] -= 1
            for j in range(lo, hi + 1):
                counts[_cell(pos, j, origin, side, d) if dense else _slot(keys, counts, pos, j, d)] += 1
        # vacated hash slots keep their keys; purge them before probing degrades
        if not dense and 2 * used > counts.shape[0]:
            keys, counts, origin, side, used = _rebuild(pos, pos, 0, -1, d)
            dense = keys.shape[0] == 0
        if record_every > 0 and (m + 1) % record_every == 0:
            trace[(m + 1) // record_every - 1] = R
    return keys, counts, origin, side, used, R, accepted, trace


def walk_energy(positions, d: int) -> float:
    """``E(f_N)`` for ``f_N = sqrt(L_N)``, ``L_N`` counting ``S_0..S_{N-1}``."""
    pts = np.asarray(positions, dtype=np.int64)[:-1]
    if pts.shape[0] == 0:
        return 0.0
    uniq, cnt = np.unique(pts, axis=0, return_counts=True)
    return dirichlet_energy(SiteField(uniq, np.sqrt(cnt), d=d))


class MetropolisChain:
    """Compiled Metropolis chain on step sequences.

    Parameters
    ----------
    config : ChainConfig
    initial : array_like of step codes, optional
        Uniformly random steps by default.
    """

    def __init__(self, config: ChainConfig, initial=None):
        self.config = config
        d, N = config.d, config.N
        rng = np.random.default_rng(config.seed)
        steps = rng.integers(0, 2 * d, N) if initial is None else np.asarray(initial, dtype=np.int64)
        if steps.shape != (N,) or (N and (steps.min() < 0 or steps.max() >= 2 * d)):
            raise ValueError("initial steps must be N codes in [0, 2d)")
        self.steps = steps.astype(np.int64).copy()
        self.pos = positions_from_steps(np.zeros(d, dtype=np.int64), self.steps, d)
        self._perm, self._signs, self._gcode = _group_tables(d)
        self._table = _rebuild(self.pos, self.pos, 0, -1, d)
        self.R = int(np.unique(encode_sites(self.pos)).size)
        self._calls = 0
        self.accepted = 0
        self.proposed = 0

    def _next_seed(self) -> int:
        self._calls += 1
        return int(np.random.SeedSequence([self.config.seed, self._calls]).generate_state(1)[0] >> 1)

    def run_moves(self, n_moves: int, beta: float | None = None, record_every: int = 0):
        """Advance by ``n_moves`` proposals; returns the ``|R_N|`` trace."""
        beta = self.config.beta if beta is None else float(beta)
        probs = np.asarray(self.config.moves, dtype=float)
        *table, R, acc, trace = _run(
            self.steps, self.pos, *self._table, self.R, beta, int(n_moves),
            probs, self._perm, self._signs, self._gcode, int(record_every), self._next_seed())
        self._table, self.R = tuple(table), int(R)
        self.accepted += int(acc)
        self.proposed += int(n_moves)
        return trace

    def walk(self) -> WalkPath:
        return build_walk(np.zeros(self.config.d, dtype=np.int64), self.steps, self.config.d)

    def verify(self) -> bool:
        """Recompute positions and range from scratch (debug check)."""
        d = self.config.d
        fresh = positions_from_steps(self.pos[0], self.steps, d)
        return bool(np.array_equal(fresh, self.pos)
                    and np.unique(encode_sites(fresh)).size == self.R)

    def sample(self, sweeps: int | None = None, energy: bool = True):
        """Yield one record per ``thin`` sweeps (a sweep is ``N`` proposals)."""
        cfg = self.config
        sweeps = cfg.sweeps if sweeps is None else sweeps
        per = max(cfg.N, 1)
        for s in range(1, sweeps + 1):
            self.run_moves(per)
            if s % cfg.thin == 0:
                rec = {"sweep": s, "range": self.R}
                if energy:
                    rec["energy"] = walk_energy(self.pos, cfg.d)
                yield rec


def default_schedule(rungs: int = 64, beta: float = 1.0, smallest: float = 1e-3) -> np.ndarray:
    """``0`` followed by ``rungs - 1`` geometrically spaced values ending at ``beta``."""
    if rungs < 2:
        return np.array([0.0])
    return np.concatenate([[0.0], np.geomspace(smallest * beta, beta, rungs - 1)])


def ais_partition(d: int, N: int, schedule=None, chains: int = 64, seed: int = 0,
                  sweeps_per_rung: int = 1, moves=ChainConfig.moves):
    """Annealed importance sampling estimate of ``E(exp(-beta_K |R_N|))``.

    Each replica starts from a uniform step sequence (exact at ``beta = 0``),
    accumulates ``-(beta_j - beta_{j-1}) |R|`` and then runs Metropolis at
    ``beta_j``.

    Returns
    -------
    estimate, standard_error : float
    log_weights : ndarray
    """
    sched = default_schedule() if schedule is None else np.asarray(schedule, dtype=float)
    if sched.ndim != 1 or sched[0] != 0.0 or np.any(np.diff(sched) <= 0):
        raise ValueError("schedule must start at 0 and increase strictly")
    if sched[-1] > 1.0:
        raise ValueError("schedule must end at a value <= 1")
    logw = np.zeros(chains)
    for r in range(chains):
        cfg = ChainConfig(d, N, beta=float(sched[-1]), moves=moves, seed=seed * 1000003 + r)
        ch = MetropolisChain(cfg)
        lw = 0.0
        for j in range(1, len(sched)):
            lw -= (sched[j] - sched[j - 1]) * ch.R
            ch.run_moves(sweeps_per_rung * max(N, 1), beta=sched[j])
        logw[r] = lw
    m = logw.max()
    w = np.exp(logw - m)
    est = float(np.exp(m) * w.mean())
    se = float(np.exp(m) * w.std(ddof=1) / math.sqrt(chains)) if chains > 1 else float("nan")
    return est, se, logw


@dataclass
class TiltedKernel:
    """Doob transform of the walk killed on leaving a ball.

    ``p_hat(x, y) = p(x, y) phi(y) / ((1 - lambda1) phi(x))`` for ``x, y`` in
    the ball, ``p = 1/2d`` between neighbours.

    Attributes
    ----------
    sites : ndarray, shape (k, d)
    lambda1 : float
    phi : ndarray
    neighbours : ndarray, shape (k, 2d)
        Index of each neighbour in the ball or -1.
    weights : ndarray, shape (k, 2d)
        ``p_hat`` towards each neighbour.
    degenerate : bool
        True when no move stays in the ball.
    """
    sites: np.ndarray
    lambda1: float
    phi: np.ndarray
    neighbours: np.ndarray
    weights: np.ndarray
    degenerate: bool = False
    _cum: np.ndarray = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    def row_sums(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def cumulative(self) -> np.ndarray:
        if self._cum is None:
            cum = np.cumsum(self.weights, axis=1)
            tot = cum[:, -1:].copy()
            tot[tot == 0] = 1.0
            self._cum = cum / tot
        return self._cum

    def index(self, points) -> np.ndarray:
        return site_index(self.sites)(points)

    def sample_paths(self, start, steps: int, trials: int, seed: int) -> np.ndarray:
        """Index paths of shape ``(trials, steps + 1)``."""
        if self.degenerate:
            raise ValueError("degenerate kernel has no moves")
        i = int(self.index(np.asarray(start).reshape(1, -1))[0])
        if i < 0:
            raise ValueError("start outside the ball")
        return _kernels.kernel_paths(self.neighbours, self.cumulative(), i, int(steps),
                                     int(trials), int(seed))


def tilted_kernel(ball, eigenpair: DiscreteEigenpair | None = None) -> TiltedKernel:
    """Build the tilted kernel on a finite connected site set."""
    ball = np.asarray(ball, dtype=np.int64)
    d = ball.shape[1]
    lookup = site_index(ball)
    e = unit_vectors(d)
    neigh = np.stack([lookup(ball + s) for s in e], axis=1)
    if ball.shape[0] == 1 or np.all(neigh < 0):
        return TiltedKernel(ball, 1.0, np.ones(ball.shape[0]), neigh,
                            np.zeros(neigh.shape, dtype=float), degenerate=True)
    if eigenpair is None:
        from .spectral import discrete_principal_eigenpair
        eigenpair = discrete_principal_eigenpair(ball)
    order = site_index(eigenpair.sites)(ball)
    if np.any(order < 0):
        raise ValueError("eigenpair does not live on the given ball")
    phi = np.asarray(eigenpair.vector)[order]
    lam = float(eigenpair.lambda1)
    safe = np.where(neigh >= 0, neigh, 0)
    weights = np.where(neigh >= 0, phi[safe] / ((1 - lam) * phi[:, None] * 2 * d), 0.0)
    return TiltedKernel(ball, lam, phi, neigh, weights)


def importance_weight(path, kernel: TiltedKernel) -> float:
    """``prod_k p(X_k, X_{k+1}) / p_hat(X_k, X_{k+1})`` along a path in the ball.

    Accumulated in the log domain; it telescopes to
    ``(1 - lambda1)^N phi(X_0) / phi(X_N)``.

    Parameters
    ----------
    path : WalkPath or ndarray of sites
    """
    pts = path.positions if isinstance(path, WalkPath) else np.asarray(path, dtype=np.int64)
    idx = kernel.index(pts)
    if np.any(idx < 0):
        raise ValueError("path leaves the kernel's ball")
    if idx.shape[0] <= 1:
        return 1.0
    logw = np.sum(np.log(1 - kernel.lambda1) + np.log(kernel.phi[idx[:-1]]) - np.log(kernel.phi[idx[1:]]))
    return float(np.exp(logw))


def survival_identity(kernel: TiltedKernel, start, steps: int, trials: int, seed: int) -> dict:
    """Monte Carlo estimates of both sides of
    ``P_x(stay in ball for N steps) = (1 - lambda1)^N phi(x) E_kernel[1/phi(X_N)]``.
    """
    i = int(kernel.index(np.asarray(start).reshape(1, -1))[0])
    if i < 0:
        raise ValueError("start outside the ball")
    stays = _kernels.stay_runs(kernel.neighbours, i, int(steps), int(trials), int(seed))
    p = stays / trials
    se_direct = math.sqrt(max(p * (1 - p), 1.0 / trials) / trials)
    ends = _kernels.kernel_endpoints(kernel.neighbours, kernel.cumulative(),
                                     np.full(trials, i, dtype=np.int64), int(steps), int(seed) + 1)
    vals = (1 - kernel.lambda1) ** steps * kernel.phi[i] / kernel.phi[ends]
    return {"direct": p, "direct_se": se_direct, "tilted": float(vals.mean()),
            "tilted_se": float(vals.std(ddof=1) / math.sqrt(trials))}
