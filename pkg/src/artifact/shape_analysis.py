"""Measurements on walks: profile distance, ball filling, bridges, stay probabilities.

Rescaled coordinates put the mass of site ``k`` on the cell ``(k + [0,1)^d)/n``,
so the lattice point matching a rescaled point ``x`` is ``n x - 1/2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .lattice_core import (
    CellProfile, ScaleRelation, SiteField, WalkPath, ball_sites, build_walk, encode_sites,
    local_time, rescaled_profile, site_index, unit_vectors,
)
from .sampler import ChainConfig, MetropolisChain, tilted_kernel
from .spectral import continuum_constants, eigenfunction_profile

__all__ = [
    "MesoBall", "BridgeRecord", "gloc_distance", "gloc_test", "fill_test", "time_in_core",
    "detect_bridges", "stay_probability", "stay_end_probability", "bridge_hit_probability",
    "killed_transition_matrix", "bridge_marginal", "heat_kernel_sandwich", "dyadic_annuli",
    "range_exponent_fit", "radial_derivative_constant", "confined_walk", "analyse_sample",
    "shape_chain",
]


@dataclass
class MesoBall:
    """Ball ``B = B(z, m)`` with core ``B° = B(z, m/2)`` (lattice points, closed balls)."""
    center: np.ndarray
    m: int
    n: int | None = None
    kappa: float | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.int64).reshape(-1)
        if self.m < 4:
            raise ValueError("mesoscopic radius must be at least 4")
        self.B = ball_sites(self.center, self.m)
        self.core = ball_sites(self.center, self.m / 2.0)

    @classmethod
    def from_scale(cls, center, n: int, kappa: float, d: int = 3) -> "MesoBall":
        """``m = round(rho_d n^{1 - 2 kappa})``."""
        m = int(round(continuum_constants(d).rho_d * n ** (1 - 2 * kappa)))
        return cls(center, m, n, kappa)

    @property
    def d(self) -> int:
        return self.center.shape[0]

    def boundary_distance(self, points) -> np.ndarray:
        """``m - |y - z|`` (Euclidean)."""
        p = np.asarray(points, dtype=float).reshape(-1, self.d)
        return self.m - np.sqrt(np.sum((p - self.center) ** 2, axis=1))

    def neighbours(self) -> np.ndarray:
        lookup = site_index(self.B)
        return np.stack([lookup(self.B + s) for s in unit_vectors(self.d)], axis=1)

    def index(self, points) -> np.ndarray:
        return site_index(self.B)(points)


@dataclass(frozen=True)
class BridgeRecord:
    """Time window ``[t1, t2]`` inside ``B`` with both endpoints in ``B°``."""
    t1: int
    t2: int
    a: tuple
    b: tuple


# --- profile distance -----------------------------------------------------

def _quadrature_points(d, sub):
    t = (np.arange(sub) + 0.5) / sub
    return np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1).reshape(-1, d)


class _GlocEvaluator:
    """Repeated ``gloc_distance`` evaluations on one profile (dense cell lookup)."""

    def __init__(self, ell: CellProfile, sub: int = 2):
        self.ell, self.d, self.h = ell, ell.d, ell.spacing
        self.prof = eigenfunction_profile(self.d)
        self.q = _quadrature_points(self.d, sub)
        self.lo = ell.cells.min(axis=0)
        shape = ell.cells.max(axis=0) - self.lo + 1
        self.grid = np.full(tuple(shape), -1, dtype=np.int64)
        self.grid[tuple((ell.cells - self.lo).T)] = np.arange(ell.cells.shape[0])
        self.pts = (ell.cells[:, None, :] + self.q[None]) * self.h

    def _phi2(self, pts, x):
        r = np.sqrt(np.sum((pts - x) ** 2, axis=-1))
        out = np.zeros(r.shape)
        inside = r < self.prof.rho
        # linear interpolation of the stored radial samples
        out[inside] = np.interp(r[inside], self.prof.r, self.prof.values) ** 2
        return out

    def __call__(self, center) -> float:
        d, h, prof = self.d, self.h, self.prof
        x = np.asarray(center, dtype=float)
        nq = self.q.shape[0]
        # cells carrying walk mass
        on = np.abs(self.ell.values[:, None] - self._phi2(self.pts, x)).sum()
        # cells of the ball support that carry no mass
        lo = np.floor((x - prof.rho) / h).astype(np.int64)
        hi = np.floor((x + prof.rho) / h).astype(np.int64)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        ball = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        rel = ball - self.lo
        ok = np.all((rel >= 0) & (rel < np.array(self.grid.shape)), axis=1)
        hit = np.zeros(ball.shape[0], dtype=bool)
        hit[ok] = self.grid[tuple(rel[ok].T)] >= 0
        free = ball[~hit]
        off = self._phi2((free[:, None, :] + self.q[None]) * h, x).sum()
        return float((on + off) * h ** d / nq)


def gloc_distance(ell: CellProfile, center, sub: int = 2) -> float:
    """``||ell - (phi_x)^2||_{L^1}`` with ``ell`` cellwise constant and a ``sub^d`` midpoint rule."""
    return _GlocEvaluator(ell, sub)(center)


def gloc_test(ell: CellProfile, center=None, s_exponent: float = 1.0 / 800, n: int | None = None,
              sub: int = 2):
    """Distance of a rescaled profile to the nearest translate of ``phi^2``.

    Parameters
    ----------
    ell : CellProfile
        Integrates to 1.
    center : array_like, optional
        If omitted the centre is fitted: start from the centroid of ``ell`` and
        refine by a compass search down to a sixteenth of a cell.
    s_exponent : float
        Pass when the distance is at most ``n^{-s}``.
    n : int, optional
        Scale; ``1/spacing`` by default.

    Returns
    -------
    distance : float
    passed : bool
    center : ndarray
    """
    if abs(ell.integral() - 1.0) > 1e-8:
        raise ValueError("profile must integrate to 1")
    n = int(round(1.0 / ell.spacing)) if n is None else n
    if center is None:
        center = _fit_center(ell, sub)
    center = np.asarray(center, dtype=float)
    dist = gloc_distance(ell, center, sub)
    return dist, bool(dist <= n ** (-s_exponent)), center


def _fit_center(ell, sub):
    d, h = ell.d, ell.spacing
    w = ell.values
    c = (ell.centers() * w[:, None]).sum(axis=0) / w.sum()
    dist = _GlocEvaluator(ell, sub)
    best = dist(c)
    step = h / 2
    moves = unit_vectors(d).astype(float)
    while step >= h / 16:
        improved = True
        while improved:
            improved = False
            for mv in moves:
                cand = c + step * mv
                v = dist(cand)
                if v < best - 1e-12:
                    c, best, improved = cand, v, True
        step /= 2
    return c


def fill_test(walk: WalkPath, center, kappa: float | None = None, n: int | None = None,
              radius: float | None = None) -> float:
    """Fraction of lattice sites of a ball around ``n x`` with positive local time.

    The radius is ``rho_d n (1 - n^{-kappa})`` unless given explicitly (in
    lattice units).
    """
    d = walk.d
    n = ScaleRelation.from_steps(d, walk.N).n if n is None else n
    if radius is None:
        if kappa is None:
            raise ValueError("need kappa or an explicit radius")
        radius = continuum_constants(d).rho_d * n * (1 - n ** (-kappa))
    c = n * np.asarray(center, dtype=float) - 0.5
    sites = ball_sites(np.round(c).astype(np.int64), radius + 1)
    sites = sites[np.sum((sites - c) ** 2, axis=1) <= radius ** 2]
    if sites.shape[0] == 0:
        return 1.0
    visited = np.isin(encode_sites(sites), encode_sites(walk.positions[:-1]))
    return float(visited.mean())


def radial_derivative_constant(d: int = 3) -> float:
    """``C = phi'(rho_d)^2`` from the exact eigenfunction (6 in d = 3)."""
    return eigenfunction_profile(d).boundary_slope ** 2


def time_in_core(L: SiteField, ball: MesoBall, n: int | None = None, kappa: float | None = None,
                 C: float | None = None):
    """Local time spent in ``B°`` against ``delta m^d n^{2 - 2 kappa}``.

    ``delta = C rho_d^{d+2} omega_d / 2^{3+d}``.

    Returns
    -------
    count, threshold : float
    passed : bool
    """
    d = ball.d
    n = ball.n if n is None else n
    kappa = ball.kappa if kappa is None else kappa
    if n is None or kappa is None:
        raise ValueError("need n and kappa")
    s = continuum_constants(d)
    C = radial_derivative_constant(d) if C is None else C
    delta = C * s.rho_d ** (d + 2) * s.omega_d / 2 ** (3 + d)
    count = float(L(ball.core).sum())
    threshold = delta * ball.m ** d * n ** (2 - 2 * kappa)
    return count, threshold, bool(count >= threshold)


# --- bridges -------------------------------------------------------------

def detect_bridges(walk: WalkPath, ball: MesoBall, length: int | None = None) -> list:
    """Greedy bridge trials of length ``m^2``.

    A trial starts at the first time (from the end of the previous trial on)
    at which the walk is in ``B°``; it is a bridge if the walk stays in ``B``
    for the next ``m^2`` steps and ends in ``B°``.
    """
    L = ball.m ** 2 if length is None else length
    pos = walk.positions
    keys = encode_sites(pos)
    inB = np.isin(keys, encode_sites(ball.B))
    inC = np.isin(keys, encode_sites(ball.core))
    # outside[t] = number of times < t outside B
    outside = np.concatenate([[0], np.cumsum(~inB)])
    core_times = np.nonzero(inC)[0]
    out = []
    t = 0
    T = pos.shape[0] - 1
    while True:
        j = np.searchsorted(core_times, t)
        if j >= core_times.size:
            break
        s = int(core_times[j])
        e = s + L
        if e > T:
            break
        if outside[e + 1] - outside[s] == 0 and inC[e]:
            out.append(BridgeRecord(s, e, tuple(int(v) for v in pos[s]), tuple(int(v) for v in pos[e])))
        t = e
    return out


def _check_span(s, m):
    if not m * m / 2 <= s <= 2 * m * m:
        raise ValueError("time span must lie in [m^2/2, 2 m^2]")


def _binomial(k, trials):
    p = k / trials
    return p, math.sqrt(max(p * (1 - p), 1.0 / trials) / trials)


def stay_probability(x, s: int, ball: MesoBall, trials: int, seed: int, check_span: bool = True):
    """Monte Carlo ``P_x(X[0, s] in B)``.

    Returns
    -------
    estimate, standard_error : float
    """
    if check_span:
        _check_span(s, ball.m)
    i = int(ball.index(np.asarray(x).reshape(1, -1))[0])
    if i < 0:
        return 0.0, 0.0
    k = _kernels.stay_runs(ball.neighbours(), i, int(s), int(trials), int(seed))
    return _binomial(k, trials)


def stay_end_probability(a, b, t: int, ball: MesoBall, trials: int, seed: int):
    """Monte Carlo ``P_a(X_t = b, X[0, t] in B)``."""
    ia, ib = ball.index(np.array([a, b]).reshape(2, -1))
    if ia < 0 or ib < 0:
        return 0.0, 0.0
    k = _kernels.stay_end_runs(ball.neighbours(), int(ia), int(ib), int(t), int(trials), int(seed))
    return _binomial(k, trials)


def killed_transition_matrix(ball: MesoBall) -> sp.csr_matrix:
    """Walk transition matrix restricted to ``B`` (mass leaving ``B`` is lost)."""
    nb = ball.neighbours()
    rows = np.repeat(np.arange(nb.shape[0]), nb.shape[1])
    cols = nb.reshape(-1)
    ok = cols >= 0
    k = nb.shape[0]
    return sp.csr_matrix((np.full(ok.sum(), 1.0 / nb.shape[1]), (rows[ok], cols[ok])), shape=(k, k))


def _propagate(P, start, steps):
    v = np.zeros(P.shape[0])
    v[start] = 1.0
    PT = P.T.tocsr()
    for _ in range(steps):
        v = PT @ v
    return v


def bridge_marginal(ball: MesoBall, a, b, tau: int, s: int) -> np.ndarray:
    """Exact law of ``X_s`` under the walk from ``a`` conditioned on ``X_tau = b`` and staying in ``B``.

    Returns the probability vector over ``ball.B``.
    """
    P = killed_transition_matrix(ball)
    ia, ib = ball.index(np.array([a, b]).reshape(2, -1))
    if ia < 0 or ib < 0:
        raise ValueError("endpoints must lie in B")
    fwd = _propagate(P, int(ia), s)
    bwd = _propagate(P, int(ib), tau - s)  # symmetric kernel: p(x,b) = p(b,x)
    w = fwd * bwd
    tot = w.sum()
    if tot == 0:
        raise ValueError("bridge event has probability zero (parity)")
    return w / tot


def heat_kernel_sandwich(ball: MesoBall, a, b, x, tau: int, s: int) -> dict:
    """``P^{a->b; tau}(X_s = x) + P^{a->b; tau}(X_{s+1} = x)`` against ``m^{-d} (r/m)^2``.

    Two consecutive times are aggregated so that exactly one has the right
    parity.  ``r`` is the distance of ``x`` to the boundary.
    """
    ix = int(ball.index(np.asarray(x).reshape(1, -1))[0])
    if ix < 0:
        raise ValueError("x must lie in B")
    val = bridge_marginal(ball, a, b, tau, s)[ix] + bridge_marginal(ball, a, b, tau, s + 1)[ix]
    r = float(ball.boundary_distance(x)[0])
    ref = ball.m ** (-ball.d) * (r / ball.m) ** 2
    return {"value": float(val), "reference": ref, "ratio": float(val / ref)}


def bridge_hit_probability(X, ball: MesoBall, trials: int, seed: int, length: int | None = None):
    """Probability that a bridge of ``B`` visits ``X``.

    Bridges are drawn by rejection: a tilted-kernel path of ``m^2`` steps from
    a uniform point of ``B°`` is kept when it ends in ``B°``.

    Returns
    -------
    estimate, standard_error : float
    accepted : int
    """
    X = np.asarray(X, dtype=np.int64).reshape(-1, ball.d)
    if X.shape[0] == 0:
        return 0.0, 0.0, 0
    idx = ball.index(X)
    if np.any(idx < 0):
        raise ValueError("X must lie inside B")
    kern = tilted_kernel(ball.B)
    L = ball.m ** 2 if length is None else length
    rng = np.random.default_rng(seed)
    core_idx = ball.index(ball.core)
    starts = core_idx[rng.integers(0, core_idx.size, trials)]
    core_mask = np.zeros(ball.B.shape[0], dtype=np.bool_)
    core_mask[core_idx] = True
    target = np.zeros(ball.B.shape[0], dtype=np.bool_)
    target[idx] = True
    acc, hit = _kernels.kernel_hits(kern.neighbours, kern.cumulative(), starts.astype(np.int64),
                                    int(L), core_mask, target, int(seed) + 1)
    k = int(acc.sum())
    if k == 0:
        return 0.0, float("nan"), 0
    p, se = _binomial(int((acc & hit).sum()), k)
    return p, se, k


def dyadic_annuli(ball: MesoBall, points):
    """Sort points of ``B`` into annuli by distance to the boundary.

    ``A_j = {y : dist(y, boundary) in [2^j, 2^{j+1})}`` for
    ``0 < j < J = ceil(log2 m) - 1``; ``A_0`` also takes distances below 1 and
    ``A_J`` runs up to the centre, so the ``J + 1`` annuli partition ``B``.

    Returns
    -------
    labels : ndarray of int
        Annulus of each point.
    j_star : int
        Annulus holding most points.
    count : int
    """
    pts = np.asarray(points, dtype=np.int64).reshape(-1, ball.d)
    if pts.shape[0] and np.any(ball.index(pts) < 0):
        raise ValueError("points must lie in B")
    J = max(int(math.ceil(math.log2(ball.m))) - 1, 0)
    dist = ball.boundary_distance(pts)
    labels = np.clip(np.floor(np.log2(np.maximum(dist, 1.0))).astype(np.int64), 0, J)
    if pts.shape[0] == 0:
        return labels, 0, 0
    counts = np.bincount(labels, minlength=J + 1)
    j = int(np.argmax(counts))
    return labels, j, int(counts[j])


def range_exponent_fit(samples: dict, d: int = 3) -> float:
    """Least-squares slope of ``log mean|R_N|`` against ``log N``, ``N = n^{d+2}``."""
    if len(samples) < 3:
        raise ValueError("need at least three values of n")
    n = np.array(sorted(samples), dtype=float)
    y = np.log([samples[k] for k in sorted(samples)])
    x = (d + 2) * np.log(n)
    return float(np.polyfit(x, y, 1)[0])


# --- simulation driver ----------------------------------------------------

def confined_walk(d: int, N: int, radius: float, seed: int) -> np.ndarray:
    """Step codes of a walk whose steps leaving the ball of given radius are redrawn."""
    rng = np.random.default_rng(seed)
    e = unit_vectors(d)
    pos = np.zeros(d, dtype=np.int64)
    steps = np.empty(N, dtype=np.int64)
    for k in range(N):
        while True:
            c = int(rng.integers(2 * d))
            nxt = pos + e[c]
            if np.sum(nxt.astype(float) ** 2) <= radius ** 2:
                break
        steps[k] = c
        pos = nxt
    return steps


def analyse_sample(walk: WalkPath, n: int, fill_radius_factor: float = 0.8, sub: int = 2) -> dict:
    """Range, fitted ``G_loc`` distance and centre, and fill fraction of one walk."""
    d = walk.d
    scale = ScaleRelation(d, n)
    ell = rescaled_profile(local_time(walk), scale)
    dist, passed, center = gloc_test(ell, n=n, sub=sub)
    rho = continuum_constants(d).rho_d
    fill = fill_test(walk, center, n=n, radius=fill_radius_factor * rho * n)
    return {"range": walk.range_size, "gloc": dist, "gloc_pass": passed,
            "center": center.tolist(), "fill": fill}


def shape_chain(n: int, samples: int, seed: int, d: int = 3, burn_in: int = 1000,
                thin: int = 1, moves=ChainConfig.moves):
    """Yield analysed samples of the ``beta = 1`` chain at ``N = n^{d+2}``.

    The chain starts from a walk confined to the ball of radius ``rho_d n``;
    ``burn_in`` and ``thin`` are in sweeps of ``N`` proposals.
    """
    N = n ** (d + 2)
    rho = continuum_constants(d).rho_d
    init = confined_walk(d, N, rho * n, seed)
    chain = MetropolisChain(ChainConfig(d, N, 1.0, moves=moves, seed=seed), initial=init)
    chain.run_moves(burn_in * N)
    for k in range(samples):
        chain.run_moves(thin * N)
        walk = build_walk(np.zeros(d, dtype=np.int64), chain.steps, d)
        rec = analyse_sample(walk, n)
        rec["sample"] = k
        yield rec
