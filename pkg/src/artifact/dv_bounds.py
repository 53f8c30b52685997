"""Donsker-Varadhan martingale, profile and large-deviation bounds, return probabilities.

Throughout, ``L_t^D`` denotes the visit counts in a finite set ``D`` up to
``tau(D, t) = inf{k >= 1 : L_k(D) = t}``, the time at which ``D`` has been
visited ``t`` times (time 0 included).  Its law only depends on the induced
chain ``q(y, z) = P_y(S_{T_1} = z)``, ``T_1`` the first time ``>= 1`` in ``D``,
which is defective when the walk is transient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import quad
from scipy.special import gammaln, ive

from . import _kernels
from .lattice_core import (
    SiteField, WalkPath, all_step_sequences, box_sites, dirichlet_energy, encode_sites,
    neighbourhood, positions_from_steps, site_index, unit_vectors,
)

__all__ = [
    "MartingaleTrace", "HittingChain", "GDCheck", "dv_martingale_weights",
    "exhaustive_martingale_mean", "fundamental_inequality_check",
    "profile_probability_bound", "exact_profile_probabilities", "lattice_green",
    "induced_chain", "induced_dirichlet_form", "gd_infimum", "gd_upper_bound",
    "gd_monte_carlo", "gd_monte_carlo_raw", "return_probability", "fit_return_constant",
    "origin_correction_check", "apriori_bound_terms", "energy_event_frequency",
    "GREEN_DECAY", "GDInstance", "random_gd_instance", "gd_check",
]


def _as_function(u, d, default=None):
    if isinstance(u, SiteField):
        base = 0.0 if default is None else float(default)

        def g(pts):
            pts = np.asarray(pts, dtype=np.int64).reshape(-1, d)
            v = u(pts)
            if default is not None:
                known = np.isin(encode_sites(pts), encode_sites(u.sites))
                v = np.where(known, v, base)
            return v
        return g
    return lambda pts: np.asarray(u(np.asarray(pts, dtype=np.int64).reshape(-1, d)), dtype=float)


def _neighbour_average(ufun, pts, d):
    e = unit_vectors(d)
    return np.mean([ufun(pts + s) for s in e], axis=0)


@dataclass
class MartingaleTrace:
    """``M_0..M_N`` along a walk with ``M_n = prod_{k<n} u/V (S_k) * u(S_n)``."""
    values: np.ndarray
    log_values: np.ndarray

    def recompute_ok(self, rtol: float = 1e-12) -> bool:
        return bool(np.allclose(np.exp(self.log_values), self.values, rtol=rtol, atol=0))


def dv_martingale_weights(u, walk: WalkPath, default: float | None = None) -> MartingaleTrace:
    """Martingale weights of a positive function along ``walk``.

    Parameters
    ----------
    u : callable or SiteField
        Positive function of lattice sites (``(k, d)`` array in, ``(k,)`` out).
        A SiteField reads ``default`` off its support.
    walk : WalkPath

    Raises
    ------
    ValueError
        If ``u`` is not strictly positive on the walk's neighbourhood.
    """
    d = walk.d
    ufun = _as_function(u, d, default)
    pos = walk.positions
    uval = ufun(pos)
    vval = _neighbour_average(ufun, pos, d)
    if np.any(uval <= 0) or np.any(vval <= 0):
        raise ValueError("u must be strictly positive on the walk and its neighbours")
    step_log = np.log(uval[:-1]) - np.log(vval[:-1])
    logm = np.concatenate([[0.0], np.cumsum(step_log)]) + np.log(uval)
    vals = np.concatenate([[uval[0]], np.cumprod(uval[:-1] / vval[:-1]) * uval[1:]])
    return MartingaleTrace(vals, logm)


def _all_positions(d, N, start):
    steps = all_step_sequences(d, N)
    e = unit_vectors(d)
    pos = np.zeros((steps.shape[0], N + 1, d), dtype=np.int64)
    if N:
        pos[:, 1:] = np.cumsum(e[steps], axis=1)
    return pos + np.asarray(start, dtype=np.int64)


def _evaluate_on_paths(ufun, pos, d):
    flat = pos.reshape(-1, d)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    uu = ufun(uniq)
    vv = _neighbour_average(ufun, uniq, d)
    shape = pos.shape[:2]
    return uu[inv.reshape(-1)].reshape(shape), vv[inv.reshape(-1)].reshape(shape)


def exhaustive_martingale_mean(u, d: int, N: int, start=None, default=None) -> float:
    """``E(M_N)`` by enumerating all ``(2d)^N`` paths."""
    start = np.zeros(d, dtype=np.int64) if start is None else start
    ufun = _as_function(u, d, default)
    pos = _all_positions(d, N, start)
    uu, vv = _evaluate_on_paths(ufun, pos, d)
    logm = np.sum(np.log(uu[:, :-1]) - np.log(vv[:, :-1]), axis=1) + np.log(uu[:, -1])
    return float(np.mean(np.exp(logm)))


def fundamental_inequality_check(u, d: int, N: int, start=None, default=None):
    """``E(exp(sum_k ln(u/V)(S_k)))`` against ``u(x) / inf_{|y-x|<=N} u(y)``.

    Returns
    -------
    lhs, rhs : float
    """
    start = np.zeros(d, dtype=np.int64) if start is None else np.asarray(start)
    ufun = _as_function(u, d, default)
    pos = _all_positions(d, N, start)
    uu, vv = _evaluate_on_paths(ufun, pos, d)
    lhs = float(np.mean(np.exp(np.sum(np.log(uu[:, :-1]) - np.log(vv[:, :-1]), axis=1))))
    reach = box_sites(start, 2 * N + 1)
    reach = reach[np.abs(reach - start).sum(axis=1) <= N]
    rhs = float(ufun(start[None])[0] / ufun(reach).min())
    return lhs, rhs


def profile_probability_bound(phi: SiteField, alpha: float, N: int) -> float:
    """``(phi(0)/alpha) exp(-E(phi)/2 + alpha sqrt(N |supp phi|))``.

    Raises
    ------
    ValueError
        If ``sum phi^2 != N``, ``phi(0) < 1`` or ``alpha`` outside ``(0, 1)``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if abs(np.sum(phi.values ** 2) - N) > 1e-9 * max(N, 1):
        raise ValueError("profile must satisfy sum phi^2 = N")
    phi0 = float(phi(np.zeros((1, phi.d), dtype=np.int64))[0])
    if phi0 < 1:
        raise ValueError("profile must satisfy phi(0) >= 1")
    expo = -0.5 * dirichlet_energy(phi) + alpha * math.sqrt(N * len(phi))
    return phi0 / alpha * math.exp(expo)


def exact_profile_probabilities(d: int, N: int) -> dict:
    """``P(f_N = phi)`` for every attained profile, keyed by sorted (site, count) tuples."""
    pos = _all_positions(d, N, np.zeros(d, dtype=np.int64))[:, :-1]
    out = {}
    w = 1.0 / (2 * d) ** N
    for path in pos:
        uniq, cnt = np.unique(path, axis=0, return_counts=True)
        key = tuple((tuple(int(c) for c in s), int(k)) for s, k in zip(uniq, cnt))
        out[key] = out.get(key, 0.0) + w
    return out


@lru_cache(maxsize=4096)
def _green_cached(x: tuple, d: int) -> float:
    f = lambda t: float(np.prod([ive(abs(xi), t / d) for xi in x]))
    a, _ = quad(f, 0, 50, limit=400, epsabs=1e-15, epsrel=1e-13)
    b, _ = quad(f, 50, np.inf, limit=400, epsabs=1e-15, epsrel=1e-13)
    return a + b


def lattice_green(x, d: int) -> float:
    """Green function ``sum_k P_0(S_k = x)`` of the transient walk (``d >= 3``).

    Uses ``G(x) = int_0^inf e^{-t} prod_i I_{x_i}(t/d) dt``.
    """
    if d < 3:
        raise ValueError("the Green function is infinite for d <= 2")
    key = tuple(sorted(abs(int(v)) for v in np.asarray(x).reshape(-1)))
    return _green_cached(key, d)


# sup over x != 0 of |x|^{d-2} G(x) / G(0), attained at a unit vector (numerical scan)
GREEN_DECAY = {3: 0.5163860591519779 / 1.5163860591519782}


@dataclass
class HittingChain:
    """Induced chain of the walk on the visits to ``D``.

    Attributes
    ----------
    domain : ndarray, shape (k, d)
        The set ``D``.
    closure : ndarray, shape (m, d)
        ``D`` followed by its outer neighbours.
    q : ndarray, shape (m, k)
        ``q[y, z] = P_y(S_{T_1} = z)``.
    defect : ndarray, shape (m,)
        Escape mass ``1 - sum_z q[y, z]``.
    error : ndarray, shape (m, k)
        Bound on ``|q - q_true|`` per entry (zero up to quadrature for the
        Green method).
    method : str
    box_side : int or None
    """
    domain: np.ndarray
    closure: np.ndarray
    q: np.ndarray
    defect: np.ndarray
    error: np.ndarray
    method: str
    box_side: int | None = None
    meta: dict = field(default_factory=dict)

    def cumulative(self) -> np.ndarray:
        """Cumulative rows over the domain states then escape."""
        full = np.hstack([self.q, np.maximum(self.defect, 0.0)[:, None]])
        cum = np.cumsum(full, axis=1)
        cum[:, -1] = 1.0
        return cum


def _closure(D):
    d = D.shape[1]
    nb = neighbourhood(D, d)
    keys = encode_sites(D)
    outer = nb[~np.isin(encode_sites(nb), keys)]
    return np.vstack([D, outer])


def _chain_green(D):
    d = D.shape[1]
    Dbar = _closure(D)
    k = D.shape[0]
    GD = np.array([[lattice_green(a - b, d) for b in D] for a in D])
    Ginv = np.linalg.inv(GD)
    e = unit_vectors(d)
    q = np.zeros((Dbar.shape[0], k))
    for s in e:
        pts = Dbar + s
        Gx = np.array([[lattice_green(a - b, d) for b in D] for a in pts])
        q += Gx @ Ginv / (2 * d)
    q = np.clip(q, 0.0, None)
    defect = 1.0 - q.sum(axis=1)
    err = np.full_like(q, 1e-10)
    return Dbar, q, defect, err


def _chain_box(D, side):
    d = D.shape[1]
    Dbar = _closure(D)
    box = box_sites(np.zeros(d, dtype=np.int64), side)
    bl = site_index(box)
    if np.any(bl(Dbar) < 0):
        raise ValueError("truncation box must contain the closure of D")
    inD = np.isin(encode_sites(box), encode_sites(D))
    interior = box[~inD]
    il = site_index(interior)
    dl = site_index(D)
    n_int = interior.shape[0]
    rows, cols = [], []
    rhs = np.zeros((n_int, D.shape[0]))
    for s in unit_vectors(d):
        nb = interior + s
        j = il(nb)
        m = j >= 0
        rows.append(np.nonzero(m)[0])
        cols.append(j[m])
        jd = dl(nb)
        md = jd >= 0
        np.add.at(rhs, (np.nonzero(md)[0], jd[md]), 1.0 / (2 * d))
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    A = sp.identity(n_int, format="csr") - sp.csr_matrix(
        (np.full(rows.size, 1.0 / (2 * d)), (rows, cols)), shape=(n_int, n_int))
    if n_int <= 20000:
        H = spla.splu(A.tocsc()).solve(rhs)
    else:
        import pyamg
        ml = pyamg.smoothed_aggregation_solver(A.tocsr(), symmetry="symmetric")
        H = np.column_stack([ml.solve(rhs[:, j], tol=1e-13, accel="cg", maxiter=500)
                             for j in range(rhs.shape[1])])
    H = np.clip(H, 0.0, 1.0)
    q = np.zeros((Dbar.shape[0], D.shape[0]))
    for s in unit_vectors(d):
        nb = Dbar + s
        jd = dl(nb)
        md = jd >= 0
        q[np.nonzero(md)[0], jd[md]] += 1.0 / (2 * d)
        ji = il(nb)
        mi = ji >= 0
        q[mi] += H[ji[mi]] / (2 * d)
    defect = 1.0 - q.sum(axis=1)
    # mass killed at the box may still come back to D later
    if d >= 3:
        outside = box_sites(np.zeros(d, dtype=np.int64), side + 2)
        outside = outside[~np.isin(encode_sites(outside), encode_sites(box))]
        dist = np.sqrt(((outside[:, None, :] - D[None]) ** 2).sum(axis=2)).min(axis=0)
        decay = GREEN_DECAY.get(d, 1.0)
        back = min(1.0, float(np.sum(decay * dist ** (2.0 - d))))
        err = np.outer(np.maximum(defect, 0.0), np.ones(D.shape[0])) * back
    else:
        err = np.outer(np.maximum(defect, 0.0), np.ones(D.shape[0]))
    return Dbar, q, defect, err


def induced_chain(D, box_side: int | None = None) -> HittingChain:
    """Induced hitting chain on ``D``.

    Parameters
    ----------
    D : array_like, shape (k, d)
    box_side : int, optional
        If given, solve the harmonic problem on the box ``Lambda(box_side)``
        with the walk killed on leaving it, and bound the truncation error.
        Otherwise (``d >= 3`` only) use the exact last-exit formula
        ``P_x(S_{T_D} = z) = sum_w G(x - w) (G_D^{-1})_{wz}``.

    Raises
    ------
    ValueError
        If the box does not contain the closure of ``D``.
    """
    D = np.unique(np.asarray(D, dtype=np.int64), axis=0)
    d = D.shape[1]
    if box_side is None:
        if d < 3:
            raise ValueError("recurrent walks need a truncation box")
        Dbar, q, defect, err = _chain_green(D)
        return HittingChain(D, Dbar, q, defect, err, "green")
    Dbar, q, defect, err = _chain_box(D, int(box_side))
    return HittingChain(D, Dbar, q, defect, err, "box", int(box_side))


def induced_dirichlet_form(chain: HittingChain, f) -> float:
    """``sum_{y,z in D} q(y,z) (f(y) - f(z))^2`` in the normalisation of ``E``."""
    f = np.asarray(f, dtype=float)
    k = chain.domain.shape[0]
    q = chain.q[:k]
    return float(np.sum(q * (f[:, None] - f[None, :]) ** 2))


def _edges(D):
    lookup = site_index(D)
    pairs = []
    d = D.shape[1]
    for s in unit_vectors(d)[0::2]:
        j = lookup(D + s)
        for i in np.nonzero(j >= 0)[0]:
            pairs.append((i, int(j[i])))
    return pairs


def gd_infimum(D, g_sq: SiteField, t: int, radius: float) -> float:
    """``inf (1/2) E(sqrt h, D)`` over the simplex intersected with the ``l^1`` ball.

    The map ``h -> E(sqrt h, D)`` is convex because ``sqrt(h_y h_z)`` is
    concave, so the infimum is solved as a conic program.

    Raises
    ------
    ValueError
        If the feasible set is empty.
    """
    import cvxpy as cp
    D = np.unique(np.asarray(D, dtype=np.int64), axis=0)
    d = D.shape[1]
    c = g_sq(D) / t
    k = D.shape[0]
    h = cp.Variable(k, nonneg=True)
    cons = [cp.sum(h) == 1, cp.norm1(h - c) <= radius]
    pairs = _edges(D)
    if pairs:
        terms = [h[i] + h[j] - 2 * cp.geo_mean(cp.hstack([h[i], h[j]])) for i, j in pairs]
        obj = 0.5 * cp.sum(cp.hstack(terms)) / d
    else:
        obj = cp.Constant(0.0)
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL)
    if prob.status in ("infeasible", "infeasible_inaccurate"):
        raise ValueError("empty feasible set: the l1 ball misses the simplex")
    if h.value is None:
        raise RuntimeError(f"solver failed with status {prob.status}")
    # polish: evaluate the exact objective at the returned point
    hv = np.clip(h.value, 0, None)
    return max(float(prob.value), 0.0) if not pairs else max(
        min(float(prob.value), _half_energy(hv, pairs, d)), 0.0)


def _half_energy(h, pairs, d):
    s = np.sqrt(h)
    return 0.5 * sum((s[i] - s[j]) ** 2 for i, j in pairs) / d


def gd_upper_bound(D, g_sq: SiteField, t: int, radius: float, slack: float = 1e-7) -> float:
    """``exp(-t inf_{h in C} (1/2) E(sqrt h, D))``.

    ``slack`` is subtracted from the solver value so the returned number is
    not below the exact bound.
    """
    val = gd_infimum(D, g_sq, t, radius)
    return math.exp(-t * max(val - slack, 0.0))


@dataclass
class GDCheck:
    """Monte Carlo estimate of ``inf_x P_x(L_t^D/t in C, tau < inf)``."""
    estimates: np.ndarray
    standard_errors: np.ndarray
    starts: np.ndarray
    trials: int

    @property
    def lhs(self) -> float:
        return float(self.estimates.min())

    @property
    def lhs_se(self) -> float:
        i = int(np.argmin(self.estimates))
        return float(self.standard_errors[i])


def _binomial(hits, trials):
    p = hits / trials
    se = math.sqrt(max(p * (1 - p), 1.0 / trials) / trials)
    return p, se


def gd_monte_carlo(chain: HittingChain, g_sq: SiteField, t: int, radius: float,
                   trials: int, seed: int, starts=None) -> GDCheck:
    """Run the induced chain from each start in the closure of ``D``.

    The standard error uses ``max(p(1-p), 1/trials)`` so zero counts are not
    reported with zero uncertainty.
    """
    D = chain.domain
    k = D.shape[0]
    center = g_sq(D) / t
    cum = chain.cumulative()
    idx = np.arange(chain.closure.shape[0]) if starts is None else np.asarray(starts)
    est, se = [], []
    for j, i in enumerate(idx):
        hits = _kernels.induced_chain_runs(cum, int(i), bool(i < k), int(t), center,
                                           float(radius), int(trials), int(seed) + 7919 * j)
        p, s = _binomial(hits, trials)
        est.append(p)
        se.append(s)
    return GDCheck(np.array(est), np.array(se), chain.closure[idx], trials)


@dataclass
class GDInstance:
    """Domain, centre profile ``g^2`` (summing to ``t``), time ``t`` and ``l^1`` radius."""
    D: np.ndarray
    g_sq: SiteField
    t: int
    radius: float

    def describe(self) -> dict:
        return {"D": self.D.tolist(), "g_sq": self.g_sq(self.D).tolist(), "t": self.t,
                "radius": self.radius}


def random_gd_instance(rng: np.random.Generator, d: int = 3, max_size: int = 4,
                       max_t: int = 20) -> GDInstance:
    """Connected ``D`` grown from the origin, Dirichlet-distributed centre, random radius."""
    k = int(rng.integers(1, max_size + 1))
    D = [np.zeros(d, dtype=np.int64)]
    e = unit_vectors(d)
    while len(D) < k:
        cand = D[int(rng.integers(len(D)))] + e[int(rng.integers(2 * d))]
        if not any(np.array_equal(cand, y) for y in D):
            D.append(cand)
    D = np.unique(np.array(D), axis=0)
    t = int(rng.integers(2, max_t + 1))
    h = rng.dirichlet(np.ones(k))
    radius = float(rng.uniform(0.1, 0.6))
    return GDInstance(D, SiteField(D, t * h, d=d), t, radius)


def gd_check(instance: GDInstance, trials: int, seed: int, box_side: int | None = None) -> dict:
    """Monte Carlo left side against the bound for one instance."""
    chain = induced_chain(instance.D, box_side)
    mc = gd_monte_carlo(chain, instance.g_sq, instance.t, instance.radius, trials, seed)
    rhs = gd_upper_bound(instance.D, instance.g_sq, instance.t, instance.radius)
    ok = mc.lhs <= rhs + 3 * mc.lhs_se
    return {**instance.describe(), "lhs": mc.lhs, "lhs_se": mc.lhs_se, "rhs": rhs,
            "max_over_starts": float(mc.estimates.max()),
            "chain_error": float(np.max(chain.error)), "pass": bool(ok)}


def gd_monte_carlo_raw(D, g_sq: SiteField, t: int, radius: float, start, trials: int,
                       seed: int, kill: int = 40, max_steps: int | None = None):
    """Same event estimated with simple random walks in ``d = 3``."""
    D = np.unique(np.asarray(D, dtype=np.int64), axis=0)
    if D.shape[1] != 3:
        raise ValueError("raw walk estimator is implemented for d = 3")
    off = kill + 2
    grid = -np.ones((2 * off + 1,) * 3, dtype=np.int64)
    for i, s in enumerate(D):
        grid[tuple(s + off)] = i
    center = g_sq(D) / t
    max_steps = 1000 * t if max_steps is None else max_steps
    hits = _kernels.raw_walk_runs(grid, off, np.asarray(start, dtype=np.int64), int(t), center,
                                  float(radius), int(trials), int(kill), int(max_steps), int(seed))
    return _binomial(hits, trials)


def _log_p1(m, y):
    """log P(simple 1-d walk at y after m steps), vectorised over m."""
    m = np.asarray(m, dtype=float)
    y = abs(int(y))
    out = np.full(m.shape, -np.inf)
    ok = (m >= y) & (np.mod(m - y, 2) == 0)
    mm = m[ok]
    out[ok] = gammaln(mm + 1) - gammaln((mm + y) / 2 + 1) - gammaln((mm - y) / 2 + 1) - mm * math.log(2)
    return out


def _log_binom_pmf(k, a, p):
    a = np.asarray(a, dtype=float)
    return gammaln(k + 1) - gammaln(a + 1) - gammaln(k - a + 1) + a * math.log(p) + (k - a) * math.log1p(-p)


def _prob_at(x, k):
    """``P_0(S_k = x)`` by factorising over axes."""
    x = [abs(int(v)) for v in x]
    d = len(x)
    if k < 0:
        return 0.0
    if sum(x) > k or (k - sum(x)) % 2:
        return 0.0
    if d == 1:
        return float(np.exp(_log_p1(np.array([k]), x[0]))[0])
    if d == 2:
        a = _log_p1(np.array([k]), x[0] + x[1]) + _log_p1(np.array([k]), x[0] - x[1])
        return float(np.exp(a)[0])
    # split off the first axis: a steps along it, k - a along the others
    a = np.arange(k + 1)
    la = _log_binom_pmf(k, a, 1.0 / d) + _log_p1(a, x[0])
    if d == 3:
        rest = _log_p1(k - a, x[1] + x[2]) + _log_p1(k - a, x[1] - x[2])
        return float(np.sum(np.exp(la + rest)))
    vals = np.array([_prob_at(x[1:], int(k - ai)) if np.isfinite(l) else 0.0
                     for ai, l in zip(a, la)])
    return float(np.sum(np.exp(la) * vals))


def return_probability(x, k: int, mode: str = "exact", n: int | None = None,
                       c_prime: float = 1.0) -> float:
    """``P_x(S_k = 0) + P_x(S_{k-1} = 0)`` or its lower bound ``exp(-c' n^{2d}/k)``.

    Parameters
    ----------
    x : array_like
    k : int
    mode : {"exact", "bound"}
    n : int, optional
        Scale, required in bound mode.
    c_prime : float
        Constant of the bound mode (an existence constant, fitted).
    """
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    d = x.shape[0]
    if mode == "bound":
        if n is None:
            raise ValueError("bound mode needs n")
        return math.exp(-c_prime * n ** (2 * d) / k)
    if mode != "exact":
        raise ValueError("mode must be 'exact' or 'bound'")
    if k > 10 ** 4 or np.abs(x).sum() > 10 ** 2 * d:
        raise ValueError("exact mode limited to k <= 1e4 and |x| <= 1e2")
    return _prob_at(x, k) + _prob_at(x, k - 1)


def fit_return_constant(points, ks, n: int) -> float:
    """Smallest ``c'`` with ``exact >= exp(-c' n^{2d}/k)`` over the given samples."""
    best = 0.0
    d = len(points[0])
    for x in points:
        for k in ks:
            v = return_probability(x, int(k))
            best = max(best, -math.log(v) * k / n ** (2 * d))
    return best


def origin_correction_check(D, g_sq: SiteField, t: int, k: int, radius: float,
                            trials: int, seed: int, chain: HittingChain | None = None) -> dict:
    """Monte Carlo check of the origin-shift inequality.

    Left side: ``P_0(||L_t^D/t - g^2||_1 <= r, tau < inf)``.  Right side, for
    each start ``x`` in the closure of ``D``:
    ``2 P_x(... <= r + 4k/(t-k), tau < inf) / (P_x(S_k=0) + P_x(S_{k-1}=0))``.
    The smallest right side is reported.
    """
    if not 0 < k < t:
        raise ValueError("need 0 < k < t")
    chain = induced_chain(D) if chain is None else chain
    d = chain.domain.shape[1]
    origin = np.zeros(d, dtype=np.int64)
    Dfull = chain.domain
    center = g_sq(Dfull) / t
    # left side from the origin; raw walks when it lies outside the closure of D
    oi = site_index(chain.closure)(origin[None])[0]
    if oi < 0:
        lhs, lhs_se = _origin_far(Dfull, center, t, radius, trials, seed)
    else:
        res = gd_monte_carlo(chain, g_sq, t, radius, trials, seed, starts=[oi])
        lhs, lhs_se = res.lhs, res.lhs_se
    wide = radius + 4.0 * k / (t - k)
    res = gd_monte_carlo(chain, g_sq, t, wide, trials, seed + 1)
    ret = np.array([return_probability(x, k) for x in chain.closure])
    rhs_all = 2 * res.estimates / ret
    rhs_se_all = 2 * res.standard_errors / ret
    i = int(np.argmin(rhs_all))
    rhs, rhs_se = float(rhs_all[i]), float(rhs_se_all[i])
    ok = lhs <= rhs + 3 * math.sqrt(lhs_se ** 2 + rhs_se ** 2)
    return {"lhs": lhs, "lhs_se": lhs_se, "rhs": rhs, "rhs_se": rhs_se,
            "worst_start": chain.closure[i].tolist(), "inflated_radius": wide, "pass": bool(ok)}


def _origin_far(D, center, t, radius, trials, seed):
    p, se = gd_monte_carlo_raw(D, SiteField(D, center * t), t, radius, np.zeros(3, dtype=np.int64),
                               trials, seed)
    return p, se


def apriori_bound_terms(n: int, c: float, kappa: float, d: int = 3,
                        k1d: float | None = None) -> dict:
    """Range-tail exponent and energy-tail bound.

    Returns
    -------
    dict
        ``range_tail_exponent = -(c - 2 k(1,d)) n^d`` (``k(1,d)`` defaults to
        ``chi_d`` as a placeholder magnitude), ``energy_tail_log`` and
        ``energy_tail_value = exp(energy_tail_log)``, and the flag
        ``energy_vacuous`` when ``kappa/2 <= 4 d c``.
    """
    if k1d is None:
        from .spectral import continuum_constants
        k1d = continuum_constants(d).chi_d
    margin = kappa / 2.0 - 4 * d * c
    vacuous = margin <= 0
    log_e = 0.0 if vacuous else -margin * n ** d * math.log(n)
    return {"range_tail_exponent": -(c - 2 * k1d) * n ** d, "k1d": k1d,
            "energy_tail_log": log_e, "energy_tail_value": math.exp(log_e),
            "energy_vacuous": bool(vacuous)}


def energy_event_frequency(d: int, n: int, c: float, kappa: float, walks: int, seed: int):
    """Fraction of free walks with ``E(f_N) >= kappa n^d ln n`` and ``|R_N| <= c n^d``.

    Returns
    -------
    p, se : float
    """
    N = n ** (d + 2)
    ranges = _kernels.free_walk_ranges(d, N, walks, seed)
    hits = 0
    # the range event is essentially never met; only flagged walks are replayed
    for w in np.nonzero(ranges <= c * n ** d)[0]:
        pos = _kernels.free_walk_positions(d, N, seed, int(w))
        L = SiteField(pos[:-1], np.ones(N), d=d)
        if dirichlet_energy(L.map(np.sqrt)) >= kappa * n ** d * math.log(n):
            hits += 1
    return _binomial(hits, walks)
