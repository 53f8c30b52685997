"""Coarse graining of square-root local times.

Blocks of side ``n`` are the translates ``B(x) = n x + Lambda(n)``; sub-blocks
of side ``M`` (a divisor of ``n``) tile them.  A field is reduced to the set of
high-density blocks, averaged over sub-blocks and rounded down to a grid of
mesh ``eta``.  The ``Gamma`` budgets bound the errors made at each stage.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .interpolation import block_poincare_constant
from .lattice_core import (
    SiteField, WalkPath, dirichlet_energy, encode_sites, local_time, lp_norm,
)

__all__ = [
    "BlockDecomposition", "CoarseProfile", "GammaBudget", "block_index", "block_sites",
    "high_density_blocks", "enlarge_and_domains", "local_average", "discretize",
    "largest_divisor_below", "gamma_budget", "aer_threshold", "cutoff_function",
    "truncated_energy_check", "upper_bound_functional", "eaxe_gap", "contout_check",
    "pipeline_distances", "DEFAULT_C_PS",
]

# empirical full-space Sobolev constant in d = 3 (numerical maximisation gives ~0.34)
DEFAULT_C_PS = 0.4


def _offset(n: int) -> int:
    return (n - 1) // 2


def block_index(sites, n: int, side: int | None = None) -> np.ndarray:
    """Index of the side-``side`` sub-block containing each site.

    Sub-blocks are aligned with the side-``n`` blocks ``n x + Lambda(n)``;
    ``side`` defaults to ``n``.
    """
    side = n if side is None else side
    if n % side:
        raise ValueError("sub-block side must divide the block side")
    return np.floor_divide(np.asarray(sites, dtype=np.int64) + _offset(n), side)


def block_sites(indices, n: int, side: int | None = None) -> np.ndarray:
    """All sites of the given (sub-)blocks, in block order."""
    side = n if side is None else side
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return idx.reshape(0, idx.shape[-1] if idx.ndim == 2 else 0)
    d = idx.shape[1]
    local = np.array(list(itertools.product(range(side), repeat=d)), dtype=np.int64)
    out = idx[:, None, :] * side + local[None] - _offset(n)
    return out.reshape(-1, d)


@dataclass
class BlockDecomposition:
    """Block sets and domains attached to a set ``X`` of block indices.

    Attributes
    ----------
    n : int
    X : ndarray, shape (k, d)
    X_hat : ndarray
        ``X`` and its sup-norm neighbours.
    D : ndarray
        Sites of the blocks in ``X_hat``.
    E : ndarray
        Sites of the blocks in ``X``.
    """
    n: int
    X: np.ndarray
    X_hat: np.ndarray
    D: np.ndarray
    E: np.ndarray

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def sub_blocks(self, M: int) -> np.ndarray:
        """Indices ``Y(X_hat)`` of the side-``M`` sub-blocks tiling ``D``."""
        if self.D.shape[0] == 0:
            return np.zeros((0, self.d), dtype=np.int64)
        return np.unique(block_index(self.D, self.n, M), axis=0)


def high_density_blocks(f: SiteField, n: int, delta: float) -> np.ndarray:
    """Blocks with ``sum_B f^{2*} >= delta^{2*} n^{d + 2*}``."""
    d = f.d
    if d < 3:
        raise ValueError("needs d >= 3")
    p = 2.0 * d / (d - 2)
    if len(f) == 0:
        return np.zeros((0, d), dtype=np.int64)
    idx = block_index(f.sites, n)
    blocks, inv = np.unique(idx, axis=0, return_inverse=True)
    mass = np.zeros(blocks.shape[0])
    np.add.at(mass, inv.reshape(-1), f.values ** p)
    thresh = delta ** p * float(n) ** (d + p)
    return blocks[mass >= thresh * (1 - 1e-12)]


def enlarge_and_domains(X, n: int, d: int | None = None) -> BlockDecomposition:
    """``X_hat``, ``D`` and ``E`` for a set of block indices."""
    X = np.asarray(X, dtype=np.int64)
    if X.size == 0:
        d = X.shape[1] if X.ndim == 2 and X.shape[1] else d
        if d is None:
            raise ValueError("dimension required for an empty block set")
        empty = np.zeros((0, d), dtype=np.int64)
        return BlockDecomposition(n, empty, empty, empty, empty)
    X = np.unique(X, axis=0)
    d = X.shape[1]
    shifts = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)
    X_hat = np.unique((X[:, None, :] + shifts[None]).reshape(-1, d), axis=0)
    return BlockDecomposition(n, X, X_hat, block_sites(X_hat, n), block_sites(X, n))


def local_average(f: SiteField, M: int, n: int | None = None) -> SiteField:
    """Replace ``f`` by its mean on each side-``M`` sub-block.

    Sub-blocks are aligned with the side-``n`` blocks (``n = M`` by default).
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    n = M if n is None else n
    d = f.d
    if len(f) == 0:
        return SiteField.zeros(d)
    idx = block_index(f.sites, n, M)
    blocks, inv = np.unique(idx, axis=0, return_inverse=True)
    sums = np.zeros(blocks.shape[0])
    np.add.at(sums, inv.reshape(-1), f.values)
    means = sums / M ** d
    sites = block_sites(blocks, n, M)
    return SiteField(sites, np.repeat(means, M ** d), d=d)


@dataclass
class CoarseProfile:
    """``eta``-discretised block averages restricted to a domain.

    Attributes
    ----------
    M : int
    eta : float
    n : int
    blocks : ndarray, shape (k, d)
        Sub-block indices covering the domain.
    levels : ndarray of int
        Values are ``levels * eta``.
    """
    M: int
    eta: float
    n: int
    blocks: np.ndarray
    levels: np.ndarray
    d: int

    @property
    def values(self) -> np.ndarray:
        return self.levels * self.eta

    def to_field(self) -> SiteField:
        sites = block_sites(self.blocks, self.n, self.M)
        return SiteField(sites, np.repeat(self.values, self.M ** self.d), d=self.d)


def discretize(fbar: SiteField, eta: float, D, M: int = 1, n: int | None = None,
               N: int | None = None) -> CoarseProfile:
    """``eta * floor(fbar / eta)`` on the sub-blocks tiling ``D``.

    Raises
    ------
    ValueError
        If ``fbar`` is not constant on the sub-blocks, or a value reaches
        ``sqrt(N)`` when ``N`` is given.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    n = M if n is None else n
    d = fbar.d
    D = np.asarray(D, dtype=np.int64).reshape(-1, d)
    if D.shape[0] == 0:
        return CoarseProfile(M, eta, n, np.zeros((0, d), dtype=np.int64), np.zeros(0, dtype=np.int64), d)
    blocks = np.unique(block_index(D, n, M), axis=0)
    sites = block_sites(blocks, n, M).reshape(blocks.shape[0], M ** d, d)
    vals = fbar(sites.reshape(-1, d)).reshape(blocks.shape[0], M ** d)
    if np.any(np.ptp(vals, axis=1) > 1e-12 * max(1.0, float(np.abs(vals).max()))):
        raise ValueError("fbar must be constant on each sub-block")
    # guard against x/eta landing a hair below an integer
    levels = np.floor(vals[:, 0] / eta + 1e-12).astype(np.int64)
    if N is not None and np.any(levels * eta >= math.sqrt(N)):
        raise ValueError("coarse values must stay below sqrt(N)")
    return CoarseProfile(M, eta, n, blocks, levels, d)


def largest_divisor_below(n: int, bound: float) -> int:
    """Largest divisor of ``n`` not exceeding ``bound`` (at least 1)."""
    for m in range(min(n, int(math.floor(bound + 1e-9))), 0, -1):
        if n % m == 0:
            return m
    return 1


def default_exponents(d: int) -> dict:
    return {"alpha": d / 12.0, "beta": 0.75, "gamma": d * d / (12.0 * (d - 2)), "rho": 15.0 / 8.0}


@dataclass
class GammaBudget:
    """Error budgets of the coarse-graining argument for given ``(n, d, c, kappa)``.

    ``gamma0`` bounds ``||f_N - coarse||_{2,D}``; ``gamma0_printed`` is the
    same expression without the factor ``(2d)^{2*/2}`` inside the cardinality
    term.  ``gamma1 = gamma0 (2 sqrt(N) + gamma0)``.
    """
    d: int
    n: int
    c: float
    kappa: float
    exponents: dict
    delta: float
    M: int
    M_raw: float
    eta: float
    lam: float
    c_pw: float
    c_ps: float
    c_d: float
    gamma0: float
    gamma0_printed: float
    gamma1: float
    gamma2: float
    r_N: float
    gamma3: float
    gamma4: float
    furco: dict
    aer: dict
    cardx_bound: float
    C0: float
    log_card_G: float
    notes: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.n ** (self.d + 2)

    @property
    def furco_ok(self) -> bool:
        return all(self.furco.values())

    @property
    def aer_ok(self) -> bool:
        return all(self.aer.values())

    def as_record(self) -> dict:
        rec = dict(self.__dict__)
        rec["N"] = self.N
        rec["furco_ok"] = self.furco_ok
        rec["aer_ok"] = self.aer_ok
        return rec


def gamma_budget(n: int, d: int, c: float, kappa: float, exponents: dict | None = None,
                 c_pw: float | None = None, c_ps: float = DEFAULT_C_PS,
                 c_d: float | None = None) -> GammaBudget:
    """Evaluate ``Gamma_0..Gamma_4`` and ``r(N)``.

    Parameters
    ----------
    n, d : int
    c, kappa : float
        Range and energy levels.
    exponents : dict, optional
        Keys ``alpha, beta, gamma, rho``; defaults
        ``(d/12, 3/4, d^2/(12(d-2)), 15/8)``.
    c_pw : float, optional
        Block Poincare-Wirtinger constant with ``||f - fbar|| <= M c_pw sqrt(E)``;
        the exact value ``sqrt(2d)/4`` by default.
    c_ps : float
        Full-space Sobolev constant (empirical).
    c_d : float, optional
        Constant of the low-density estimate, ``4 d c_ps^2`` by default.

    Notes
    -----
    Violated exponent constraints are recorded in ``furco`` and ``notes``; the
    values are computed regardless.
    """
    if d < 3:
        raise ValueError("needs d >= 3")
    ex = default_exponents(d)
    if exponents:
        unknown = set(exponents) - set(ex)
        if unknown:
            raise ValueError(f"unknown exponents {sorted(unknown)}")
        ex.update(exponents)
    a, b, g, r = ex["alpha"], ex["beta"], ex["gamma"], ex["rho"]
    p = 2.0 * d / (d - 2)
    c_pw = block_poincare_constant(d) if c_pw is None else c_pw
    c_d = 4 * d * c_ps ** 2 if c_d is None else c_d
    N = float(n) ** (d + 2)
    ln = math.log(n)
    delta = n ** (-a)
    M_raw = n ** b
    M = largest_divisor_below(n, M_raw)
    eta = n ** (-g)
    lam = n ** r
    notes = []
    if M != M_raw:
        notes.append(f"M rounded from {M_raw:.6g} to divisor {M}")
    furco = {
        "beta<1": b < 1,
        "(2*/2)alpha-gamma<beta": p / 2 * a - g < b,
        "2*alpha<d*beta": p * a < d * b,
        "1+beta<rho": 1 + b < r,
        "2-4alpha/d<rho": 2 - 4 * a / d < r,
        "rho<2": r < 2,
    }
    notes += [f"constraint violated: {k}" for k, ok in furco.items() if not ok]
    cardx = c_ps ** p * (2 * d * kappa * ln) ** (p / 2) / delta ** p
    first = M * c_pw * math.sqrt(kappa * n ** d * ln)
    gamma0 = first + math.sqrt(eta ** 2 * 3 ** d * cardx * n ** d)
    printed = first + math.sqrt(eta ** 2 * 3 ** d * c_ps ** p * (kappa * ln) ** (p / 2) * n ** d / delta ** p)
    gamma1 = gamma0 * (2 * math.sqrt(N) + gamma0)
    gamma2 = c * delta ** (4.0 / d) * N * (c_d * kappa * ln) ** (2.0 / p)
    r_N = 14 * gamma1 / N + 8 * gamma2 / N
    gamma3 = gamma2 / N + 2 * gamma1 / N + r_N
    gamma4 = gamma3 + 4 * math.sqrt(2 * c * lam / n ** 2)
    aer = {
        "Gamma0<sqrtN": gamma0 < math.sqrt(N),
        "Gamma1<3Gamma0sqrtN": gamma1 < 3 * gamma0 * math.sqrt(N),
        "n^(d+1)<Gamma1<n^(d+2)": n ** (d + 1) < gamma1 < N,
        "Gamma2<N/2": gamma2 < N / 2,
    }
    C0 = kappa ** 4 * ln ** 5 / delta ** p
    n_sub = 3 ** d * (n / M) ** d * cardx
    log_card_G = n_sub * math.log(max(math.sqrt(N) / eta, 1.0))
    return GammaBudget(d, n, c, kappa, ex, delta, M, M_raw, eta, lam, c_pw, c_ps, c_d,
                       gamma0, printed, gamma1, gamma2, r_N, gamma3, gamma4, furco, aer,
                       cardx, C0, log_card_G, notes)


def aer_threshold(d: int, c: float, kappa: float, n_max: int = 10 ** 6, **kwargs) -> int | None:
    """Smallest ``n <= n_max`` at which all the asymptotic budget inequalities hold."""
    for n in range(2, n_max + 1):
        if gamma_budget(n, d, c, kappa, **kwargs).aer_ok:
            return n
    return None


def _phi(x):
    s = np.max(np.abs(x), axis=-1)
    return np.clip(1.0 - 4.0 * (s - 5.0 / 8.0), 0.0, 1.0)


def cutoff_function(X, n: int) -> SiteField:
    """``phi_X(y) = max_{x in X} phi(y/n - x)``.

    ``phi`` equals 1 on ``Lambda(5/4)``, vanishes off ``Lambda(7/4)`` and is
    affine in the sup norm in between, with slope 4.
    """
    X = np.asarray(X, dtype=np.int64)
    if X.size == 0:
        raise ValueError("X must be nonempty")
    dec = enlarge_and_domains(X, n)
    D = dec.D
    val = np.zeros(D.shape[0])
    for x in dec.X:
        val = np.maximum(val, _phi(D / n - x))
    return SiteField(D, val, d=dec.d)


def truncated_energy_check(f: SiteField, decomposition: BlockDecomposition, tol: float = 1e-12):
    """Both sides of ``E(f, D) >= max(sqrt(E(phi_X f)) - (4/n)||f||_{2, D\\E}, 0)^2``.

    Returns
    -------
    lhs, rhs : float
    ok : bool
    """
    dec = decomposition
    if dec.X.shape[0] == 0:
        return 0.0, 0.0, True
    f = f.restrict(dec.D)
    if len(f) == 0:
        return 0.0, 0.0, True
    lhs = dirichlet_energy(f, dec.D)
    phi = cutoff_function(dec.X, dec.n)
    pf = SiteField(f.sites, f.values * phi(f.sites), d=f.d)
    outer_mask = ~np.isin(encode_sites(f.sites), encode_sites(dec.E))
    outer = float(np.sqrt(np.sum(f.values[outer_mask] ** 2)))
    rhs = max(math.sqrt(dirichlet_energy(pf)) - 4.0 / dec.n * outer, 0.0) ** 2
    return lhs, rhs, bool(lhs >= rhs - tol)


def upper_bound_functional(h: SiteField, N: int, n: int) -> float:
    """``|{h > 0}| + (N/2)(1 - n^{-1/4}) max(sqrt(E(sqrt h)) - n^{-9/8}, 0)^2``."""
    if len(h) == 0:
        return 0.0
    e = dirichlet_energy(h.map(np.sqrt))
    return len(h) + 0.5 * N * (1 - n ** -0.25) * max(math.sqrt(e) - n ** (-9.0 / 8.0), 0.0) ** 2


def eaxe_gap(s, t, a) -> np.ndarray:
    """``|t - s| - |max(sqrt t - a, 0)^2 - max(sqrt s - a, 0)^2|`` (nonnegative)."""
    s, t, a = (np.asarray(v, dtype=float) for v in (s, t, a))
    u = np.maximum(np.sqrt(t) - a, 0) ** 2
    v = np.maximum(np.sqrt(s) - a, 0) ** 2
    return np.abs(t - s) - np.abs(u - v)


def contout_check(f: SiteField, n: int, delta: float, c_d: float | None = None,
                  c_ps: float = DEFAULT_C_PS):
    """Low-density mass ``sum_{x not in X} sum_{B(x)} f^{2*}`` against its bound.

    Returns
    -------
    lhs, rhs : float
    """
    d = f.d
    p = 2.0 * d / (d - 2)
    c_d = 4 * d * c_ps ** 2 if c_d is None else c_d
    X = high_density_blocks(f, n, delta)
    keep = ~np.isin(encode_sites(block_index(f.sites, n)), encode_sites(X)) if X.size else \
        np.ones(len(f), dtype=bool)
    lhs = float(np.sum(f.values[keep] ** p))
    rhs = c_d * (delta ** p * float(n) ** (d + p)) ** (1 - 2 / p) * (
        lp_norm(f, 2) ** 2 / n ** 2 + dirichlet_energy(f))
    return lhs, rhs


def pipeline_distances(walk: WalkPath, n: int, kappa: float, c: float = 1.0,
                       exponents: dict | None = None, c_ps: float = DEFAULT_C_PS) -> dict:
    """Run blocks, averaging and discretisation on a walk of length ``n^{d+2}``.

    Returns
    -------
    dict
        ``X``, ``|D|``, ``|E|``, the distances ``||f_N - g||_{2,D}`` and
        ``||L_N - g^2||_{1,D}``, the energy of ``f_N`` against
        ``kappa n^d ln n`` and the budget record.
    """
    d = walk.d
    if walk.N != n ** (d + 2):
        raise ValueError("walk length must be n^(d+2)")
    budget = gamma_budget(n, d, c, kappa, exponents, c_ps=c_ps)
    L = local_time(walk)
    f = L.map(np.sqrt)
    energy = dirichlet_energy(f)
    X = high_density_blocks(f, n, budget.delta)
    dec = enlarge_and_domains(X, n, d)
    fbar = local_average(f, budget.M, n)
    prof = discretize(fbar, budget.eta, dec.D, budget.M, n, walk.N)
    g = prof.to_field()
    if dec.D.shape[0]:
        fv, gv, Lv = f(dec.D), g(dec.D), L(dec.D)
        d2 = float(np.sqrt(np.sum((fv - gv) ** 2)))
        d1 = float(np.sum(np.abs(Lv - gv ** 2)))
    else:
        d2 = d1 = 0.0
    return {
        "n": n, "d": d, "N": walk.N, "X": dec.X.tolist(), "size_D": int(dec.D.shape[0]),
        "size_E": int(dec.E.shape[0]), "energy": energy,
        "energy_level": kappa * n ** d * math.log(n),
        "dist_f_coarse_2": d2, "dist_L_coarse_1": d1,
        "gamma0": budget.gamma0, "gamma1": budget.gamma1,
        "within_gamma0": d2 < budget.gamma0, "within_gamma1": d1 < budget.gamma1,
        "budget": budget.as_record(),
    }
