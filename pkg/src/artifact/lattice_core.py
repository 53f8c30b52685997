"""Lattice geometry on Z^d: walks, ranges, local times, norms and Dirichlet energy.

Conventions
-----------
Direction codes are axis-major with the positive direction first, so code
``2*i`` is ``+e_i`` and code ``2*i + 1`` is ``-e_i``.  The range of an
``N``-step walk is the set ``{S_0, ..., S_N}`` while the local time only counts
the times ``0, ..., N-1``; the endpoint may therefore be in the range without
carrying local time.  All ``l^p`` norms are unscaled sums over lattice sites.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LatticeDim", "ScaleRelation", "SiteField", "WalkPath", "CellProfile",
    "unit_vectors", "encode_sites", "build_walk", "walk_from_positions",
    "positions_from_steps", "all_step_sequences", "local_time", "range_size",
    "dirichlet_energy", "lp_norm", "rescaled_profile", "box_sites",
    "neighbourhood", "write_snapshot", "read_snapshot", "hyperoctahedral_group",
    "ball_sites", "is_connected", "site_index", "unit_ball_volume",
]


@dataclass(frozen=True)
class LatticeDim:
    """Dimension of the lattice with the Sobolev conjugate exponent."""
    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d}")

    @property
    def two_star(self) -> float:
        """``2* = 2d/(d-2)``, only defined for ``d >= 3``."""
        if self.d < 3:
            raise ValueError("2* = 2d/(d-2) requires d >= 3")
        return 2.0 * self.d / (self.d - 2)


@dataclass(frozen=True)
class ScaleRelation:
    """The pair ``(n, N)`` with ``N = n**(d+2)``."""
    d: int
    n: int

    def __post_init__(self):
        if self.n < 1 or int(self.n) != self.n:
            raise ValueError(f"scale n must be a positive integer, got {self.n}")
        LatticeDim(self.d)

    @property
    def N(self) -> int:
        return int(self.n) ** (self.d + 2)

    @classmethod
    def from_steps(cls, d: int, N: int) -> "ScaleRelation":
        n = int(round(N ** (1.0 / (d + 2))))
        for cand in (n - 1, n, n + 1):
            if cand >= 1 and cand ** (d + 2) == N:
                return cls(d, cand)
        raise ValueError(f"N={N} is not a perfect (d+2)-th power for d={d}")


def unit_vectors(d: int) -> np.ndarray:
    """Displacements for the ``2d`` direction codes, shape ``(2d, d)``."""
    e = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        e[2 * i, i] = 1
        e[2 * i + 1, i] = -1
    return e


_ENC_BITS = {1: 62, 2: 31, 3: 21}


def encode_sites(sites: np.ndarray) -> np.ndarray:
    """Injective int64 keys for lattice sites (bounded coordinates)."""
    sites = np.asarray(sites, dtype=np.int64)
    if sites.ndim != 2:
        raise ValueError("sites must be a (k, d) array")
    d = sites.shape[1]
    bits = _ENC_BITS.get(d, 62 // d)
    half = 1 << (bits - 1)
    if sites.size and (sites.min() <= -half or sites.max() >= half):
        raise OverflowError("site coordinates too large to encode")
    keys = np.zeros(sites.shape[0], dtype=np.int64)
    for i in range(d):
        keys = (keys << bits) | (sites[:, i] + half)
    return keys


class SiteField:
    """Sparse nonnegative function on Z^d.

    Only strictly positive values are stored, so the stored sites are exactly
    the support.  Sites absent from the field read as zero.

    Parameters
    ----------
    sites : array_like, shape (k, d)
        Lattice sites.  Repeated sites have their values summed.
    values : array_like, shape (k,)
        Finite nonnegative values.
    d : int, optional
        Dimension, required when ``sites`` is empty.
    """

    def __init__(self, sites, values, d: int | None = None):
        values = np.asarray(values, dtype=float).reshape(-1)
        sites = np.asarray(sites, dtype=np.int64)
        if sites.size == 0:
            if d is None:
                raise ValueError("dimension required for an empty field")
            sites = sites.reshape(0, d)
        if sites.ndim != 2 or sites.shape[0] != values.shape[0]:
            raise ValueError("sites and values have inconsistent shapes")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("field values must be finite and nonnegative")
        self.d = sites.shape[1] if d is None else int(d)
        keys = encode_sites(sites)
        ukeys, first, inv = np.unique(keys, return_index=True, return_inverse=True)
        vals = np.zeros(ukeys.shape[0])
        np.add.at(vals, inv.reshape(-1), values)
        keep = vals > 0
        self._keys = ukeys[keep]
        self.sites = sites[first[keep]]
        self.values = vals[keep]
        self.sites.setflags(write=False)
        self.values.setflags(write=False)

    @classmethod
    def from_dict(cls, mapping: dict, d: int) -> "SiteField":
        if not mapping:
            return cls(np.zeros((0, d), dtype=np.int64), [], d=d)
        sites = np.array([tuple(k) for k in mapping], dtype=np.int64).reshape(-1, d)
        return cls(sites, list(mapping.values()), d=d)

    @classmethod
    def zeros(cls, d: int) -> "SiteField":
        return cls(np.zeros((0, d), dtype=np.int64), [], d=d)

    @classmethod
    def indicator(cls, sites, d: int | None = None) -> "SiteField":
        sites = np.unique(np.asarray(sites, dtype=np.int64).reshape(-1, d or np.shape(sites)[-1]), axis=0)
        return cls(sites, np.ones(len(sites)), d=sites.shape[1])

    @property
    def support(self) -> np.ndarray:
        return self.sites

    def __len__(self):
        return self.values.shape[0]

    def __call__(self, points) -> np.ndarray:
        """Values at the given sites (zero off the support)."""
        points = np.asarray(points, dtype=np.int64).reshape(-1, self.d)
        out = np.zeros(points.shape[0])
        if len(self) == 0 or points.shape[0] == 0:
            return out
        try:
            q = encode_sites(points)
        except OverflowError:
            return np.array([self.to_dict().get(tuple(p), 0.0) for p in points])
        idx = np.searchsorted(self._keys, q)
        idx = np.clip(idx, 0, len(self._keys) - 1)
        hit = self._keys[idx] == q
        out[hit] = self.values[idx[hit]]
        return out

    def to_dict(self) -> dict:
        return {tuple(int(c) for c in s): float(v) for s, v in zip(self.sites, self.values)}

    def map(self, func) -> "SiteField":
        """Apply ``func`` to the stored values (``func(0)`` must be 0)."""
        return SiteField(self.sites, func(self.values), d=self.d)

    def restrict(self, domain) -> "SiteField":
        domain = np.asarray(domain, dtype=np.int64).reshape(-1, self.d)
        mask = np.isin(self._keys, encode_sites(domain))
        return SiteField(self.sites[mask], self.values[mask], d=self.d)

    def total(self) -> float:
        return float(self.values.sum())

    def __repr__(self):
        return f"SiteField(d={self.d}, support={len(self)}, total={self.total():.6g})"


def positions_from_steps(start, steps, d: int) -> np.ndarray:
    """Positions ``S_0..S_N`` of the walk with the given direction codes."""
    steps = np.asarray(steps, dtype=np.int64).reshape(-1)
    start = np.asarray(start, dtype=np.int64).reshape(d)
    if steps.size and (steps.min() < 0 or steps.max() >= 2 * d):
        raise ValueError(f"direction codes must lie in [0, {2 * d})")
    pos = np.zeros((steps.size + 1, d), dtype=np.int64)
    if steps.size:
        pos[1:] = np.cumsum(unit_vectors(d)[steps], axis=0)
    return pos + start


@dataclass
class WalkPath:
    """Nearest-neighbour walk with cached occupancy and range.

    Attributes
    ----------
    d : int
    start : ndarray, shape (d,)
    steps : ndarray of direction codes, shape (N,)
    positions : ndarray, shape (N+1, d)
    """
    d: int
    start: np.ndarray
    steps: np.ndarray
    positions: np.ndarray = field(repr=False)
    _occupancy: dict = field(repr=False, default_factory=dict)

    @property
    def N(self) -> int:
        return int(self.steps.shape[0])

    @property
    def range_size(self) -> int:
        """``|R_N| = |{S_0, ..., S_N}|``."""
        return len(self._occupancy)

    @property
    def support_size(self) -> int:
        """Number of sites with positive local time (endpoint excluded)."""
        if self.N == 0:
            return 0
        end = tuple(int(c) for c in self.positions[-1])
        return self.range_size - (self._occupancy[end] == 1)

    @property
    def occupancy(self) -> dict:
        """Visit counts of ``S_0..S_N`` (endpoint included)."""
        return dict(self._occupancy)

    def set_step(self, k: int, code: int) -> None:
        """Redraw step ``k`` in place, updating positions and caches."""
        if not 0 <= code < 2 * self.d:
            raise ValueError("direction code out of range")
        e = unit_vectors(self.d)
        shift = e[code] - e[self.steps[k]]
        if not shift.any():
            return
        occ = self._occupancy
        for p in map(tuple, self.positions[k + 1:]):
            occ[p] -= 1
            if occ[p] == 0:
                del occ[p]
        self.positions[k + 1:] += shift
        for p in map(tuple, self.positions[k + 1:]):
            occ[p] = occ.get(p, 0) + 1
        self.steps[k] = code

    def recompute_range(self) -> int:
        return int(np.unique(encode_sites(self.positions)).size)

    def copy(self) -> "WalkPath":
        return build_walk(self.start, self.steps, self.d)


def _occupancy_of(positions) -> dict:
    occ = {}
    for p in map(tuple, positions.tolist()):
        occ[p] = occ.get(p, 0) + 1
    return occ


def build_walk(start, steps, d: int | None = None) -> WalkPath:
    """Build a walk from a start site and direction codes.

    Raises
    ------
    ValueError
        If a direction code is outside ``[0, 2d)``.
    """
    start = np.asarray(start, dtype=np.int64).reshape(-1)
    d = start.shape[0] if d is None else d
    steps = np.asarray(steps, dtype=np.int64).reshape(-1).copy()
    pos = positions_from_steps(start, steps, d)
    return WalkPath(d, start.copy(), steps, pos, _occupancy_of(pos))


def walk_from_positions(positions) -> WalkPath:
    """Inverse of :func:`positions_from_steps` for nearest-neighbour paths."""
    positions = np.asarray(positions, dtype=np.int64)
    d = positions.shape[1]
    diff = np.diff(positions, axis=0)
    if np.any(np.abs(diff).sum(axis=1) != 1):
        raise ValueError("consecutive positions must be lattice neighbours")
    axis = np.argmax(np.abs(diff), axis=1)
    sign = diff[np.arange(len(diff)), axis]
    steps = 2 * axis + (sign < 0)
    return build_walk(positions[0], steps, d)


def all_step_sequences(d: int, N: int) -> np.ndarray:
    """Every step sequence of length ``N``, shape ``((2d)**N, N)``, lexicographic."""
    if N == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.indices((2 * d,) * N).reshape(N, -1).T
    return grids.astype(np.int64)


def range_size(positions) -> int:
    return int(np.unique(encode_sites(np.asarray(positions))).size)


def local_time(walk: WalkPath) -> SiteField:
    """Visit counts ``L_N(x)`` over the times ``0..N-1``."""
    if walk.N == 0:
        return SiteField.zeros(walk.d)
    pos = walk.positions[:-1]
    return SiteField(pos, np.ones(pos.shape[0]), d=walk.d)


def neighbourhood(sites, d: int, include_self: bool = True) -> np.ndarray:
    """Sites at l1-distance at most one from ``sites`` (unique rows)."""
    sites = np.asarray(sites, dtype=np.int64).reshape(-1, d)
    shifts = unit_vectors(d)
    if include_self:
        shifts = np.vstack([np.zeros((1, d), dtype=np.int64), shifts])
    allp = (sites[:, None, :] + shifts[None, :, :]).reshape(-1, d)
    return np.unique(allp, axis=0)


def box_sites(center, side: int) -> np.ndarray:
    """Lattice points of the half-open box ``center + Lambda(side)``.

    ``Lambda(r) = {x : -r/2 < x_i <= r/2}``.
    """
    center = np.asarray(center, dtype=np.int64).reshape(-1)
    d = center.shape[0]
    lo = -(side // 2) + (1 if side % 2 == 0 else 0)
    axis = np.arange(lo, lo + side)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return grid + center


def dirichlet_energy(f: SiteField, domain=None) -> float:
    """Dirichlet energy ``(1/2d) sum_{|y-z|=1} (f(y)-f(z))^2``.

    Parameters
    ----------
    f : SiteField
    domain : array_like of sites, optional
        If given, only ordered pairs with both endpoints in ``domain`` count.

    Returns
    -------
    float
    """
    d = f.d
    e = unit_vectors(d)[0::2]
    if domain is None:
        if len(f) == 0:
            return 0.0
        lows = neighbourhood(f.sites, d)
        total = 0.0
        v0 = f(lows)
        for step in e:
            total += np.sum((v0 - f(lows + step)) ** 2)
    else:
        dom = np.unique(np.asarray(domain, dtype=np.int64).reshape(-1, d), axis=0)
        if dom.shape[0] == 0:
            return 0.0
        keys = np.sort(encode_sites(dom))
        v0 = f(dom)
        total = 0.0
        for step in e:
            nb = dom + step
            inside = np.isin(encode_sites(nb), keys, assume_unique=False)
            total += np.sum((v0[inside] - f(nb[inside])) ** 2)
    # each unordered edge appears twice among ordered pairs
    return float(2.0 * total / (2 * d))


def lp_norm(f: SiteField, p: float, domain=None) -> float:
    """Unscaled ``l^p`` norm, optionally restricted to ``domain``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    vals = f.values if domain is None else f.restrict(domain).values
    if vals.size == 0:
        return 0.0
    if np.isinf(p):
        return float(vals.max())
    m = vals.max()
    return float(m * np.sum((vals / m) ** p) ** (1.0 / p))


@dataclass
class CellProfile:
    """Piecewise-constant function on the cells ``spacing*(k + [0,1)^d)``.

    Attributes
    ----------
    spacing : float
    cells : ndarray, shape (k, d)
        Integer cell indices; cell ``k`` covers ``[k*h, (k+1)*h)``.
    values : ndarray, shape (k,)
    """
    spacing: float
    cells: np.ndarray
    values: np.ndarray

    @property
    def d(self) -> int:
        return self.cells.shape[1]

    def integral(self) -> float:
        return float(self.values.sum() * self.spacing ** self.d)

    def centers(self) -> np.ndarray:
        return (self.cells + 0.5) * self.spacing

    def __call__(self, x) -> np.ndarray:
        """Evaluate at points of R^d."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = np.floor(x / self.spacing).astype(np.int64)
        lookup = SiteField(self.cells, self.values, d=self.d)
        return lookup(idx)


def rescaled_profile(L: SiteField, scale: ScaleRelation) -> CellProfile:
    """``l_N(x) = (n^d/N) L_N(floor(n x))`` as a cell profile.

    Raises
    ------
    ValueError
        If ``sum L`` differs from ``N``.
    """
    N, n, d = scale.N, scale.n, scale.d
    if L.d != d:
        raise ValueError("dimension mismatch")
    if abs(L.total() - N) > 1e-9 * max(N, 1):
        raise ValueError(f"local time sums to {L.total()}, expected N={N}")
    return CellProfile(1.0 / n, L.sites.copy(), L.values * (n ** d / N))


def write_snapshot(path, walk: WalkPath) -> None:
    """Write ``d N start_coords`` then the ``N`` direction codes."""
    header = " ".join(str(int(v)) for v in [walk.d, walk.N, *walk.start])
    body = " ".join(str(int(c)) for c in walk.steps)
    with open(path, "w") as fh:
        fh.write(header + "\n")
        if body:
            fh.write(body + "\n")


def read_snapshot(path) -> WalkPath:
    with open(path) as fh:
        header = fh.readline().split()
        rest = fh.read().split()
    d, N = int(header[0]), int(header[1])
    start = [int(v) for v in header[2:2 + d]]
    if len(start) != d:
        raise ValueError("snapshot header must hold d start coordinates")
    steps = [int(v) for v in rest]
    if len(steps) != N:
        raise ValueError(f"snapshot declares N={N} but holds {len(steps)} steps")
    return build_walk(start, steps, d)


def hyperoctahedral_group(d: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All signed permutations ``(perm, signs)`` with ``g(x)_i = signs[i] x[perm[i]]``."""
    out = []
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1, -1), repeat=d):
            out.append((perm, signs))
    return out


def ball_sites(center, radius: float) -> np.ndarray:
    """Lattice points with Euclidean distance at most ``radius`` from ``center``."""
    center = np.asarray(center, dtype=float).reshape(-1)
    d = center.shape[0]
    lo = np.floor(center - radius).astype(np.int64)
    hi = np.ceil(center + radius).astype(np.int64)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    dist2 = np.sum((grid - center) ** 2, axis=1)
    return grid[dist2 <= radius * radius + 1e-12]


def is_connected(sites) -> bool:
    """Nearest-neighbour connectivity of a finite site set."""
    sites = np.asarray(sites, dtype=np.int64)
    if sites.shape[0] == 0:
        return False
    d = sites.shape[1]
    keys = encode_sites(sites)
    order = np.argsort(keys)
    skeys = keys[order]
    seen = np.zeros(sites.shape[0], dtype=bool)
    frontier = [0]
    seen[0] = True
    e = unit_vectors(d)
    while frontier:
        cur = sites[frontier]
        nb = (cur[:, None, :] + e[None]).reshape(-1, d)
        q = encode_sites(nb)
        idx = np.clip(np.searchsorted(skeys, q), 0, len(skeys) - 1)
        hit = skeys[idx] == q
        cand = order[idx[hit]]
        cand = np.unique(cand[~seen[cand]])
        seen[cand] = True
        frontier = cand.tolist()
    return bool(seen.all())


def site_index(sites):
    """Return ``lookup(points) -> index or -1`` for a fixed site list."""
    keys = encode_sites(sites)
    order = np.argsort(keys)
    skeys = keys[order]

    def lookup(points):
        points = np.asarray(points, dtype=np.int64).reshape(-1, sites.shape[1])
        q = encode_sites(points)
        if skeys.size == 0:
            return np.full(q.shape[0], -1, dtype=np.int64)
        idx = np.clip(np.searchsorted(skeys, q), 0, len(skeys) - 1)
        out = np.where(skeys[idx] == q, order[idx], -1)
        return out.astype(np.int64)

    return lookup


def unit_ball_volume(d: int) -> float:
    """Volume of the Euclidean unit ball in R^d."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)
