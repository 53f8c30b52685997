"""Multilinear interpolation of lattice fields and discrete functional inequalities.

A lattice field ``f`` is extended to ``R^d`` by interpolating linearly along
each axis in turn.  On a unit cell the result is the multilinear polynomial
fixed by the ``2^d`` corner values, so its integral, its square integral and
its Dirichlet integral are exact quadratic forms of the corner values.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .lattice_core import (
    CellProfile, ScaleRelation, SiteField, box_sites, dirichlet_energy, lp_norm,
)

__all__ = [
    "CellwisePolynomial", "multilinear_interpolate", "integral_identities",
    "rescale_profile_operator", "check_poincare_sobolev", "check_poincare_wirtinger",
    "check_sobolev_full_space", "poincare_wirtinger_constant", "block_poincare_constant",
]

# one-dimensional corner Gram matrices on [0, 1] for the hat pair (1 - t, t)
_MASS = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])
_STIFF = np.array([[1.0, -1.0], [-1.0, 1.0]])


@dataclass
class CellwisePolynomial:
    """Multilinear interpolant stored by unit cells.

    Attributes
    ----------
    cells : ndarray, shape (k, d)
        Lower corners of the cells touching the support.
    corners : ndarray, shape (k, 2, ..., 2)
        Corner values, axis ``i + 1`` indexing the offset along ``e_i``.
    """
    cells: np.ndarray
    corners: np.ndarray

    @property
    def d(self) -> int:
        return self.cells.shape[1]

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        base = np.floor(x).astype(np.int64)
        t = x - base
        lookup = {tuple(c): i for i, c in enumerate(self.cells.tolist())}
        out = np.zeros(x.shape[0])
        for j, (b, tt) in enumerate(zip(base, t)):
            i = lookup.get(tuple(b.tolist()))
            if i is None:
                continue
            c = self.corners[i]
            for ti in tt:
                c = c[0] * (1 - ti) + c[1] * ti
            out[j] = c
        return out

    def positive_volume(self) -> float:
        """Lebesgue measure of ``{F > 0}`` (cells with a positive corner)."""
        flat = self.corners.reshape(self.corners.shape[0], -1)
        return float(np.count_nonzero(flat.max(axis=1) > 0))


def multilinear_interpolate(f: SiteField) -> CellwisePolynomial:
    """Iterated axis-by-axis linear interpolation of ``f``."""
    d = f.d
    offsets = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
    if len(f) == 0:
        return CellwisePolynomial(np.zeros((0, d), dtype=np.int64), np.zeros((0,) + (2,) * d))
    cells = np.unique((f.sites[:, None, :] - offsets[None]).reshape(-1, d), axis=0)
    vals = f((cells[:, None, :] + offsets[None]).reshape(-1, d))
    return CellwisePolynomial(cells, vals.reshape((cells.shape[0],) + (2,) * d))


def _quadratic_form(corners, mats) -> np.ndarray:
    t = corners
    for axis, m in enumerate(mats):
        t = np.moveaxis(np.tensordot(t, m, axes=([axis + 1], [0])), -1, axis + 1)
    return np.sum(corners * t, axis=tuple(range(1, corners.ndim)))


def integral_identities(F: CellwisePolynomial, f: SiteField | None = None):
    """Exact ``(int F, int F^2, int |grad F|^2)``.

    Parameters
    ----------
    F : CellwisePolynomial
    f : SiteField, optional
        Source field, only used to check the dimension.

    Returns
    -------
    tuple of float
    """
    d = F.d
    if f is not None and f.d != d:
        raise ValueError("dimension mismatch")
    if F.cells.shape[0] == 0:
        return 0.0, 0.0, 0.0
    c = F.corners
    total = float(np.sum(c) / 2 ** d)
    square = float(np.sum(_quadratic_form(c, [_MASS] * d)))
    grad = 0.0
    for i in range(d):
        mats = [_MASS] * d
        mats[i] = _STIFF
        grad += float(np.sum(_quadratic_form(c, mats)))
    return total, square, grad


def rescale_profile_operator(f: SiteField, scale: ScaleRelation) -> CellProfile:
    """``Phi_n(f)(x) = (n^d / N) f(floor(n x))^2`` as a cell profile."""
    n, N, d = scale.n, scale.N, scale.d
    return CellProfile(1.0 / n, f.sites.copy(), (n ** d / N) * f.values ** 2)


def _on_box(f: SiteField, n: int, center):
    center = np.zeros(f.d, dtype=np.int64) if center is None else center
    box = box_sites(center, n)
    return box, f(box)


def check_poincare_sobolev(f: SiteField, n: int, center=None) -> float:
    """``||f||_{2*} / ((1/n)||f||_2 + sqrt(2d E(f)))`` on the box ``center + Lambda(n)``.

    Returns 0 for the zero field.
    """
    d = f.d
    if d < 3:
        raise ValueError("the Sobolev exponent 2* needs d >= 3")
    p = 2.0 * d / (d - 2)
    box, vals = _on_box(f, n, center)
    if not np.any(vals):
        return 0.0
    g = SiteField(box, vals, d=d)
    num = lp_norm(g, p)
    den = lp_norm(g, 2) / n + math.sqrt(2 * d * dirichlet_energy(g, box))
    return num / den


def check_poincare_wirtinger(f: SiteField, n: int, center=None) -> float:
    """``||f - mean||_2 / (n sqrt(2d E(f)))`` on the box ``center + Lambda(n)``.

    Raises
    ------
    ValueError
        If the energy vanishes for a nonconstant field.
    """
    d = f.d
    box, vals = _on_box(f, n, center)
    dev = vals - vals.mean()
    num = float(np.sqrt(np.sum(dev ** 2)))
    energy = dirichlet_energy(SiteField(box, vals, d=d), box)
    if energy == 0.0:
        if num > 1e-12 * max(1.0, float(np.abs(vals).max())):
            raise ValueError("nonconstant field with zero energy on a connected box")
        return 0.0
    return num / (n * math.sqrt(2 * d * energy))


def check_sobolev_full_space(f: SiteField) -> float:
    """``||f||_{2*} / sqrt(2d E(f))`` for finitely supported ``f``."""
    d = f.d
    if d < 3:
        raise ValueError("needs d >= 3")
    if len(f) == 0:
        return 0.0
    return lp_norm(f, 2.0 * d / (d - 2)) / math.sqrt(2 * d * dirichlet_energy(f))


def poincare_wirtinger_constant(d: int, side: int | None = None) -> float:
    """Exact best constant in ``||f - mean|| <= c n sqrt(2d E(f, box))``.

    The Neumann spectral gap of the side-``M`` box for the form ``E`` is
    ``(2/d)(1 - cos(pi/M))``.  The constant decreases in ``M`` from ``1/4`` at
    ``M = 2`` towards ``1/(2 pi)``; ``side=None`` returns the supremum.
    """
    M = 2 if side is None else int(side)
    if M < 2:
        return 0.0
    return 1.0 / (M * math.sqrt(4.0 * (1.0 - math.cos(math.pi / M))))


def block_poincare_constant(d: int) -> float:
    """Best ``c`` with ``||f - mean||_{2,B} <= M c sqrt(E(f, B))`` for every block side ``M``."""
    return math.sqrt(2 * d) * poincare_wirtinger_constant(d)
