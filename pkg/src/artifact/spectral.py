"""Ball spectral constants, the radial eigenfunction and lattice eigenpairs.

The continuum objects are the principal Dirichlet eigenvalue ``lambda_d`` of
``-Delta`` on the unit ball, the ball volume ``omega_d`` and the minimiser and
minimum of

    psi(r) = omega_d r^d + lambda_d / (2 d r^2).

On the lattice we use the normalised Laplacian ``Delta_1 f(x) = avg_{y~x} f(y) - f(x)``.
A lattice ball of radius ``R`` then has ``lambda_1 ~ lambda_d / (2 d R^2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq
from scipy.special import gammaln

from .lattice_core import (
    CellProfile, ScaleRelation, is_connected, site_index, unit_ball_volume,
    unit_vectors,
)

__all__ = [
    "BallSpectrum", "RadialEigenfunction", "DiscreteEigenpair", "ModifiedEigenfunction",
    "bessel_j", "bessel_first_zero", "continuum_constants", "psi",
    "eigenfunction_profile", "phi_squared_on_lattice", "discrete_laplacian",
    "discrete_principal_eigenpair", "discrete_spectral_gap", "modified_eigenfunction",
]


def _reduced_bessel(nu: float, x) -> np.ndarray:
    """Entire function ``x^{-nu} J_nu(x)`` by its power series."""
    x = np.asarray(x, dtype=float)
    y = (x / 2.0) ** 2
    out = np.zeros_like(x)
    # terms (-1)^k y^k / (k! Gamma(k+nu+1)) * 2^{-nu}
    log_c = -nu * math.log(2.0)
    term_scale = np.exp(log_c - gammaln(nu + 1.0))
    term = np.full_like(x, term_scale)
    for k in range(0, 200):
        out += term
        term = -term * y / ((k + 1) * (k + 1 + nu))
        if np.all(np.abs(term) <= 1e-17 * np.maximum(np.abs(out), 1e-300)):
            break
    return out


def bessel_j(nu: float, x) -> np.ndarray:
    """Bessel function of the first kind, ``nu > -1``, moderate ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    return _reduced_bessel(nu, x) * x ** nu


def bessel_first_zero(order: float) -> float:
    """First positive zero of ``J_order``.

    Parameters
    ----------
    order : float
        Order ``> -1``; ``order = -1/2`` gives ``pi/2``.

    Returns
    -------
    float
        The zero, bracketed by a scan and refined by Brent's method.
    """
    if order <= -1:
        raise ValueError("order must exceed -1")
    # x^{-nu} J_nu has the same positive zeros and no singularity at 0
    f = lambda x: float(_reduced_bessel(order, x))
    step = 0.05
    a = step
    fa = f(a)
    while True:
        b = a + step
        fb = f(b)
        if fa * fb <= 0:
            break
        a, fa = b, fb
        if a > 100:
            raise RuntimeError("no zero bracketed")
    return brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


@dataclass(frozen=True)
class BallSpectrum:
    """Continuum constants in dimension ``d``.

    Attributes
    ----------
    d : int
    lambda_d : float
        First Dirichlet eigenvalue of ``-Delta`` on the unit ball.
    omega_d : float
        Volume of the unit ball.
    rho_d : float
        Minimiser of ``psi``.
    chi_d : float
        Minimum of ``psi``.
    """
    d: int
    lambda_d: float
    omega_d: float
    rho_d: float
    chi_d: float

    def psi(self, r):
        return psi(r, self.d, self)

    @property
    def chi_from_psi(self) -> float:
        return float(self.psi(self.rho_d))

    @property
    def brownian_radius(self) -> float:
        """Minimiser of ``lambda_d/(2 r^2) + omega_d r^d``.

        This is the radius for Brownian motion run at unit speed, which is
        ``d`` times faster than the diffusive limit of the lattice walk.
        Rescaling time by ``d`` maps it onto ``rho_d``.
        """
        return (self.lambda_d / (self.d * self.omega_d)) ** (1.0 / (self.d + 2))

    def as_record(self) -> dict:
        return {"d": self.d, "lambda_d": self.lambda_d, "omega_d": self.omega_d,
                "rho_d": self.rho_d, "chi_d": self.chi_d}


@lru_cache(maxsize=None)
def continuum_constants(d: int) -> BallSpectrum:
    """Closed-form ``(lambda_d, omega_d, rho_d, chi_d)``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    lam = bessel_first_zero(d / 2.0 - 1.0) ** 2
    om = unit_ball_volume(d)
    rho = (lam / (d * d * om)) ** (1.0 / (d + 2))
    chi = (d + 2) / 2.0 * (lam / d ** 2) ** (d / (d + 2)) * om ** (2.0 / (d + 2))
    return BallSpectrum(d, lam, om, rho, chi)


def psi(r, d: int, spectrum: BallSpectrum | None = None):
    """``psi(r) = omega_d r^d + lambda_d/(2 d r^2)`` for ``r > 0``."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ValueError("psi needs r > 0")
    s = spectrum or continuum_constants(d)
    val = s.omega_d * r_arr ** d + s.lambda_d / (2 * d * r_arr ** 2)
    return float(val) if val.ndim == 0 else val


@dataclass
class RadialEigenfunction:
    """L2-normalised principal eigenfunction of ``-Delta`` on ``B(0, rho_d)``.

    ``phi(r) = A u(k r)`` with ``u(x) = x^{-nu} J_nu(x)``, ``nu = d/2 - 1``
    and ``k = j_{nu,1} / rho_d``.

    Attributes
    ----------
    d : int
    rho : float
    r : ndarray
        Radial sample points on ``[0, rho]``.
    values : ndarray
        ``phi`` at ``r``.
    amplitude : float
    """
    d: int
    rho: float
    r: np.ndarray
    values: np.ndarray
    amplitude: float
    wavenumber: float

    @property
    def nu(self) -> float:
        return self.d / 2.0 - 1.0

    def radial(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        val = self.amplitude * _reduced_bessel(self.nu, self.wavenumber * np.minimum(r, self.rho))
        return np.where(r < self.rho, val, 0.0)

    def radial_derivative(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        x = self.wavenumber * np.minimum(r, self.rho)
        val = -self.amplitude * self.wavenumber * x * _reduced_bessel(self.nu + 1.0, x)
        return np.where(r <= self.rho, val, 0.0)

    @property
    def boundary_slope(self) -> float:
        """``phi'(rho_d)``, strictly negative."""
        return float(self.radial_derivative(self.rho))

    def __call__(self, points, center=None) -> np.ndarray:
        """``phi_center`` at points of R^d."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        c = np.zeros(self.d) if center is None else np.asarray(center, dtype=float)
        return self.radial(np.linalg.norm(points - c, axis=1))

    def _shell(self, g):
        surface = self.d * unit_ball_volume(self.d)
        return surface * g * self.r ** (self.d - 1)

    def mass(self) -> float:
        """``int phi^2`` by Simpson's rule on the stored samples."""
        from scipy.integrate import simpson
        return float(simpson(self._shell(self.values ** 2), x=self.r))

    def gradient_energy(self) -> float:
        """``int |grad phi|^2`` by Simpson's rule on the stored samples."""
        from scipy.integrate import simpson
        return float(simpson(self._shell(self.radial_derivative(self.r) ** 2), x=self.r))


@lru_cache(maxsize=None)
def eigenfunction_profile(d: int, resolution: int = 2001) -> RadialEigenfunction:
    """Principal radial eigenfunction on ``B(0, rho_d)``.

    The amplitude uses ``int_0^1 J_nu(j t)^2 t dt = J_{nu+1}(j)^2 / 2``.
    """
    if resolution < 1000:
        raise ValueError("resolution must be at least 1000 samples")
    s = continuum_constants(d)
    nu = d / 2.0 - 1.0
    j = math.sqrt(s.lambda_d)
    k = j / s.rho_d
    jnext = float(bessel_j(nu + 1.0, j))
    integral = d * s.omega_d * k ** (-2 * nu) * s.rho_d ** 2 * jnext ** 2 / 2.0
    amp = 1.0 / math.sqrt(integral)
    r = np.linspace(0.0, s.rho_d, resolution)
    vals = amp * _reduced_bessel(nu, k * r)
    vals[-1] = 0.0
    # the result is cached and shared
    r.setflags(write=False)
    vals.setflags(write=False)
    return RadialEigenfunction(d, s.rho_d, r, vals, amp, k)


def phi_squared_on_lattice(center, scale: ScaleRelation) -> CellProfile:
    """``(phi_center)^2`` sampled at the cell centres of the ``1/n`` grid.

    Values are renormalised so that the cell sum times ``n^{-d}`` is one.
    """
    d, n = scale.d, scale.n
    prof = eigenfunction_profile(d)
    center = np.asarray(center, dtype=float).reshape(d)
    h = 1.0 / n
    lo = np.floor((center - prof.rho) / h).astype(np.int64) - 1
    hi = np.ceil((center + prof.rho) / h).astype(np.int64) + 1
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    cells = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    vals = prof((cells + 0.5) * h, center) ** 2
    keep = vals > 0
    cells, vals = cells[keep], vals[keep]
    vals = vals / (vals.sum() * h ** d)
    return CellProfile(h, cells, vals)


@dataclass
class DiscreteEigenpair:
    """Principal Dirichlet eigenpair of ``-Delta_1`` on a finite site set.

    The eigenvector is positive with unit Euclidean norm.
    """
    sites: np.ndarray
    lambda1: float
    vector: np.ndarray
    residual: float
    iterations: int

    def normalised(self, scale: float) -> np.ndarray:
        """Eigenvector rescaled so that ``scale^{-d} * sum = 1``."""
        d = self.sites.shape[1]
        return self.vector * scale ** d / self.vector.sum()


def discrete_laplacian(sites) -> sp.csr_matrix:
    """Sparse ``-Delta_1`` on ``sites`` with Dirichlet exterior."""
    sites = np.asarray(sites, dtype=np.int64)
    k, d = sites.shape
    lookup = site_index(sites)
    rows, cols = [], []
    for e in unit_vectors(d):
        j = lookup(sites + e)
        m = j >= 0
        rows.append(np.nonzero(m)[0])
        cols.append(j[m])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    P = sp.csr_matrix((np.full(rows.size, 1.0 / (2 * d)), (rows, cols)), shape=(k, k))
    return (sp.identity(k, format="csr") - P).tocsr()


def _solver(A):
    if A.shape[0] <= 8000:
        lu = spla.splu(A.tocsc())
        return lu.solve
    import pyamg
    ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric")

    def solve(b):
        return ml.solve(b, tol=1e-14, accel="cg", maxiter=500)
    return solve


def discrete_principal_eigenpair(domain, tol: float = 1e-10, maxiter: int = 500) -> DiscreteEigenpair:
    """Principal eigenpair of ``-Delta_1`` by inverse iteration.

    Parameters
    ----------
    domain : array_like, shape (k, d)
        Finite, nonempty, nearest-neighbour connected site set.
    tol : float
        Relative stagnation tolerance on the Rayleigh quotient.

    Returns
    -------
    DiscreteEigenpair

    Raises
    ------
    ValueError
        If the domain is empty or disconnected.
    """
    sites = np.unique(np.asarray(domain, dtype=np.int64), axis=0)
    if sites.shape[0] == 0:
        raise ValueError("empty domain")
    if not is_connected(sites):
        raise ValueError("domain must be connected")
    A = discrete_laplacian(sites)
    solve = _solver(A)
    v = np.ones(sites.shape[0])
    v /= np.linalg.norm(v)
    lam = float(v @ (A @ v))
    res = np.inf
    it = 0
    for it in range(1, maxiter + 1):
        w = solve(v)
        w /= np.linalg.norm(w)
        new = float(w @ (A @ w))
        res = float(np.linalg.norm(A @ w - new * w))
        done = abs(new - lam) <= tol * abs(new) and res <= 1e-9
        v, lam = w, new
        if done:
            break
    if v.sum() < 0:
        v = -v
    return DiscreteEigenpair(sites, lam, v, res, it)


def discrete_spectral_gap(domain) -> tuple[float, float]:
    """Two smallest Dirichlet eigenvalues of ``-Delta_1`` (shift-invert Lanczos)."""
    sites = np.unique(np.asarray(domain, dtype=np.int64), axis=0)
    A = discrete_laplacian(sites)
    if sites.shape[0] < 3:
        w = np.linalg.eigvalsh(A.toarray())
        return float(w[0]), float(w[1]) if w.size > 1 else float("nan")
    w = spla.eigsh(A, k=2, sigma=0.0, which="LM", return_eigenvectors=False)
    w = np.sort(w)
    return float(w[0]), float(w[1])


@dataclass
class ModifiedEigenfunction:
    """``phi + a`` on the ball, a convex decreasing shell, then ``a/2``.

    On the shell ``r = rho + x`` the profile solves ``h(0) = a``,
    ``h'(0) = phi'(rho) = s`` and ``h' = s (1 - x/w)^2`` up to
    ``w = 3a/(2|s|)``, so ``h(w) = a/2`` and ``h'(w) = 0``; beyond ``w`` it is
    constant.  The second derivative is bounded by ``4 s^2/(3a)``.
    """
    profile: RadialEigenfunction
    a: float
    slope: float
    width: float
    n: int

    @property
    def rho(self) -> float:
        return self.profile.rho

    @property
    def second_derivative_bound(self) -> float:
        return 2.0 * abs(self.slope) / self.width

    def radial(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        rho, a, s, w = self.rho, self.a, self.slope, self.width
        x = np.clip(r - rho, 0.0, w)
        shell = a + s * w / 3.0 * (1.0 - (1.0 - x / w) ** 3)
        inner = self.profile.radial(np.minimum(r, rho)) + a
        return np.where(r < rho, inner, shell)

    def radial_derivative(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        x = np.clip(r - self.rho, 0.0, self.width)
        shell = self.slope * (1.0 - x / self.width) ** 2
        return np.where(r < self.rho, self.profile.radial_derivative(r), shell)

    def __call__(self, points, center=None) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        c = np.zeros(points.shape[1]) if center is None else np.asarray(center, dtype=float)
        return self.radial(np.linalg.norm(points - c, axis=1))

    def on_lattice(self, sites, center=None) -> np.ndarray:
        """Values at ``y/n`` for lattice sites ``y``."""
        return self(np.asarray(sites, dtype=float) / self.n, center)


def modified_eigenfunction(scale: ScaleRelation, kappa: float) -> ModifiedEigenfunction:
    """Build the strictly positive modification with ``a = n^{-kappa}``.

    Raises
    ------
    ValueError
        If ``kappa`` is outside ``(0, 1)`` or the shell would be wider than one.
    """
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    prof = eigenfunction_profile(scale.d)
    a = float(scale.n) ** (-kappa)
    s = prof.boundary_slope
    w = 1.5 * a / abs(s)
    if w > 1.0:
        raise ValueError("n^-kappa too large for a unit-width convex shell")
    return ModifiedEigenfunction(prof, a, s, w, scale.n)
