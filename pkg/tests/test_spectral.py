import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar
from scipy.special import jn_zeros, jv

from artifact.lattice_core import ScaleRelation, ball_sites, box_sites
from artifact.spectral import (
    bessel_first_zero, bessel_j, continuum_constants, discrete_laplacian,
    discrete_principal_eigenpair, discrete_spectral_gap, eigenfunction_profile,
    modified_eigenfunction, phi_squared_on_lattice, psi,
)

# frozen from mpmath.besseljzero at 30 digits
J0_ZERO = 2.404825557695772768621631879
J1_ZERO = 3.831705970207512315614435886


def test_bessel_zero_examples():
    assert bessel_first_zero(0.5) == pytest.approx(math.pi, abs=1e-13)
    assert bessel_first_zero(0) == pytest.approx(J0_ZERO, abs=1e-13)
    assert bessel_first_zero(1) == pytest.approx(J1_ZERO, abs=1e-13)
    assert bessel_first_zero(-0.5) == pytest.approx(math.pi / 2, abs=1e-13)
    with pytest.raises(ValueError):
        bessel_first_zero(-1)


@given(st.floats(0, 6))
def test_bessel_zero_against_mpmath(order):
    ref = float(mpmath.besseljzero(mpmath.mpf(order), 1))
    assert bessel_first_zero(order) == pytest.approx(ref, rel=1e-12)


@given(st.floats(0, 3), st.floats(0, 12))
def test_bessel_values_against_mpmath(order, x):
    # scipy's jv underflows to 0 for subnormal x, so mpmath is the oracle
    ref = float(mpmath.besselj(mpmath.mpf(order), mpmath.mpf(x)))
    assert float(bessel_j(order, x)) == pytest.approx(ref, abs=1e-12)


def test_bessel_values_against_scipy_grid():
    x = np.linspace(0.1, 12, 200)
    for order in (0.0, 0.5, 1.0, 2.5):
        assert np.allclose(bessel_j(order, x), jv(order, x), atol=1e-12)


def test_constants_examples():
    s3 = continuum_constants(3)
    assert s3.lambda_d == pytest.approx(math.pi ** 2, rel=1e-14)
    assert s3.omega_d == pytest.approx(4 * math.pi / 3, rel=1e-14)
    assert s3.rho_d == pytest.approx(0.7648807, abs=1e-7)
    assert s3.chi_d == pytest.approx(4.686081, abs=1e-6)
    # listed values, within the acceptance tolerance
    assert abs(s3.rho_d - 0.764884) < 1e-5 and abs(s3.chi_d - 4.68608) < 1e-5
    s2 = continuum_constants(2)
    assert s2.lambda_d == pytest.approx(jn_zeros(0, 1)[0] ** 2, rel=1e-13)
    assert s2.omega_d == pytest.approx(math.pi)
    assert s2.rho_d == pytest.approx(0.8236436, abs=1e-7)
    assert s2.chi_d == pytest.approx(4.262442, abs=1e-6)
    assert abs(s2.rho_d - 0.823647) < 1e-5 and abs(s2.chi_d - 4.26244) < 1e-5


@pytest.mark.parametrize("d", [1, 2, 3, 4, 5])
def test_constants_two_routes(d):
    s = continuum_constants(d)
    res = minimize_scalar(lambda r: psi(r, d), bounds=(0.05, 5), method="bounded",
                          options={"xatol": 1e-12})
    assert res.x == pytest.approx(s.rho_d, abs=1e-6)
    assert res.fun == pytest.approx(s.chi_d, rel=1e-10)
    assert s.chi_from_psi == pytest.approx(s.chi_d, rel=1e-10)
    h = 1e-5
    deriv = (psi(s.rho_d + h, d) - psi(s.rho_d - h, d)) / (2 * h)
    assert abs(deriv) < 1e-8 * 1e3  # central-difference noise ~ eps/h
    assert psi(1e-3, d) > 10 * s.chi_d and psi(1e3, d) > 10 * s.chi_d


def test_psi_examples():
    assert psi(1.0, 3) == pytest.approx(4 * math.pi / 3 + math.pi ** 2 / 6, rel=1e-14)
    assert psi(1.0, 3) == pytest.approx(5.83372, abs=1e-5)
    with pytest.raises(ValueError):
        psi(0.0, 3)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_eigenfunction_normalisation(d):
    prof = eigenfunction_profile(d)
    s = continuum_constants(d)
    assert prof.mass() == pytest.approx(1.0, abs=1e-8)
    assert prof.gradient_energy() / (s.lambda_d / s.rho_d ** 2) == pytest.approx(1.0, abs=1e-4)
    assert np.all(np.diff(prof.values) <= 1e-15)
    assert prof.boundary_slope < 0
    assert prof.radial(np.array([s.rho_d * 1.01]))[0] == 0.0


def test_eigenfunction_matches_shooting_in_3d():
    prof = eigenfunction_profile(3)
    rho = prof.rho
    k2 = continuum_constants(3).lambda_d / rho ** 2

    def rhs(r, y):
        return [y[1], -2.0 / r * y[1] - k2 * y[0]]
    r0 = 1e-6
    sol = solve_ivp(rhs, (r0, rho), [1.0 - k2 * r0 ** 2 / 6, -k2 * r0 / 3], rtol=1e-11,
                    atol=1e-13, dense_output=True)
    r = np.linspace(0.01, rho * 0.999, 50)
    shoot = sol.sol(r)[0]
    ours = prof.radial(r)
    ratio = ours / shoot
    assert np.ptp(ratio) < 1e-6 * ratio.mean()
    closed = np.sin(math.pi * r / rho) / r
    assert np.ptp(ours / closed) < 1e-9


def test_boundary_slope_square_is_six():
    assert eigenfunction_profile(3).boundary_slope ** 2 == pytest.approx(6.0, rel=1e-9)


def test_phi_squared_on_lattice_examples():
    errs = []
    for n in (8, 16, 32):
        p = phi_squared_on_lattice(np.zeros(3), ScaleRelation(3, n))
        assert p.integral() == pytest.approx(1.0, abs=1e-12)
        assert p(np.array([[1e-9, 1e-9, 1e-9]]))[0] == pytest.approx(p.values.max())
        # L1 distance to the exact profile with a 4^3 midpoint rule per cell
        prof = eigenfunction_profile(3)
        t = (np.arange(4) + 0.5) / 4
        q = np.stack(np.meshgrid(t, t, t, indexing="ij"), -1).reshape(-1, 3)
        pts = (p.cells[:, None, :] + q[None]) / n
        exact = prof(pts.reshape(-1, 3)).reshape(len(p.cells), -1) ** 2
        missing = 1.0 - exact.mean(axis=1).sum() / n ** 3
        errs.append(np.abs(p.values[:, None] - exact).mean(axis=1).sum() / n ** 3 + abs(missing))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] * 32 < errs[0] * 8 * 1.5


def brute_laplacian(sites):
    k, d = sites.shape
    A = np.eye(k)
    index = {tuple(s): i for i, s in enumerate(sites)}
    for i, s in enumerate(sites):
        for a in range(d):
            for sg in (1, -1):
                t = list(s)
                t[a] += sg
                j = index.get(tuple(t))
                if j is not None:
                    A[i, j] -= 1.0 / (2 * d)
    return A


def test_discrete_examples():
    one = discrete_principal_eigenpair(np.zeros((1, 3), dtype=int))
    assert one.lambda1 == pytest.approx(1.0, abs=1e-14)
    two = discrete_principal_eigenpair(np.array([[0, 0, 0], [1, 0, 0]]))
    assert two.lambda1 == pytest.approx(5 / 6, abs=1e-14)
    with pytest.raises(ValueError):
        discrete_principal_eigenpair(np.array([[0, 0, 0], [2, 0, 0]]))


@given(st.integers(0, 10 ** 6), st.integers(1, 3))
def test_discrete_eigenpair_against_dense(seed, d):
    rng = np.random.default_rng(seed)
    sites = [np.zeros(d, dtype=int)]
    e = np.vstack([np.eye(d, dtype=int), -np.eye(d, dtype=int)])
    for _ in range(int(rng.integers(0, 25))):
        sites.append(sites[int(rng.integers(len(sites)))] + e[int(rng.integers(2 * d))])
    sites = np.unique(np.array(sites), axis=0)
    pair = discrete_principal_eigenpair(sites)
    A = brute_laplacian(pair.sites)
    assert np.allclose(discrete_laplacian(pair.sites).toarray(), A)
    w, V = np.linalg.eigh(A)
    assert pair.lambda1 == pytest.approx(w[0], abs=1e-10)
    assert 0 < pair.lambda1 <= 1 + 1e-14
    assert np.all(pair.vector > 0)
    assert np.linalg.norm(A @ pair.vector - pair.lambda1 * pair.vector) <= 1e-8
    if len(sites) > 1:
        lo, hi = discrete_spectral_gap(sites)
        assert lo == pytest.approx(w[0], abs=1e-9) and hi == pytest.approx(w[1], abs=1e-9)


def test_modified_eigenfunction_examples():
    s = ScaleRelation(3, 20)
    kappa = 0.05
    m = modified_eigenfunction(s, kappa)
    a = 20 ** -kappa
    prof = eigenfunction_profile(3)
    assert m.radial(np.array([0.0]))[0] == pytest.approx(prof.radial(np.array([0.0]))[0] + a)
    far = m.radial(np.array([prof.rho + 1, prof.rho + 3]))
    assert np.allclose(far, a / 2)
    h = 1e-6
    der = (m.radial(np.array([prof.rho + 1 + h])) - m.radial(np.array([prof.rho + 1 - h]))) / (2 * h)
    assert abs(der[0]) <= 1e-3 * a
    box = box_sites([0, 0, 0], int(4 * prof.rho * 20))
    assert m.on_lattice(box).min() == pytest.approx(a / 2)
    r = np.linspace(0, prof.rho + 2, 4001)
    v = m.radial(r)
    assert np.all(np.diff(v) <= 1e-14)
    # C^1 at the boundary
    d_in = m.radial_derivative(np.array([prof.rho - 1e-9]))[0]
    d_out = m.radial_derivative(np.array([prof.rho + 1e-9]))[0]
    assert d_in == pytest.approx(d_out, rel=1e-6)
    with pytest.raises(ValueError):
        modified_eigenfunction(s, 1.5)


def test_lattice_ball_small_radius_ratio():
    R = 8
    pair = discrete_principal_eigenpair(ball_sites(np.zeros(3), R))
    ratio = 2 * 3 * R ** 2 * pair.lambda1 / math.pi ** 2
    assert 0.8 < ratio < 1.2
