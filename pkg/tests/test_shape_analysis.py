import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact.lattice_core import (
    CellProfile, ScaleRelation, SiteField, build_walk, local_time, walk_from_positions,
)
from artifact.sampler import tilted_kernel
from artifact.shape_analysis import (
    MesoBall, analyse_sample, bridge_hit_probability, bridge_marginal, confined_walk,
    detect_bridges, dyadic_annuli, fill_test, gloc_distance, gloc_test, heat_kernel_sandwich,
    killed_transition_matrix, radial_derivative_constant, range_exponent_fit, shape_chain,
    stay_end_probability, stay_probability, time_in_core,
)
from artifact.spectral import continuum_constants, phi_squared_on_lattice

# ||1_cube - phi^2||_1 for the unit cube centred at the ball centre, d = 3; fine midpoint
# quadrature of the closed-form d = 3 eigenfunction on grids aligned with the cube faces
CUBE_L1 = 0.73493


def cube_profile(n, shift=0):
    k = np.arange(-n // 2, n // 2)
    cells = np.stack(np.meshgrid(k, k, k, indexing="ij"), -1).reshape(-1, 3) + shift
    return CellProfile(1.0 / n, cells, np.ones(len(cells)))


def test_gloc_sampled_eigenfunction():
    dists = []
    for n in (4, 8, 16):
        ell = phi_squared_on_lattice(np.zeros(3), ScaleRelation(3, n))
        d, ok, _ = gloc_test(ell, center=np.zeros(3), n=n)
        assert ok
        dists.append(d * n)
    # distance <= C / n with a stable C
    assert max(dists) < 1.5 and max(dists) / min(dists) < 1.1
    ell = phi_squared_on_lattice(np.zeros(3), ScaleRelation(3, 2))
    assert gloc_test(ell, n=2)[1]


def test_gloc_uniform_cube():
    d = gloc_distance(cube_profile(16), np.zeros(3), sub=4)
    assert d == pytest.approx(CUBE_L1, abs=2e-3)
    assert gloc_distance(cube_profile(8), np.zeros(3)) >= 0.7
    # fails once n^{-1/800} drops below the fixed distance
    n_fail = math.ceil(0.72 ** -800)
    assert not gloc_test(cube_profile(8), center=np.zeros(3), n=n_fail)[1]


def test_gloc_moved_mass():
    n = 8
    ell = phi_squared_on_lattice(np.zeros(3), ScaleRelation(3, n))
    vals = ell.values * 0.9
    far = np.array([[3 * n, 0, 0]])
    moved = CellProfile(ell.spacing, np.vstack([ell.cells, far]),
                        np.concatenate([vals, [0.1 * n ** 3]]))
    assert moved.integral() == pytest.approx(1.0)
    assert gloc_test(moved, n=n)[0] >= 0.2 - 1e-3
    with pytest.raises(ValueError):
        gloc_test(CellProfile(0.5, np.zeros((1, 3), dtype=int), np.ones(1)))


@given(st.integers(0, 10 ** 6))
@settings(max_examples=15)
def test_gloc_translation_covariance(seed):
    rng = np.random.default_rng(seed)
    n = 6
    ell = phi_squared_on_lattice(np.zeros(3), ScaleRelation(3, n))
    shift = rng.integers(-5, 6, 3)
    moved = CellProfile(ell.spacing, ell.cells + shift, ell.values)
    x = rng.uniform(-0.2, 0.2, 3)
    assert gloc_distance(moved, x + shift / n) == pytest.approx(gloc_distance(ell, x), abs=1e-9)
    assert 0 <= gloc_distance(ell, x) <= 2


def test_fill_examples():
    n = 4
    rho = continuum_constants(3).rho_d
    r = rho * n
    c = np.array([0.5, 0.5, 0.5]) / n  # lattice centre 0
    # boustrophedon scan of a box containing the ball
    R = int(math.ceil(r)) + 1
    side = list(range(-R, R + 1))
    plane = [(y, z) for j, y in enumerate(side) for z in (side if j % 2 == 0 else side[::-1])]
    pts = [(x, y, z) for i, x in enumerate(side) for y, z in (plane if i % 2 == 0 else plane[::-1])]
    # the final position carries no local time; step once more outside the ball
    pts.append((pts[-1][0] + 1, pts[-1][1], pts[-1][2]))
    walk = walk_from_positions(np.array(pts))
    assert fill_test(walk, c, n=n, radius=r) == 1.0
    line = build_walk([0, 0, 0], np.zeros(200, dtype=int))
    grid = np.stack(np.meshgrid(*[np.arange(-R, R + 1)] * 3, indexing="ij"), -1).reshape(-1, 3)
    n_ball = int(np.sum(np.sum(grid ** 2, axis=1) <= r * r))
    assert fill_test(line, c, n=n, radius=r) == pytest.approx((math.floor(r) + 1) / n_ball, rel=1e-12)
    with pytest.raises(ValueError):
        fill_test(line, c, n=n)


def test_time_in_core_examples():
    n, kappa = 6, 0.05
    ball = MesoBall.from_scale([0, 0, 0], n, kappa)
    L = SiteField(ball.core, np.full(len(ball.core), float(n * n)))
    count, thr, ok = time_in_core(L, ball)
    assert count == n * n * len(ball.core) and ok
    s = continuum_constants(3)
    delta = 6.0 * s.rho_d ** 5 * s.omega_d / 2 ** 6
    assert thr == pytest.approx(delta * ball.m ** 3 * n ** (2 - 2 * kappa), rel=1e-9)
    assert not time_in_core(SiteField.zeros(3), ball)[2]


def test_radial_derivative_constant():
    assert radial_derivative_constant(3) == pytest.approx(6.0, abs=1e-6)


def test_time_in_core_on_passing_samples():
    n, kappa = 6, 0.05
    for rec_walk in _chain_walks(n, 4, seed=3):
        walk, rec = rec_walk
        if not rec["gloc_pass"]:
            continue
        z = np.round(n * np.asarray(rec["center"]) - 0.5).astype(np.int64)
        ball = MesoBall.from_scale(z, n, kappa)
        assert time_in_core(local_time(walk), ball)[2]


def _chain_walks(n, k, seed):
    from artifact.sampler import ChainConfig, MetropolisChain
    N = n ** 5
    rho = continuum_constants(3).rho_d
    ch = MetropolisChain(ChainConfig(3, N, seed=seed), initial=confined_walk(3, N, rho * n, seed))
    ch.run_moves(150 * N)
    for _ in range(k):
        ch.run_moves(5 * N)
        w = ch.walk()
        yield w, analyse_sample(w, n)


def test_bridges_confined_and_escaping():
    m = 6
    ball = MesoBall([0, 0, 0], m)
    core = {tuple(p) for p in ball.core}
    steps = confined_walk(3, 3 * m * m, m / 2.0, seed=1)
    walk = build_walk([0, 0, 0], steps)
    assert all(tuple(p) in core for p in walk.positions)
    assert len(detect_bridges(walk, ball)) == 3
    out = build_walk([0, 0, 0], np.zeros(3 * m * m, dtype=int))
    assert detect_bridges(out, ball) == []


def _check_bridges(walk, ball, recs, length):
    B = {tuple(p) for p in ball.B}
    core = {tuple(p) for p in ball.core}
    last = -1
    for r in recs:
        assert r.t2 - r.t1 == length and r.t1 >= last
        seg = walk.positions[r.t1:r.t2 + 1]
        assert all(tuple(p) in B for p in seg)
        assert tuple(seg[0]) in core and tuple(seg[-1]) in core
        assert r.a == tuple(seg[0]) and r.b == tuple(seg[-1])
        last = r.t2


@given(st.integers(0, 10 ** 6))
@settings(max_examples=20)
def test_bridge_records_valid(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(4, 8))
    ball = MesoBall([0, 0, 0], m)
    walk = build_walk([0, 0, 0], confined_walk(3, 20 * m * m, m + 1.5, seed))
    _check_bridges(walk, ball, detect_bridges(walk, ball), m * m)


def test_bridge_counts_on_kernel_paths():
    m = 16
    ball = MesoBall([0, 0, 0], m)
    kern = tilted_kernel(ball.B)
    paths = kern.sample_paths([0, 0, 0], 20 * m * m, 40, seed=5)
    counts = []
    for row in paths:
        walk = walk_from_positions(kern.sites[row])
        recs = detect_bridges(walk, ball)
        _check_bridges(walk, ball, recs, m * m)
        counts.append(len(recs))
    assert 0.25 * 20 <= np.mean(counts) <= 20


def test_stay_probability_examples():
    m = 16
    ball = MesoBall([0, 0, 0], m)
    p_c, se_c = stay_probability([0, 0, 0], m * m, ball, 20000, seed=1)
    p_1, se_1 = stay_probability([m - 1, 0, 0], m * m, ball, 20000, seed=2)
    assert 0.05 <= p_c <= 1 and p_c > p_1
    assert p_1 <= 3.0 / m
    with pytest.raises(ValueError):
        stay_probability([0, 0, 0], 10, ball, 10, seed=0)
    assert stay_probability([50, 0, 0], m * m, ball, 10, seed=0) == (0.0, 0.0)


def test_stay_probability_monotone_in_r():
    m = 16
    ball = MesoBall([0, 0, 0], m)
    est = [stay_probability([m - r, 0, 0], m * m, ball, 20000, seed=r) for r in (1, 2, 4, 8, 16)]
    for (p0, s0), (p1, s1) in zip(est, est[1:]):
        assert p1 >= p0 - 3 * math.hypot(s0, s1)


def test_stay_probability_against_exact():
    m = 8
    ball = MesoBall([0, 0, 0], m)
    P = killed_transition_matrix(ball)
    i = int(ball.index(np.array([[4, 0, 0]]))[0])
    v = np.zeros(P.shape[0])
    v[i] = 1
    for _ in range(m * m):
        v = P.T @ v
    p, se = stay_probability([4, 0, 0], m * m, ball, 40000, seed=4)
    assert abs(p - v.sum()) <= 3 * se


def test_time_reversal_symmetry():
    m = 8
    ball = MesoBall([0, 0, 0], m)
    a, b, t = [1, 2, 0], [-2, 0, 1], 40
    pab, sab = stay_end_probability(a, b, t, ball, 200000, seed=1)
    pba, sba = stay_end_probability(b, a, t, ball, 200000, seed=2)
    assert abs(pab - pba) <= 3 * math.hypot(sab, sba)
    assert pab > 0


def test_bridge_marginal_exact():
    m = 6
    ball = MesoBall([0, 0, 0], m)
    mu = bridge_marginal(ball, [0, 0, 0], [1, 1, 0], 36, 12)
    assert mu.sum() == pytest.approx(1.0)
    # marginal at time s equals the reversed bridge's marginal at tau - s
    nu = bridge_marginal(ball, [1, 1, 0], [0, 0, 0], 36, 24)
    assert np.allclose(mu, nu, atol=1e-12)
    with pytest.raises(ValueError):
        bridge_marginal(ball, [0, 0, 0], [1, 0, 0], 36, 12)


def test_heat_kernel_sandwich():
    m = 16
    ball = MesoBall([0, 0, 0], m)
    rng = np.random.default_rng(8)
    core = ball.core
    shell = ball.B[np.abs(ball.boundary_distance(ball.B) - m / 2) < 0.5]
    tau = m * m
    for _ in range(5):
        a = core[rng.integers(len(core))]
        even = core[np.sum(core - a, axis=1) % 2 == 0]
        b = even[rng.integers(len(even))]
        x = shell[rng.integers(len(shell))]
        res = heat_kernel_sandwich(ball, a, b, x, tau, tau // 3)
        assert 0.1 <= res["ratio"] <= 10


def test_bridge_hit_examples():
    m = 8
    ball = MesoBall([0, 0, 0], m)
    p, se, k = bridge_hit_probability(ball.core, ball, 2000, seed=1)
    assert p == 1.0 and k > 0
    assert bridge_hit_probability(np.zeros((0, 3), dtype=int), ball, 10, seed=1)[0] == 0.0
    with pytest.raises(ValueError):
        bridge_hit_probability([[20, 0, 0]], ball, 10, seed=1)


def test_bridge_hit_geometry_uniformity():
    m, k = 16, 32
    ball = MesoBall([0, 0, 0], m)
    rng = np.random.default_rng(2)
    labels, _, _ = dyadic_annuli(ball, ball.B)
    annulus = ball.B[labels == 2]
    spread = annulus[rng.choice(len(annulus), k, replace=False)]
    clump = ball.B[np.argsort(np.sum((ball.B - [5, 0, 0]) ** 2, axis=1), kind="stable")[:k]]
    p_spread = bridge_hit_probability(spread, ball, 4000, seed=3)[0]
    p_clump = bridge_hit_probability(clump, ball, 4000, seed=4)[0]
    assert p_spread >= p_clump / 3 and p_clump >= p_clump / 3 > 0


def test_dyadic_annuli_examples():
    m = 16
    ball = MesoBall([0, 0, 0], m)
    at5 = ball.B[np.abs(ball.boundary_distance(ball.B) - 5) < 1e-9]
    labels, j, count = dyadic_annuli(ball, at5)
    assert j == 2 and count == len(at5)
    labels, j, count = dyadic_annuli(ball, ball.B)
    assert count >= len(ball.B) / math.ceil(math.log2(m))
    assert np.bincount(labels).sum() == len(ball.B)
    with pytest.raises(ValueError):
        dyadic_annuli(ball, [[30, 0, 0]])


@given(st.integers(0, 10 ** 6))
def test_dyadic_pigeonhole(seed):
    ball = MesoBall([0, 0, 0], 64) if not hasattr(test_dyadic_pigeonhole, "b") else test_dyadic_pigeonhole.b
    test_dyadic_pigeonhole.b = ball
    rng = np.random.default_rng(seed)
    pts = ball.B[rng.choice(len(ball.B), 100, replace=False)]
    _, _, count = dyadic_annuli(ball, pts)
    assert count >= 100 / math.ceil(math.log2(64))


def test_range_exponent_fit_examples():
    ns = [4, 5, 6]
    assert range_exponent_fit({n: 2.5 * (n ** 5) ** 0.6 for n in ns}) == pytest.approx(0.6, abs=1e-6)
    assert range_exponent_fit({n: 0.7 * n ** 5 for n in ns}) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        range_exponent_fit({4: 1.0, 5: 2.0})


def test_mesoball_validation():
    with pytest.raises(ValueError):
        MesoBall([0, 0, 0], 3)
    b = MesoBall([1, 2, 3], 5)
    assert np.all(b.boundary_distance(b.B) >= 0)
    assert set(map(tuple, b.core)) <= set(map(tuple, b.B))


def test_shape_chain_smoke():
    recs = list(shape_chain(3, 3, seed=0, burn_in=50))
    assert [r["sample"] for r in recs] == [0, 1, 2]
    for r in recs:
        assert 0 <= r["fill"] <= 1 and 0 <= r["gloc"] <= 2 and r["range"] >= 1
