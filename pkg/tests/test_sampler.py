import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from artifact.lattice_core import ball_sites, build_walk, range_size, positions_from_steps
from artifact.sampler import (
    ChainConfig, MetropolisChain, ais_partition, exact_partition, exact_transition_matrix,
    importance_weight, metropolis_step, survival_identity, tilted_kernel,
)
from artifact.spectral import discrete_principal_eigenpair


def brute_partition(d, N, beta=1.0):
    total = 0.0
    for steps in itertools.product(range(2 * d), repeat=N):
        pos = positions_from_steps(np.zeros(d, dtype=np.int64), np.array(steps, dtype=np.int64), d)
        total += math.exp(-beta * len({tuple(p) for p in pos}))
    return total / (2 * d) ** N


def test_exact_partition_examples():
    assert exact_partition(3, 0) == pytest.approx(math.exp(-1), abs=1e-15)
    assert exact_partition(3, 1) == pytest.approx(math.exp(-2), abs=1e-12)
    z2 = math.exp(-2) / 6 + 5 * math.exp(-3) / 6
    assert exact_partition(3, 2) == pytest.approx(z2, abs=1e-12)
    assert z2 == pytest.approx(0.064045, abs=1e-6)
    with pytest.raises(ValueError):
        exact_partition(3, 11)


@pytest.mark.parametrize("d,N", [(1, 7), (2, 5), (3, 4), (4, 3)])
def test_exact_partition_brute(d, N):
    for beta in (0.3, 1.0):
        assert exact_partition(d, N, beta) == pytest.approx(brute_partition(d, N, beta), rel=1e-12)


@pytest.mark.parametrize("d,N", [(1, 6), (2, 4), (2, 5), (3, 3)])
def test_exact_kernel_detailed_balance(d, N):
    P, sizes = exact_transition_matrix(d, N)
    assert np.all(P >= -1e-15)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
    pi = np.exp(-sizes.astype(float))
    pi /= pi.sum()
    flow = pi[:, None] * P
    assert np.max(np.abs(flow - flow.T)) < 1e-12
    assert np.max(np.abs(pi @ P - pi)) < 1e-10


def test_exact_kernel_stationary_eigenvector():
    P, sizes = exact_transition_matrix(2, 4)
    w, v = np.linalg.eig(P.T)
    vec = np.real(v[:, np.argmin(np.abs(w - 1))])
    vec /= vec.sum()
    target = np.exp(-sizes.astype(float)) / (exact_partition(2, 4) * 4 ** 4)
    assert np.max(np.abs(vec - target)) < 1e-10
    # the chain is irreducible: the eigenvalue 1 is simple
    assert np.sum(np.abs(w - 1) < 1e-9) == 1


def test_metropolis_step_examples():
    rng = np.random.default_rng(0)
    w = build_walk([0, 0], [0, 1, 0, 1])
    cfg = ChainConfig(2, 4, moves=(1.0, 0.0, 0.0))
    for _ in range(200):
        new = metropolis_step(w, cfg, rng)
        assert new.range_size == range_size(new.positions)
        assert w.steps.tolist() == [0, 1, 0, 1]
    # a range-preserving proposal is always accepted: a swap of equal steps is the identity
    same = build_walk([0, 0], [0, 0, 0, 0])
    assert metropolis_step(same, ChainConfig(2, 4, moves=(0, 0, 0, 1)), rng).steps.tolist() == [0] * 4


def test_reference_step_distribution():
    d, N = 2, 3
    cfg = ChainConfig(d, N, moves=(0.4, 0.2, 0.2, 0.2))
    rng = np.random.default_rng(3)
    w = build_walk([0, 0], [0, 0, 0])
    counts = np.zeros(N + 2)
    for i in range(40000):
        w = metropolis_step(w, cfg, rng)
        if i % 4 == 0:
            counts[w.range_size] += 1
    P, sizes = exact_transition_matrix(d, N, moves=cfg.moves)
    pi = np.bincount(sizes, weights=np.exp(-sizes.astype(float)), minlength=N + 2)
    pi /= pi.sum()
    keep = pi > 0
    assert stats.chisquare(counts[keep], pi[keep] * counts.sum()).pvalue > 1e-3


def test_compiled_chain_distribution():
    d, N = 2, 4
    ch = MetropolisChain(ChainConfig(d, N, seed=7))
    ch.run_moves(1000)
    # spacing of 200 moves makes the recorded ranges close to independent
    trace = ch.run_moves(2000000, record_every=200)
    assert ch.verify()
    _, sizes = exact_transition_matrix(d, N)
    pi = np.bincount(sizes, weights=np.exp(-sizes.astype(float)), minlength=N + 2)
    pi /= pi.sum()
    counts = np.bincount(np.asarray(trace, dtype=int), minlength=N + 2)
    keep = pi > 0
    assert stats.chisquare(counts[keep], pi[keep] * counts.sum()).pvalue > 1e-3


@given(st.integers(0, 10 ** 6), st.integers(1, 60), st.floats(0, 1))
@settings(max_examples=20)
def test_compiled_chain_consistent(seed, N, beta):
    ch = MetropolisChain(ChainConfig(3, N, beta=beta, seed=seed))
    ch.run_moves(50 * N)
    assert ch.verify()
    assert ch.R == ch.walk().range_size


def test_seed_determinism():
    cfg = ChainConfig(3, 200, seed=42, sweeps=20)
    a = list(MetropolisChain(cfg).sample())
    b = list(MetropolisChain(ChainConfig(3, 200, seed=42, sweeps=20)).sample())
    assert a == b
    c = list(MetropolisChain(ChainConfig(3, 200, seed=43, sweeps=20)).sample())
    assert a != c


def test_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(3, 10, beta=1.5)
    with pytest.raises(ValueError):
        ChainConfig(3, 10, moves=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        MetropolisChain(ChainConfig(3, 3), initial=[0, 1, 9])


def test_ergodicity_antipodal_starts():
    # extreme starts: a straight rod (|R| = N + 1) and a two-site zigzag (|R| = 2);
    # block means of |R| from the zigzag reach the rod's level after ~3000 sweeps
    N = 3125
    straight = np.zeros(N, dtype=np.int64)
    folded = np.tile([0, 1], N // 2 + 1)[:N]
    traces = []
    for init, seed in ((straight, 1), (folded, 2)):
        ch = MetropolisChain(ChainConfig(3, N, seed=seed), initial=init)
        ch.run_moves(3000 * N)
        trace = []
        for _ in range(100):
            ch.run_moves(5 * N)
            trace.append(ch.R)
        traces.append(trace)
        assert ch.verify()
    assert stats.ks_2samp(traces[0], traces[1]).pvalue > 0.01


def test_ais_examples():
    est, se, lw = ais_partition(3, 6, schedule=[0.0], chains=4)
    assert est == 1.0
    exact = exact_partition(3, 6)
    est, se, _ = ais_partition(3, 6, chains=64, seed=1)
    assert abs(est - exact) <= 3 * se
    half, se_h, _ = ais_partition(3, 6, schedule=np.linspace(0, 0.5, 32), chains=64, seed=2)
    assert half >= est - 3 * se
    assert abs(half - exact_partition(3, 6, 0.5)) <= 3 * se_h
    with pytest.raises(ValueError):
        ais_partition(3, 4, schedule=[0.0, 0.5, 0.4])


def test_tilted_kernel_rows_and_degenerate():
    ball = ball_sites(np.zeros(3), 4.0)
    k = tilted_kernel(ball)
    assert np.allclose(k.row_sums(), 1.0, atol=1e-10)
    assert np.all(k.weights[k.neighbours < 0] == 0)
    single = tilted_kernel(np.zeros((1, 3), dtype=int))
    assert single.degenerate
    with pytest.raises(ValueError):
        single.sample_paths([0, 0, 0], 3, 2, 0)


def test_kernel_paths_stay_and_weights_telescope():
    ball = ball_sites(np.zeros(3), 5.0)
    k = tilted_kernel(ball, discrete_principal_eigenpair(ball))
    paths = k.sample_paths([0, 0, 0], 60, 50, seed=3)
    assert np.all(paths >= 0)
    for row in paths[:10]:
        pts = k.sites[row]
        direct = np.prod([1 / (2 * 3) / k.weights[a, np.flatnonzero(k.neighbours[a] == b)[0]]
                          for a, b in zip(row[:-1], row[1:])])
        w = importance_weight(pts, k)
        closed = (1 - k.lambda1) ** 60 * k.phi[row[0]] / k.phi[row[-1]]
        assert w == pytest.approx(closed, rel=1e-10)
        assert w == pytest.approx(direct, rel=1e-10)
    assert importance_weight(k.sites[:1], k) == 1.0
    with pytest.raises(ValueError):
        importance_weight(np.array([[0, 0, 0], [9, 0, 0]]), k)


def test_survival_identity_radius_8():
    k = tilted_kernel(ball_sites(np.zeros(3), 8.0))
    res = survival_identity(k, [0, 0, 0], 200, 40000, seed=11)
    assert abs(res["direct"] - res["tilted"]) <= 3 * math.hypot(res["direct_se"], res["tilted_se"])
    assert 0 < res["direct"] < 1
