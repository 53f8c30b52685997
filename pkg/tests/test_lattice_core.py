import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.lattice_core import (
    CellProfile, LatticeDim, ScaleRelation, SiteField, all_step_sequences, ball_sites,
    box_sites, build_walk, dirichlet_energy, hyperoctahedral_group, is_connected, local_time,
    lp_norm, read_snapshot, rescaled_profile, unit_vectors, walk_from_positions,
    write_snapshot,
)


def brute_energy(values: dict, d, domain=None):
    """Ordered-pair sum over every site within distance one of the support."""
    sites = set(values)
    for s in list(values):
        for i in range(d):
            for sgn in (1, -1):
                t = list(s)
                t[i] += sgn
                sites.add(tuple(t))
    if domain is not None:
        dom = {tuple(x) for x in domain}
        sites = dom
    total = 0.0
    for y in sites:
        for i in range(d):
            for sgn in (1, -1):
                z = list(y)
                z[i] += sgn
                z = tuple(z)
                if domain is not None and z not in sites:
                    continue
                total += (values.get(y, 0.0) - values.get(z, 0.0)) ** 2
    return total / (2 * d)


def test_two_star():
    assert LatticeDim(3).two_star == 6.0
    assert LatticeDim(4).two_star == 4.0
    with pytest.raises(ValueError):
        LatticeDim(2).two_star
    with pytest.raises(ValueError):
        LatticeDim(0)


def test_scale_relation():
    s = ScaleRelation(3, 6)
    assert s.N == 7776
    assert ScaleRelation.from_steps(3, 7776) == s
    with pytest.raises(ValueError):
        ScaleRelation.from_steps(3, 7777)


def test_walk_examples():
    w = build_walk([0, 0, 0], [0, 1])
    assert w.positions.tolist() == [[0, 0, 0], [1, 0, 0], [0, 0, 0]]
    assert w.range_size == 2
    assert build_walk([0, 0, 0], [0, 0, 0]).range_size == 4
    assert build_walk([0, 0, 0], []).range_size == 1
    with pytest.raises(ValueError):
        build_walk([0, 0, 0], [6])


def test_local_time_examples():
    L = local_time(build_walk([0, 0, 0], [0, 0, 0]))
    assert L([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]).tolist() == [1, 1, 1, 0]
    L = local_time(build_walk([0, 0, 0], [0, 1]))
    assert L([[0, 0, 0], [1, 0, 0]]).tolist() == [1, 1]


def test_energy_examples():
    assert dirichlet_energy(SiteField.indicator([[0, 0, 0]])) == pytest.approx(2.0, abs=1e-15)
    assert dirichlet_energy(SiteField.indicator([[0]])) == pytest.approx(2.0, abs=1e-15)
    two = SiteField.indicator([[0, 0, 0], [1, 0, 0]])
    assert dirichlet_energy(two) == pytest.approx(10 / 3, abs=1e-14)
    box = box_sites([0, 0, 0], 3)
    assert dirichlet_energy(SiteField(box, np.full(len(box), 2.5)), box) == 0.0


def test_norm_examples():
    assert lp_norm(SiteField([[0, 0]], [3.0]), 2) == 3.0
    assert lp_norm(SiteField.indicator([[0, 0], [1, 0], [5, 5], [2, 2]]), 2) == pytest.approx(2.0)
    w = build_walk([0, 0, 0], np.random.default_rng(1).integers(0, 6, 57))
    assert lp_norm(local_time(w), 1) == pytest.approx(57)


def test_rescaled_profile_examples():
    s = ScaleRelation(3, 2)
    p = rescaled_profile(SiteField([[0, 0, 0]], [s.N]), s)
    assert p.values.tolist() == [8.0]
    box = box_sites([0, 0, 0], 2)
    p = rescaled_profile(SiteField(box, np.full(len(box), 4.0)), s)
    assert np.allclose(p.values, 1.0) and p.integral() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        rescaled_profile(SiteField([[0, 0, 0]], [5.0]), s)


def test_snapshot_roundtrip(tmp_path):
    w = build_walk([1, -2, 3], np.random.default_rng(0).integers(0, 6, 40))
    write_snapshot(tmp_path / "w.txt", w)
    v = read_snapshot(tmp_path / "w.txt")
    assert np.array_equal(v.positions, w.positions)


def test_misc_helpers():
    assert len(hyperoctahedral_group(3)) == 48
    assert all_step_sequences(2, 3).shape == (64, 3)
    assert is_connected(box_sites([0, 0], 3))
    assert not is_connected(np.array([[0, 0], [2, 0]]))
    assert len(ball_sites([0, 0, 0], 1)) == 7
    assert len(box_sites([0, 0], 4)) == 16


walks = st.tuples(st.integers(1, 3), st.lists(st.integers(0, 5), max_size=60))


@given(walks, st.data())
def test_walk_invariants_under_mutation(dw, data):
    d, raw = dw
    steps = [c % (2 * d) for c in raw]
    w = build_walk(np.zeros(d, dtype=int), steps)
    diffs = np.abs(np.diff(w.positions, axis=0)).sum(axis=1)
    assert np.all(diffs == 1)
    assert 1 <= w.range_size <= w.N + 1
    for _ in range(3):
        if w.N == 0:
            break
        k = data.draw(st.integers(0, w.N - 1))
        c = data.draw(st.integers(0, 2 * d - 1))
        w.set_step(k, c)
        assert w.range_size == w.recompute_range()
        assert np.array_equal(w.positions, build_walk(w.start, w.steps, d).positions)
    assert np.array_equal(walk_from_positions(w.positions).steps, w.steps)
    assert local_time(w).total() == w.N


fields = st.tuples(
    st.integers(1, 3),
    st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3),
                       st.floats(0, 5)), max_size=12))


@given(fields)
def test_energy_matches_brute_force(df):
    d, raw = df
    vals = {}
    for x, y, z, v in raw:
        vals[(x, y, z)[:d]] = v
    f = SiteField.from_dict(vals, d)
    assert dirichlet_energy(f) == pytest.approx(brute_energy(vals, d), rel=1e-12, abs=1e-12)
    dom = box_sites(np.zeros(d, dtype=int), 4)
    assert dirichlet_energy(f, dom) == pytest.approx(brute_energy(vals, d, dom), rel=1e-12,
                                                     abs=1e-12)


@given(fields)
def test_sitefield_support_is_positive_set(df):
    d, raw = df
    sites = np.array([r[:d] for r in raw], dtype=np.int64).reshape(-1, d)
    vals = np.array([r[3] for r in raw])
    f = SiteField(sites, vals, d=d)
    assert np.all(f.values > 0)
    assert f(np.full((1, d), 50))[0] == 0.0


def test_sitefield_rejects_negative():
    with pytest.raises(ValueError):
        SiteField([[0]], [-1.0])
    with pytest.raises(ValueError):
        SiteField([[0]], [np.nan])


@given(st.integers(1, 4), st.integers(0, 40), st.integers(0, 10 ** 6))
def test_profile_integrates_to_one(n, steps_seed, seed):
    d = 2
    s = ScaleRelation(d, n)
    w = build_walk([0, 0], np.random.default_rng(seed).integers(0, 4, s.N))
    prof = rescaled_profile(local_time(w), s)
    assert prof.integral() == pytest.approx(1.0, abs=1e-12)
    assert isinstance(prof, CellProfile)
