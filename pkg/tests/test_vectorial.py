from itertools import combinations

import numpy as np
import pytest

from cmflow import gauge as ga
from cmflow import reduced as rd
from cmflow import vectorial as vc

from conftest import random_L, spaced_positions

TABLE = {3: {1}, 4: {1, 3}, 5: {1, 3, 4}, 6: {1, 3, 4, 5}, 7: {1, 5, 6}}


def test_decompose_ordinary_cm():
    eps = vc.decompose(ga.ordinary_cm_matrix(4, 1.0))
    assert eps.rank == 1
    v = eps.vectors[:, 0]
    for k in range(4):
        assert abs(abs(np.vdot(v, eps.vectors[:, k])) - np.linalg.norm(v) ** 2) <= 1e-12
    assert np.allclose(eps.L, ga.ordinary_cm_matrix(4, 1.0))


@pytest.mark.parametrize("g", [1.0, -1.0])
def test_n3_characteristic_polynomial(g):
    L = ga.ordinary_cm_matrix(3, g)
    w = np.linalg.eigvalsh(-1j * L)
    # (lambda + s)^2 (lambda - 2 s) with s = sign(g)
    s = np.sign(g)
    assert np.allclose(np.sort(w), np.sort([-s, -s, 2 * s]), atol=1e-10)
    for lam in w:
        assert abs(lam ** 3 - 3 * lam - 2 * s) <= 1e-10
    assert vc.decompose(L).rank == 1


def test_decompose_random_real():
    rng = np.random.default_rng(0)
    for _ in range(10):
        L = random_L(4, rng, "O")
        eps = vc.decompose(L)
        assert eps.rank in (1, 3)
        assert np.max(np.abs(eps.L - L)) <= 1e-8
        nrm = np.linalg.norm(eps.vectors, axis=0)
        assert np.allclose(nrm, nrm[0], atol=1e-9)
        # rank from a direct eigen-count of the shifted matrix
        w = np.linalg.eigvalsh(-1j * L)
        mult = max(np.sum(np.abs(w - w[0]) < 1e-8), np.sum(np.abs(w - w[-1]) < 1e-8))
        assert eps.rank == 4 - mult


def test_decompose_preserves_gauge_class():
    rng = np.random.default_rng(1)
    for _ in range(10):
        L = random_L(5, rng)
        eps = vc.decompose(L)
        assert ga.is_gauge_equivalent(L, eps.L)


def test_rank_of_examples():
    assert vc.rank_of(ga.ordinary_cm_matrix(6)) == 1
    assert vc.rank_of(random_L(4, np.random.default_rng(2))) == 3
    for code in range(2):
        assert vc.rank_of(vc.SignPattern(3, code).matrix()) == 1


@pytest.mark.parametrize("n", [3, 4, 5, 6, 7])
def test_possible_ranks_small(n):
    assert set(vc.possible_ranks(n)) == TABLE[n]


def test_rank_g_independent():
    for n in (5, 6):
        for code in range(0, 1 << ((n - 1) * (n - 2) // 2), 7):
            L = vc.SignPattern(n, code).matrix(1.0)
            r = [vc.rank_of(g * L) for g in (0.3, 0.5, 0.7)]
            assert r[0] == r[1] == r[2]


def test_rank_census_sampled_path():
    c = vc.rank_census(6, n_samples=2000, exhaustive_max=5)
    assert c.method == "sampled" and c.n_patterns == 2000
    assert 1 in c.ranks and c.ranks <= TABLE[6]


def test_build_even_vectors_explicit():
    g = 0.4
    eps = vc.build_even_vectors(2, g, vc.SignPattern(2, 0))
    V = eps.vectors.real
    assert np.allclose(V[:, 0], [1, 0])
    assert np.allclose(V[:, 1], [g, np.sqrt(1 - g ** 2)])
    # n_12 = 1 is removed by the first-row gauge fixing (flip e_2)
    assert vc.SignPattern.from_bits({(0, 1): 1}, 2).code == 0
    V = vc.build_even_vectors(3, g).vectors.real
    assert np.allclose(V[:2, 2], [g, g * (1 - g) / np.sqrt(1 - g ** 2)])


def test_build_even_vectors_gram():
    rng = np.random.default_rng(3)
    for _ in range(10):
        pat = vc.SignPattern(5, int(rng.integers(0, 1 << 6)))
        g = 0.2
        eps = vc.build_even_vectors(5, g, pat)
        assert np.max(np.abs(eps.gram - (np.eye(5) + g * pat.signs))) <= 1e-10


def test_build_even_vectors_infeasible():
    # three vectors with pairwise cos -0.9 cannot exist
    pat = vc.SignPattern.from_bits({(0, 1): 1, (0, 2): 1, (1, 2): 1}, 3)
    with pytest.raises(vc.InfeasiblePattern):
        vc.build_even_vectors(3, 0.9, pat)


def icosahedron_axes():
    phi = (1 + np.sqrt(5)) / 2
    v = np.array([[0, 1, phi], [0, 1, -phi], [1, phi, 0], [1, -phi, 0], [phi, 0, 1], [-phi, 0, 1]])
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_icosahedral_packing():
    A = icosahedron_axes()
    g = 1 / np.sqrt(5)
    cos = np.abs(A @ A.T)[np.triu_indices(6, 1)]
    assert np.allclose(cos, g)
    found = []
    for code in range(1 << 10):
        try:
            eps = vc.build_even_vectors(6, g, vc.SignPattern(6, code))
        except vc.InfeasiblePattern:
            continue
        if eps.rank == 3:
            found.append(eps)
    assert found
    G = found[0].gram
    assert np.allclose(np.abs(G[np.triu_indices(6, 1)]), g)
    # same Gram magnitudes as the icosahedron axes
    assert np.allclose(np.sort(np.abs(G).ravel()), np.sort(np.abs(A @ A.T).ravel()))


def test_first_derivative_stationary():
    rng = np.random.default_rng(4)
    e = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    r1 = vc.EpsilonSet(np.outer(e, np.exp(1j * rng.uniform(0, 6, 4))), 1, 1.0)
    assert vc.first_derivative_stationary(r1)
    real = vc.EpsilonSet(rng.standard_normal((3, 4)).astype(complex), 3, 1.0)
    assert vc.first_derivative_stationary(real)
    V = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    V /= np.linalg.norm(V, axis=0)
    generic = vc.EpsilonSet(V, 3, 1.0)
    assert not vc.first_derivative_stationary(generic)
    L = generic.L
    s = rd.ReducedState(spaced_positions(3, rng), np.zeros(3), L)
    assert np.max(np.abs(rd.dLij_abs_rate(s))) > 1e-6


def test_first_derivative_iff_rate_vanishes():
    rng = np.random.default_rng(5)
    sets = []
    for kind in range(20):
        if kind % 2:
            V = rng.standard_normal((3, 4)).astype(complex)
        else:
            V = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        # gauge-rotate so "real" sets are only gauge-equivalent to real
        V = V * np.exp(1j * rng.uniform(0, 6, 4))
        V /= np.linalg.norm(V, axis=0)
        sets.append(vc.EpsilonSet(V, 3, 1.0))
    for eps in sets:
        stat = vc.first_derivative_stationary(eps)
        rate = max(np.max(np.abs(rd.dLij_abs_rate(
            rd.ReducedState(spaced_positions(4, rng), np.zeros(4), eps.L)))) for _ in range(20))
        assert stat == (rate <= 1e-10)


def test_second_derivative_examples():
    assert vc.second_derivative_stationary(vc.SignPattern(5, 0))
    pat = vc.SignPattern.from_bits({(2, 3): 1}, 4)
    assert not vc.second_derivative_stationary(pat)
    assert vc.second_derivative_stationary(vc.SignPattern(3, 1))


def test_second_derivative_n4_exhaustive():
    passing = [c for c in range(8) if vc.second_derivative_stationary(vc.SignPattern(4, c))]
    # codes 0 and 7 are the gauge classes of L0 and -L0
    assert passing == [0, 7]
    for c in range(8):
        L = vc.SignPattern(4, c).matrix()
        assert (c in passing) == vc.is_ordinary_cm(L)
    assert ga.is_gauge_equivalent(vc.SignPattern(4, 7).matrix(), -ga.ordinary_cm_matrix(4))


def test_from_bits_gauge_fixes():
    B = np.zeros((4, 4), dtype=int)
    B[0, 2] = B[2, 0] = 1
    pat = vc.SignPattern.from_bits(B)
    assert np.all(pat.bits[0] == 0)
    assert ga.is_gauge_equivalent(pat.matrix(), ga.sign_pattern_matrix(B, 4))


def test_fe_to_L():
    eps = vc.decompose(ga.ordinary_cm_matrix(4))
    E = eps.vectors
    r = vc.fe_to_L(E, eps.sign * E.conj().T)
    assert r and np.allclose(r.L, ga.ordinary_cm_matrix(4))
    r = vc.fe_to_L(np.diag(np.sqrt([1.0, 1.0, 2.0])), np.diag(np.sqrt([1.0, 1.0, 2.0])))
    assert not r and np.isclose(r.spread, 1.0)


def test_fe_flow_matches_L_flow():
    rng = np.random.default_rng(6)
    L = random_L(4, rng)
    x, p = spaced_positions(4, rng), rng.standard_normal(4)
    s0 = vc.vectorial_state_from_L(x, p, L)
    assert np.allclose(vc.fe_to_L(s0.E, s0.F).L, L)
    a = rd.integrate(None, s0, t_eval=[0, 0.5], tol=1e-11)
    b = rd.integrate(None, rd.ReducedState(x, p, L), t_eval=[0, 0.5], tol=1e-11)
    La = vc.fe_to_L(a.states[-1].E, a.states[-1].F).L
    ga_, gb = ga.triple_sums(La), ga.triple_sums(b.states[-1].L)
    assert np.max(np.abs(ga_.magnitudes - gb.magnitudes)) <= 1e-6
    for k in ga_.triples:
        assert ga.angle_distance(ga_.triples[k], gb.triples[k]) <= 1e-6


def test_is_ordinary_cm():
    L0 = ga.ordinary_cm_matrix(5, 0.7)
    assert vc.is_ordinary_cm(L0)
    assert vc.is_ordinary_cm(ga.random_gauge(L0, 3)[0])
    rng = np.random.default_rng(7)
    L = random_L(4, rng)
    assert not vc.is_ordinary_cm(L)
    tr = rd.integrate(None, rd.ReducedState(spaced_positions(4, rng), np.zeros(4), L), t_end=1.0)
    mags = np.array([np.abs(s.L) for s in tr.states])
    assert np.max(np.abs(mags - mags[0])) > 1e-3


def test_rank_one_sets_all_parallel():
    for n in (3, 4, 5):
        eps = vc.decompose(ga.ordinary_cm_matrix(n))
        V = eps.vectors
        for i, j in combinations(range(n), 2):
            assert abs(abs(np.vdot(V[:, i], V[:, j])) - eps.norm ** 2) <= 1e-9
