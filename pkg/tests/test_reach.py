import io

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm
from scipy.optimize import minimize

from cmflow import matcore as mc
from cmflow import reach as rc


def rand_o(seed, n, proper=True):
    return mc.random_orthogonal(n, np.random.default_rng(seed), proper=proper)


def rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


# -- l vectors and M(O) ----------------------------------------------------------

def test_lvector_roundtrip():
    rng = np.random.default_rng(0)
    l = rng.standard_normal(6)
    L = rc.L_from_l(l)
    assert np.allclose(L, -L.T) and L[0, 1] == l[0] and L[0, 2] == l[1] and L[2, 3] == l[5]
    v = rc.LVector.from_L(L)
    assert np.allclose(v.l, l) and v.n == 4
    assert np.isclose(v.norm ** 2, -np.trace(L @ L) / 2, rtol=1e-10)
    with pytest.raises(ValueError):
        rc.LVector(np.ones(5))


def test_m_of_o_identity_and_action():
    assert np.allclose(rc.m_of_o(np.eye(5)), np.eye(10))
    O = rand_o(1, 4)
    L = rc.L_from_l(np.arange(1.0, 7.0))
    assert np.allclose(rc.m_of_o(O) @ rc.l_vector(L), rc.l_vector(O @ L @ O.T))
    with pytest.raises(mc.ClassViolation):
        rc.m_of_o(2 * np.eye(3))


def test_n3_explicit_form():
    for seed in range(10):
        O = rand_o(seed, 3)
        assert np.max(np.abs(rc.m3_explicit(O) - rc.m_of_o(O))) <= 1e-14
        assert np.allclose(rc.o_from_m3(rc.m_of_o(O)), O)


def test_homomorphism_n4():
    O1, O2 = rand_o(2, 4), rand_o(3, 4)
    assert np.max(np.abs(rc.m_of_o(O1 @ O2) - rc.m_of_o(O1) @ rc.m_of_o(O2))) <= 1e-10


@pytest.mark.parametrize("n", [3, 4, 5])
def test_homomorphism_property(n):
    rng = np.random.default_rng(n)
    for _ in range(50):
        A = mc.random_orthogonal(n, rng, proper=bool(rng.integers(2)))
        B = mc.random_orthogonal(n, rng, proper=bool(rng.integers(2)))
        assert np.max(np.abs(rc.m_of_o(A @ B) - rc.m_of_o(A) @ rc.m_of_o(B))) <= 1e-10


def test_norm_preservation():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(2, 7))
        O = mc.random_orthogonal(n, rng)
        l = rng.standard_normal(n * (n - 1) // 2)
        assert abs(np.linalg.norm(rc.m_of_o(O) @ l) - np.linalg.norm(l)) <= 1e-10 * (1 + np.linalg.norm(l))


def rotation_between(a, b):
    """Proper rotation of R^3 taking unit a to unit b (Rodrigues)."""
    v = np.cross(a, b)
    c = float(a @ b)
    K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + K + K @ K / (1 + c)


def test_n3_surjectivity():
    rng = np.random.default_rng(5)
    for _ in range(20):
        l = rng.standard_normal(3)
        l2 = rng.standard_normal(3)
        l2 *= np.linalg.norm(l) / np.linalg.norm(l2)
        M = rotation_between(l / np.linalg.norm(l), l2 / np.linalg.norm(l2))
        O = rc.o_from_m3(M)
        assert np.allclose(O @ O.T, np.eye(3)) and np.isclose(np.linalg.det(O), 1)
        assert np.max(np.abs(rc.m_of_o(O) @ l - l2)) <= 1e-10


# -- canonical angles ------------------------------------------------------------

def test_canonical_angles_identity():
    assert rc.canonical_angles(np.eye(6)).count == 0


def test_canonical_angles_n4_blocks():
    t1, t2 = 0.9, 0.35
    O = np.zeros((4, 4))
    O[:2, :2] = rot(t1)
    O[2:, 2:] = rot(t2)
    ca = rc.canonical_angles(rc.m_of_o(O))
    assert np.allclose(list(ca), sorted([t1 - t2, t1 + t2]), atol=1e-10)
    assert np.allclose(rc.rotation_angles(O), sorted([t1, t2]))


def test_canonical_angles_so6():
    O = rand_o(6, 6)
    ca = rc.canonical_angles(O)
    assert ca.count == 3
    assert np.max(np.abs(ca.Z @ ca.Z.T - np.eye(6))) <= 1e-9
    assert np.max(np.abs(ca.Z @ ca.T @ ca.Z.T - O)) <= 1e-9


@pytest.mark.parametrize("n", [4, 5, 6])
def test_template_matches_compound(n):
    O = rand_o(10 + n, n)
    ca = rc.canonical_angles(rc.m_of_o(O))
    tpl = rc.template_angles(rc.rotation_angles(O), n)
    tpl = np.sort(tpl[tpl > 1e-8])
    assert np.allclose(np.sort(ca.angles), tpl, atol=1e-7)


# -- reachability ----------------------------------------------------------------

def test_reachable_n3_always():
    rng = np.random.default_rng(7)
    for _ in range(20):
        l = rng.standard_normal(3)
        l2 = rng.standard_normal(3)
        l2 *= np.linalg.norm(l) / np.linalg.norm(l2)
        r = rc.reachable_orthogonal(l, l2)
        assert r and np.allclose(r.M @ l, l2, atol=1e-9)


def test_reachable_trivial_and_norm():
    l = np.random.default_rng(8).standard_normal(10)
    assert rc.reachable_orthogonal(l, l)
    r = rc.reachable_orthogonal(l, 1.1 * l)
    assert not r and r.reason == "norms differ"


def _so4_residuals(l, l2, Os):
    L = rc.L_from_l(l)
    L2s = np.einsum("bij,jk,blk->bil", Os, L, Os)
    iu = np.triu_indices(4, 1)
    return np.linalg.norm(L2s[:, iu[0], iu[1]] - l2, axis=1)


def _brute_force_so4(l, l2, seed, draws=10_000):
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((draws, 4, 4)))
    Q = Q * np.sign(np.diagonal(R, axis1=1, axis2=2))[:, None, :]
    det = np.linalg.det(Q)
    Q[det < 0, :, 0] *= -1
    res = _so4_residuals(l, l2, Q)
    iu = np.triu_indices(4, 1)
    best = np.inf
    for k in np.argsort(res)[:5]:
        O0 = Q[k]

        def f(a):
            A = np.zeros((4, 4))
            A[iu] = a
            return _so4_residuals(l, l2, (O0 @ expm(A - A.T))[None])[0] ** 2
        out = minimize(f, np.zeros(6), method="BFGS", options={"gtol": 1e-14})
        best = min(best, np.sqrt(out.fun))
    return best


def test_reachable_n4_against_brute_force():
    rng = np.random.default_rng(9)
    cases = []
    for k in range(10):
        l = rng.standard_normal(6)
        if k < 4:
            l2 = rc.m_of_o(mc.random_orthogonal(4, rng)) @ l
        elif k < 6:
            l2 = rc.m_of_o(mc.random_orthogonal(4, rng, proper=False)) @ l
        else:
            l2 = rng.standard_normal(6)
            l2 *= np.linalg.norm(l) / np.linalg.norm(l2)
        cases.append((l, l2))
    decisions = []
    for k, (l, l2) in enumerate(cases):
        mine = bool(rc.reachable_orthogonal(l, l2))
        oracle = _brute_force_so4(l, l2, k) <= 1e-6
        assert mine == oracle, k
        decisions.append(mine)
    assert decisions[:4] == [True] * 4 and decisions[4:] == [False] * 6


@pytest.mark.parametrize("n", [4, 5, 6, 7])
def test_reachable_constructs_rotation(n):
    rng = np.random.default_rng(20 + n)
    l = rng.standard_normal(n * (n - 1) // 2)
    O = mc.random_orthogonal(n, rng)
    r = rc.reachable_orthogonal(l, rc.m_of_o(O) @ l)
    assert r and r.residual <= 1e-8 and np.isclose(np.linalg.det(r.O), 1)
    l2 = rng.standard_normal(l.size)
    l2 *= np.linalg.norm(l) / np.linalg.norm(l2)
    assert not rc.reachable_orthogonal(l, l2)


def test_reachable_singular_even_absorbs_reflection():
    # rank-2 L in N = 4: a kernel direction lets SO(4) realise a reflection
    l = rc.l_vector(np.pad(np.array([[0.0, 1.3], [-1.3, 0.0]]), ((0, 2), (0, 2))))
    O = mc.random_orthogonal(4, np.random.default_rng(0), proper=False)
    assert rc.reachable_orthogonal(l, rc.m_of_o(O) @ l)


# -- N = 3 unitary cap -----------------------------------------------------------

def sphere_points(rng, radius, m):
    v = np.abs(rng.standard_normal((m, 3)))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def test_cap_defining_point():
    L = rc.unitary_L3([1.0, 1.0, np.sqrt(2)], np.pi / 3)
    lv, phi = rc.cap_vector(L)
    assert np.allclose(lv, [1, 1, np.sqrt(2)]) and np.isclose(phi, np.pi / 3)
    spec = rc.cap_spec_from_L(L)
    assert np.isclose(spec.radius, 2.0) and np.isclose(spec.product, 0.5 * np.sqrt(2))
    assert rc.cap_test_n3(spec, L) and rc.cap_test_n3(spec, L, mode="level")


def test_cap_shrinks_to_point():
    g = 1.7
    L = rc.unitary_L3(np.full(3, g / np.sqrt(3)), 0.0)
    spec = rc.cap_spec_from_L(L)
    assert rc.cap_test_n3(spec, L)
    assert np.allclose(spec.center, g / np.sqrt(3))
    rng = np.random.default_rng(1)
    for lv in sphere_points(rng, spec.radius, 50):
        if np.max(np.abs(lv - spec.center)) > 1e-4:
            assert not rc.cap_test_n3(spec, rc.unitary_L3(lv, 0.0))


def test_cap_full_octant_at_right_angle():
    spec = rc.cap_spec_from_L(rc.unitary_L3([1.0, 1.0, np.sqrt(2)], np.pi / 2))
    assert abs(spec.product) <= 1e-15
    rng = np.random.default_rng(2)
    for lv in sphere_points(rng, spec.radius, 50):
        L = rc.unitary_L3(lv, rng.uniform(-np.pi, np.pi))
        assert rc.cap_test_n3(spec, L)
    assert not rc.cap_test_n3(spec, rc.unitary_L3([1.0, 1.0, 1.0], 0.0))


def test_cap_level_mode_literal():
    spec = rc.cap_spec_from_L(rc.unitary_L3([1.0, 1.0, np.sqrt(2)], np.pi / 2))
    L = rc.unitary_L3([1.0, 1.0, np.sqrt(2)], np.pi)
    assert rc.cap_test_n3(spec, L)
    assert not rc.cap_test_n3(spec, L, mode="level")
    with pytest.raises(ValueError):
        rc.cap_test_n3(spec, L, mode="nope")


def test_cap_spec_validation():
    with pytest.raises(ValueError):
        rc.CapSpec(1.0, 1.0)
    with pytest.raises(ValueError):
        rc.CapSpec(-1.0, 0.0)


@given(st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(-3.1, 3.1))
def test_cap_product_bound(a, b, c, phi):
    spec = rc.cap_spec_from_L(rc.unitary_L3([a, b, c], phi))
    assert abs(spec.product) <= (spec.radius / np.sqrt(3)) ** 3 * (1 + 1e-12)


# -- Monte Carlo images ----------------------------------------------------------

L_FIG2 = [1.0, 1.0, np.sqrt(2)]


def test_image_collapses_for_ordinary_cm():
    L0 = rc.unitary_L3(np.full(3, 1.0), 0.0)
    cloud = rc.sample_image(L0, 40, seed=1)
    assert cloud.failures == 0
    assert cloud.spread() <= 1e-6


def test_image_on_sphere_and_in_cap():
    openings = []
    for phi in (np.pi / 2, np.pi / 3, np.pi / 6, 0.0):
        L0 = rc.unitary_L3(L_FIG2, phi)
        spec = rc.cap_spec_from_L(L0)
        cloud = rc.sample_image(L0, 150, seed=3)
        assert cloud.failures == 0
        assert np.max(np.abs(np.linalg.norm(cloud.l, axis=1) - 2.0)) <= 1e-5
        assert np.all(rc.cap_points_test(spec, cloud.l, 1e-5))
        # the triple product cos(Phi) l12 l23 l31 is conserved
        p = np.cos(cloud.phi) * np.prod(cloud.l, axis=1)
        assert np.max(np.abs(p - spec.product)) <= 1e-6
        openings.append(cloud.opening)
    assert all(a > b for a, b in zip(openings, openings[1:]))


def test_image_deterministic_and_worker_independent():
    L0 = rc.unitary_L3(L_FIG2, np.pi / 6)
    a = rc.sample_image(L0, 12, seed=5)
    b = rc.sample_image(L0, 12, seed=5, workers=3)
    c = rc.sample_image(L0, 12, seed=6)
    assert a.to_csv() == b.to_csv()
    assert a.to_csv() != c.to_csv()
    assert a.meta["sampling"] == rc.SAMPLING_LAW


def test_image_exact_matches_reduced():
    L0 = rc.unitary_L3(L_FIG2, np.pi / 3)
    t = np.linspace(0, 2 * np.pi, 9)
    a = rc.sample_image(L0, 5, t, seed=2)
    b = rc.sample_image(L0, 5, t, seed=2, method="exact")
    assert np.max(np.abs(a.l - b.l)) <= 1e-6


def test_cloud_csv_schema():
    cloud = rc.sample_image(rc.unitary_L3(L_FIG2, 0.3), 2, np.linspace(0, 1, 3), seed=0)
    text = cloud.to_csv()
    lines = text.splitlines()
    assert lines[0] == "traj_id,t,l12,l23,l31,phi123"
    assert len(lines) == 1 + 6
    buf = io.StringIO()
    cloud.to_csv(buf)
    assert buf.getvalue() == text
    row = lines[2].split(",")
    assert float(row[2]) == cloud.l[1, 0]
