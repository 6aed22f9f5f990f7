import numpy as np
import pytest
from hypothesis import given, strategies as st

from cmflow import flows as fl
from cmflow import matcore as mc
from cmflow import reduced as rd
from cmflow.gauge import ordinary_cm_matrix

TWO_PI = 2 * np.pi


def random_point(seed, n):
    rng = np.random.default_rng(seed)
    return fl.PhasePoint(mc.random_hermitian(n, rng), mc.random_hermitian(n, rng))


def fig1_point():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    p = np.array([50.0, -50.0, 15.0, -10.0])
    g = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 1.0])
    Y = np.diag(p).astype(complex)
    for k, (i, j) in enumerate(zip(*np.triu_indices(4, 1))):
        Y[i, j] = 1j * g[k] / (x[i] - x[j])
        Y[j, i] = np.conj(Y[i, j])
    return fl.PhasePoint(np.diag(x).astype(complex), Y)


# -- free and harmonic -----------------------------------------------------------

def test_free_flow_examples():
    q = fl.free_flow(fl.PhasePoint(np.diag([0.0, 1.0]), np.zeros((2, 2))), 5.0)
    assert np.allclose(q.X, np.diag([0, 1]))
    q = fl.free_flow(fl.PhasePoint(np.zeros((2, 2)), np.diag([1.0, -1.0])), 2.0)
    assert np.allclose(q.X, np.diag([2, -2]))


def test_free_flow_matches_reduced_ode():
    rng = np.random.default_rng(7)
    x0 = np.sort(rng.uniform(-2, 2, 4)) + np.arange(4)
    p0 = rng.standard_normal(4)
    H = mc.random_hermitian(4, rng)
    np.fill_diagonal(H, 0)
    L0 = 1j * H
    pt = fl.phase_point_from_reduced(x0, p0, L0)
    ev = np.linalg.eigvalsh(fl.free_flow(pt, 1.0).X)
    tr = rd.integrate(None, rd.ReducedState(x0, p0, L0), t_eval=[0.0, 1.0], tol=1e-10)
    assert np.max(np.abs(tr.x[-1] - ev)) <= 1e-6


def test_harmonic_period_and_quarter():
    pt = random_point(1, 3)
    q = fl.harmonic_flow(pt, TWO_PI)
    assert np.allclose(q.X, pt.X, atol=1e-12) and np.allclose(q.Y, pt.Y, atol=1e-12)
    X0 = pt.X
    q = fl.harmonic_flow(fl.PhasePoint(X0, np.zeros_like(X0)), np.pi / 2)
    assert np.allclose(q.X, 0, atol=1e-14) and np.allclose(q.Y, -X0)


def test_fig1_eigenvalues_periodic():
    pt = fig1_point()
    e0 = np.linalg.eigvalsh(pt.X)
    e1 = np.linalg.eigvalsh(fl.harmonic_flow(pt, TWO_PI).X)
    assert np.allclose(e0, [1, 2, 3, 4])
    assert np.max(np.abs(e1 - e0)) <= 1e-12
    # and not periodic at half the period
    assert np.max(np.abs(np.linalg.eigvalsh(fl.harmonic_flow(pt, np.pi).X) - e0)) > 1e-2


@given(st.integers(0, 1000), st.floats(-2, 2), st.floats(-2, 2))
def test_group_property(seed, s, t):
    pt = random_point(seed, 3)
    for flow in (fl.free_flow, fl.harmonic_flow, fl.elementsum_harmonic_flow):
        a = flow(flow(pt, s), t)
        b = flow(pt, s + t)
        assert np.max(np.abs(a.X - b.X)) <= 1e-10 * (1 + np.max(np.abs(b.X)))


# -- Sutherland ------------------------------------------------------------------

def sutherland_pair(seed, n=3):
    rng = np.random.default_rng(seed)
    X0 = mc.random_unitary(n, rng)
    K = 1j * mc.random_hermitian(n, rng)
    return X0, X0.conj().T @ K


def test_sutherland_trivial_and_commuting():
    X0 = mc.random_unitary(3, np.random.default_rng(0))
    X, Y = fl.sutherland_flow(X0, np.zeros((3, 3)), 2.7)
    assert np.allclose(X, X0)
    X, _ = fl.sutherland_flow(np.eye(2), 1j * np.diag([1.0, -1.0]), np.pi)
    assert np.allclose(X, -np.eye(2))
    ph = fl.sutherland_eigenphases(np.eye(2), 1j * np.diag([1.0, -1.0]), np.linspace(0, 3, 31))
    assert np.allclose(np.sort(np.diff(ph, axis=0), axis=1), [-0.1, 0.1], atol=1e-12)


def test_sutherland_unitary_and_continuous():
    X0, Y0 = sutherland_pair(5)
    X, _ = fl.sutherland_flow(X0, Y0, 0.3)
    assert np.max(np.abs(X @ X.conj().T - np.eye(3))) <= 1e-10
    ts = np.linspace(0, 3, 301)
    ph = fl.sutherland_eigenphases(X0, Y0, ts)
    assert np.max(np.abs(np.diff(ph, axis=0))) < 0.1


def test_sutherland_group_property():
    X0, Y0 = sutherland_pair(9)
    X1, Y1 = fl.sutherland_flow(X0, Y0, 0.4)
    X2, _ = fl.sutherland_flow(X1, Y1, 0.7)
    X3, _ = fl.sutherland_flow(X0, Y0, 1.1)
    assert np.max(np.abs(X2 - X3)) <= 1e-10


def test_sutherland_class_violation():
    with pytest.raises(mc.ClassViolation):
        fl.sutherland_flow(2 * np.eye(2), np.zeros((2, 2)), 1.0)


# -- extended model --------------------------------------------------------------

def ext_point(seed, n=3, xi=0.8, commuting=False):
    rng = np.random.default_rng(seed)
    X = mc.random_hermitian(n, rng)
    Y = mc.random_hermitian(n, rng)
    if commuting:
        w, W = np.linalg.eigh(Y)
        Phi = W @ np.diag(rng.standard_normal(n)) @ W.conj().T
    else:
        Phi = mc.random_hermitian(n, rng, scale=0.5)
    return fl.ExtendedPoint.from_phi(X, Y, Phi, xi)


def test_ef_commuting_is_linear():
    e0 = ext_point(2, commuting=True)
    X, Y, Phi, _ = fl.ef_flow(e0, 1.7)
    assert np.allclose(X, e0.X + 1.7 * (e0.Y + e0.xi * e0.Phi), atol=1e-12)
    assert np.allclose(Phi, e0.Phi, atol=1e-12)


def test_ef_xi_zero_is_free():
    e0 = ext_point(3, xi=0.0)
    X, _, _, _ = fl.ef_flow(e0, 1.3)
    assert np.allclose(X, fl.free_flow(fl.PhasePoint(e0.X, e0.Y), 1.3).X)


def test_ef_conserved_commutator_and_group():
    e0 = ext_point(4)
    C0 = fl.ef_flow(e0, 0.0)[3]
    for t in np.linspace(0, 5, 11):
        assert np.max(np.abs(fl.ef_flow(e0, t)[3] - C0)) <= 1e-9
    X1, Y1, P1, _ = fl.ef_flow(e0, 0.6)
    a = fl.ef_flow(fl.ExtendedPoint.from_phi(X1, Y1, P1, e0.xi), 0.9)
    b = fl.ef_flow(e0, 1.5)
    assert np.max(np.abs(a[0] - b[0])) <= 1e-10 and np.max(np.abs(a[2] - b[2])) <= 1e-10


def test_ef_matches_quadrature():
    # X(t) = X0 + t Y0 + xi * int_0^t Phi(s) ds, by Gauss-Legendre
    e0 = ext_point(6)
    t = 1.4
    s, w = np.polynomial.legendre.leggauss(40)
    s = 0.5 * t * (s + 1)
    integral = sum(wi * fl.ef_flow(e0, si)[2] for si, wi in zip(s, w)) * 0.5 * t
    X = fl.ef_flow(e0, t)[0]
    assert np.max(np.abs(X - (e0.X + t * e0.Y + e0.xi * integral))) <= 1e-10


def test_ef_pauli_closed_form():
    x0, y0, phi0, xi = 0.8, 1.3, 0.6, 0.9
    n_y = np.array([1.0, 2.0, -0.5]) / np.linalg.norm([1.0, 2.0, -0.5])
    n_p = np.array([0.3, -1.0, 1.0]) / np.linalg.norm([0.3, -1.0, 1.0])
    e0 = fl.ExtendedPoint.from_phi(mc.pauli_compose(0, [0, 0, x0]),
                                   mc.pauli_compose(0, y0 * n_y),
                                   mc.pauli_compose(0, phi0 * n_p), xi)
    for t in np.linspace(0, 4, 9):
        X, _, Phi, _ = fl.ef_flow(e0, t)
        d, ph = fl.ef_pauli_n2(x0, y0, n_y, phi0, n_p, xi, t)
        assert np.max(np.abs(np.real(mc.pauli_decompose(X)[1]) - d)) <= 1e-9
        assert np.max(np.abs(np.real(mc.pauli_decompose(Phi)[1]) - ph)) <= 1e-9


def test_ef_oscillation_frequencies():
    e0 = ext_point(8, n=3, xi=1.0)
    y, W = np.linalg.eigh(e0.Y)
    T, m = 200.0, 4096
    ts = np.arange(m) * T / m
    sig = np.array([(W.conj().T @ fl.ef_flow(e0, t)[2] @ W)[0, 2] for t in ts])
    spec = np.abs(np.fft.fft(sig - sig.mean()))
    w = 2 * np.pi * np.fft.fftfreq(m, T / m)
    peak = w[np.argmax(spec)]
    assert abs(abs(peak) - abs(y[0] - y[2])) <= 2 * np.pi / T


def test_ef_rejects_non_hermitian_phi():
    X = np.eye(2, dtype=complex)
    e0 = fl.ExtendedPoint(X, X, np.eye(2), np.array([[0, 1], [0, 0]], dtype=complex))
    with pytest.raises(mc.ClassViolation):
        fl.ef_flow(e0, 1.0)


# -- element-sum models ----------------------------------------------------------

def test_elementsum_linear():
    pt = random_point(0, 3)
    q = fl.elementsum_linear_flow(fl.PhasePoint(pt.X, np.zeros((3, 3))), 4.0)
    assert np.allclose(q.X, pt.X)
    y00, yb = 0.3, np.array([0.7, -0.2, 1.1])
    X0 = mc.pauli_compose(0.5, [0, 0, -0.4])
    Y0 = mc.pauli_compose(y00, yb)
    t = 1.3
    q = fl.elementsum_linear_flow(fl.PhasePoint(X0, Y0), t)
    assert np.allclose(q.X, X0 + t * (Y0 + y00 * mc.SIGMA_X + yb[0] * np.eye(2)))


def test_elementsum_linear_entrywise():
    pt = random_point(11, 5)
    Y = pt.Y
    t = 0.7
    ref = np.empty_like(Y)
    for i in range(5):
        for j in range(5):
            ref[i, j] = 0.5 * sum(Y[m, j] + Y[i, m] for m in range(5))
    assert np.allclose(fl.elementsum_linear_flow(pt, t).X, pt.X + t * ref)


def test_elementsum_harmonic_n2_formulas():
    x00, x0z = 0.7, -1.1
    y00, y0x, y0y, y0z = 0.4, 0.9, -0.3, 0.6
    X0 = mc.pauli_compose(x00, [0, 0, x0z])
    Y0 = mc.pauli_compose(y00, [y0x, y0y, y0z])
    pt = fl.PhasePoint(X0, Y0)
    assert np.allclose(fl.elementsum_harmonic_flow(pt, 0.0).X, X0)
    for t in np.linspace(0, 6, 13):
        q = fl.elementsum_harmonic_flow(pt, t)
        x0 = 0.5 * (x00 * (1 + np.cos(2 * t)) + (y00 + y0x) * np.sin(2 * t))
        y0 = 0.5 * ((y00 + y0x) * np.cos(2 * t) - x00 * np.sin(2 * t) + y00 - y0x)
        xb = [x0 - x00, y0y * np.sin(t), x0z * np.cos(t) + y0z * np.sin(t)]
        yb = [y0 - y00 + y0x, y0y * np.cos(t), -x0z * np.sin(t) + y0z * np.cos(t)]
        assert np.allclose(q.X, mc.pauli_compose(x0, xb), atol=1e-12)
        assert np.allclose(q.Y, mc.pauli_compose(y0, yb), atol=1e-12)
        # circle invariant, constant x00^2 + (y00 + y0x)^2
        trX, trY = np.trace(q.X).real, np.trace(q.Y).real
        assert np.isclose((trX - x00) ** 2 + (trY - y00 + y0x) ** 2, x00 ** 2 + (y00 + y0x) ** 2)


def test_elementsum_harmonic_complement_block():
    pt = random_point(2, 5)
    basis = fl.OnesProjectorBasis.of(5)
    B = basis.matrix
    assert np.allclose(B.T @ B, np.eye(5))
    Q = basis.Q
    b0 = Q.T @ pt.X @ Q
    for t in np.linspace(0, 7, 15):
        q = fl.elementsum_harmonic_flow(pt, t)
        assert np.max(np.abs(Q.T @ q.X @ Q - b0)) <= 1e-10
        # 2N - 1 = 9 real degrees of freedom move at most
        moved = np.abs(basis.to_basis(q.X) - basis.to_basis(pt.X)) > 1e-12
        assert moved[1:, 1:].sum() == 0


def test_elementsum_harmonic_matches_ode():
    pt = random_point(4, 3)
    tr = rd.integrate(None, rd.ElementSumState(pt.X, pt.Y), t_eval=np.linspace(0, 3, 7), tol=1e-12)
    for t, s in zip(tr.t, tr.states):
        assert np.max(np.abs(s.X - fl.elementsum_harmonic_flow(pt, t).X)) <= 1e-9


# -- reduction -------------------------------------------------------------------

def test_reduce_diagonal_input():
    x = np.array([0.0, 1.0, 3.0])
    Y = random_point(0, 3).Y
    fr = fl.reduce(fl.PhasePoint(np.diag(x), Y))
    assert np.allclose(np.abs(fr.U), np.eye(3))
    assert np.allclose(fr.L, (x[:, None] - x[None, :]) * Y)


def test_reduce_ordinary_cm_seed():
    x = np.array([-1.0, 0.5, 2.0, 4.0])
    p = np.array([1.0, 0.0, -2.0, 0.3])
    pt = fl.phase_point_from_reduced(x, p, ordinary_cm_matrix(4, 0.6))
    fr = fl.reduce(pt)
    off = ~np.eye(4, dtype=bool)
    assert np.allclose(np.abs(fr.L[off]), 0.6)
    assert np.allclose(fr.L, ordinary_cm_matrix(4, 0.6))
    assert np.allclose(fr.p, p)


def test_reduce_along_free_flow_conserves_traces():
    pt = random_point(21, 4)
    frames = fl.reduce_trajectory(fl.free_flow, pt, np.linspace(0, 1, 11))
    t2 = [np.trace(f.L @ f.L).real for f in frames]
    assert np.max(np.abs(np.array(t2) - t2[0])) <= 1e-10 * abs(t2[0])
    for k in (2, 3, 4):
        for M in ("L", "V"):
            tk = np.array([np.trace(np.linalg.matrix_power(getattr(f, M), k)) for f in frames])
            assert np.max(np.abs(tk - tk[0])) <= 1e-8 * (1 + abs(tk[0]))
    mags = np.array([np.abs(f.L) for f in frames])
    assert np.max(np.abs(mags - mags[0])) > 1e-3
    for f in frames:
        assert np.max(np.abs(np.diag(f.L))) <= 1e-10
