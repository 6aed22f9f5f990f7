"""Exact matrix-space solutions and reduction to the eigenvalue frame.

All flows here are closed-form, so they serve as oracles for the reduced
ODE integrations in :mod:`cmflow.reduced`.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import matcore as mc


# -- types ----------------------------------------------------------------------

@dataclass(frozen=True)
class PhasePoint:
    """A point (X, Y) of the linear matrix model."""
    X: np.ndarray
    Y: np.ndarray
    cls: mc.MatrixClass = mc.MatrixClass.HERMITIAN

    def __post_init__(self):
        X = mc.check_hermitian(self.X, self.cls, "X", rtol=1e-10)
        Y = mc.check_hermitian(self.Y, self.cls, "Y", rtol=1e-10)
        if X.shape != Y.shape:
            raise mc.ClassViolation(f"X {X.shape} and Y {Y.shape} differ in shape")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "cls", mc.MatrixClass(self.cls))

    @property
    def n(self):
        return self.X.shape[0]

    def _new(self, X, Y):
        # skip re-validation of matrices built from validated ones
        p = object.__new__(PhasePoint)
        object.__setattr__(p, "X", X)
        object.__setattr__(p, "Y", Y)
        object.__setattr__(p, "cls", self.cls)
        return p


@dataclass(frozen=True)
class SpectralFrame:
    """Reduction of a phase point: ``D`` eigenvalues of X, ``V = U Y U^dagger``,
    ``L = [diag(D), V]``."""
    t: float
    D: np.ndarray
    V: np.ndarray
    L: np.ndarray
    U: np.ndarray
    min_gap: float = np.inf

    @property
    def x(self):
        return self.D

    @property
    def p(self):
        return np.real(np.diag(self.V))


@dataclass(frozen=True)
class ExtendedPoint:
    """State (X, Y, E, F) of the extended model with coupling ``xi``.

    ``E`` is d x N (columns are the vectors |e_i)), ``F`` is N x d (rows are
    the covectors (f_i|).
    """
    X: np.ndarray
    Y: np.ndarray
    E: np.ndarray
    F: np.ndarray
    xi: float = 1.0

    def __post_init__(self):
        X = mc.check_hermitian(self.X, mc.MatrixClass.HERMITIAN, "X", rtol=1e-10)
        Y = mc.check_hermitian(self.Y, mc.MatrixClass.HERMITIAN, "Y", rtol=1e-10)
        E = np.asarray(self.E, dtype=complex)
        F = np.asarray(self.F, dtype=complex)
        n = X.shape[0]
        if E.ndim != 2 or E.shape[1] != n or F.shape != (n, E.shape[0]):
            raise mc.ClassViolation(f"E {E.shape} / F {F.shape} incompatible with N={n}")
        for k, v in (("X", X), ("Y", Y), ("E", E), ("F", F)):
            object.__setattr__(self, k, v)
        object.__setattr__(self, "xi", float(self.xi))

    @property
    def Phi(self):
        return self.F @ self.E

    @classmethod
    def from_phi(cls, X, Y, Phi, xi=1.0):
        """Build E, F with ``F E = Phi`` (d = N, E = 1)."""
        Phi = np.asarray(Phi, dtype=complex)
        n = Phi.shape[0]
        return cls(X, Y, np.eye(n, dtype=complex), Phi.copy(), xi)


@dataclass(frozen=True)
class OnesProjectorBasis:
    """Orthonormal basis ``[e0 | Q]`` with ``e0 = (1,...,1)/sqrt(N)``."""
    e0: np.ndarray
    Q: np.ndarray

    @classmethod
    def of(cls, n):
        B = mc.ones_projector_basis(n)
        return cls(B[:, 0].copy(), B[:, 1:].copy())

    @property
    def matrix(self):
        return np.column_stack([self.e0, self.Q])

    def to_basis(self, M):
        B = self.matrix
        return B.T @ M @ B

    def from_basis(self, M):
        B = self.matrix
        return B @ M @ B.T


# -- linear and harmonic models -------------------------------------------------

def free_flow(p0: PhasePoint, t) -> PhasePoint:
    """``X = X0 + t Y0``, ``Y = Y0``."""
    return p0._new(p0.X + t * p0.Y, p0.Y.copy())


def harmonic_flow(p0: PhasePoint, t) -> PhasePoint:
    """Solution of ``X' = Y, Y' = -X`` (period 2 pi)."""
    c, s = np.cos(t), np.sin(t)
    # exact at multiples of pi/2 so the period check is bitwise
    c, s = _snap(c), _snap(s)
    return p0._new(p0.X * c + p0.Y * s, p0.Y * c - p0.X * s)


def _snap(v):
    r = np.round(v)
    return float(r) if abs(v - r) < 1e-15 else float(v)


def phase_point_from_reduced(x, p, L, cls=mc.MatrixClass.HERMITIAN) -> PhasePoint:
    """Matrix seed whose reduction is ``(x, p, L)``:
    ``X0 = diag(x)``, ``Y0_ii = p_i``, ``Y0_ij = L_ij / (x_i - x_j)``."""
    x = np.asarray(x, dtype=float)
    L = np.asarray(L)
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, 1.0)
    Y = L / d
    np.fill_diagonal(Y, np.asarray(p, dtype=float))
    # enforce exact Hermiticity against rounding in L
    Y = 0.5 * (Y + Y.conj().T)
    if mc.MatrixClass(cls) is mc.MatrixClass.REAL_SYMMETRIC:
        Y = Y.real
    return PhasePoint(np.diag(x).astype(Y.dtype), Y, cls)


# -- Sutherland model -----------------------------------------------------------

def _unitary_exp(K, t):
    """``exp(K t)`` for anti-Hermitian ``K`` via the Hermitian ``iK``."""
    w, W = np.linalg.eigh(1j * K)
    return (W * np.exp(-1j * w * t)) @ W.conj().T


def _check_sutherland(X0, Y0, tol=1e-10):
    X0 = np.asarray(mc.check_square(X0, "X0"), dtype=complex)
    Y0 = np.asarray(mc.check_square(Y0, "Y0"), dtype=complex)
    n = X0.shape[0]
    if Y0.shape != X0.shape:
        raise mc.ClassViolation("X0 and Y0 differ in shape")
    if np.max(np.abs(X0.conj().T @ X0 - np.eye(n))) > tol:
        raise mc.ClassViolation("X0 is not unitary")
    K = X0 @ Y0
    if np.max(np.abs(K + K.conj().T)) > tol * (1.0 + np.max(np.abs(K))):
        raise mc.ClassViolation("X0 Y0 is not anti-Hermitian")
    return X0, Y0, K


def sutherland_flow(X0, Y0, t):
    """``X = X0 exp(X0 Y0 t)``, ``Y = exp(-X0 Y0 t) Y0``; X stays unitary."""
    X0, Y0, K = _check_sutherland(X0, Y0)
    E = _unitary_exp(K, t)
    return X0 @ E, E.conj().T @ Y0


def sutherland_eigenphases(X0, Y0, times):
    """Eigenphases of ``X(t)`` on a time grid, continued branch by branch.

    Each sample is matched to the previous one by nearest phase (mod 2 pi)
    and shifted onto the nearest branch, so the rows vary continuously.
    """
    X0, Y0, K = _check_sutherland(X0, Y0)
    times = np.asarray(times, dtype=float)
    out = np.empty((len(times), X0.shape[0]))
    prev = None
    for k, t in enumerate(times):
        ph = np.angle(np.linalg.eigvals(X0 @ _unitary_exp(K, t)))
        if prev is None:
            ph = np.sort(ph)
        else:
            diff = np.angle(np.exp(1j * (ph[None, :] - prev[:, None])))
            perm = mc._greedy_match(-np.abs(diff) + np.pi)
            ph = prev + diff[np.arange(len(prev)), perm]
        out[k] = ph
        prev = ph
    return out


# -- extended (E, F) model ------------------------------------------------------

def _circle(tau):
    return np.sin(tau) + 1j * (1.0 - np.cos(tau))


def ef_flow(e0: ExtendedPoint, t):
    """Exact solution of ``H = Tr((Y + xi F E)^2) / 2``.

    Returns ``(X, Y, Phi, C)`` with ``C = [X, Y] - i Phi`` conserved.  The
    X integral is evaluated entrywise in the eigenbasis of Y0; equal
    eigenvalues use the analytic limit ``xi t Phi_ij``.
    """
    Phi0 = e0.Phi
    if not mc.is_hermitian(Phi0, 1e-10):
        raise mc.ClassViolation(
            f"Phi0 = F E is not Hermitian (residual {mc.hermiticity_residual(Phi0):.3e})")
    xi = e0.xi
    y, W = np.linalg.eigh(e0.Y)
    Pt = W.conj().T @ Phi0 @ W
    dy = y[:, None] - y[None, :]
    small = np.abs(dy) <= 1e-12 * max(1.0, float(np.max(np.abs(y))))
    safe = np.where(small, 1.0, dy)
    integral = np.where(small, xi * t * Pt, Pt * _circle(xi * dy * t) / safe)
    Xt = W @ (np.diag(y * t) + integral) @ W.conj().T
    X = e0.X + 0.5 * (Xt + Xt.conj().T)
    phase = np.exp(1j * xi * dy * t)
    Phi = W @ (Pt * phase) @ W.conj().T
    Phi = 0.5 * (Phi + Phi.conj().T)
    Y = e0.Y.copy()
    C = X @ Y - Y @ X - 1j * Phi
    return X, Y, Phi, C


def ef_pauli_n2(x0, y0, n_y, phi0, n_phi, xi, t):
    """N = 2 closed form with ``X0 = x0 sz``, ``Y0 = y0 n_y.s``,
    ``Phi0 = phi0 n_phi.s``.

    Returns the Pauli vectors ``(d(t), phi(t))`` of X(t) and Phi(t).
    """
    n_y = np.asarray(n_y, dtype=float)
    n_phi = np.asarray(n_phi, dtype=float)
    w = xi * y0
    c = np.dot(n_y, n_phi)
    perp = np.cross(n_y, n_phi)
    trans = np.cross(perp, n_y)
    phi = phi0 * (c * n_y - np.sin(2 * w * t) * perp + np.cos(2 * w * t) * trans)
    d = (np.array([0.0, 0.0, x0]) + t * (1.0 + c * xi * phi0 / y0) * y0 * n_y
         + (phi0 / y0) * np.sin(w * t) * (-np.sin(w * t) * perp + np.cos(w * t) * trans))
    return d, phi


# -- element-sum Hamiltonians ---------------------------------------------------

def elementsum_linear_flow(p0: PhasePoint, t) -> PhasePoint:
    """``X = X0 + (t/2) {M, Y0}`` with ``M`` the all-ones matrix."""
    n = p0.n
    M = np.ones((n, n))
    return p0._new(p0.X + 0.5 * t * mc.anticommutator(M, p0.Y), p0.Y.copy())


def elementsum_harmonic_flow(p0: PhasePoint, t) -> PhasePoint:
    """Harmonic element-sum model, solved in the basis ``[e0 | Q]``.

    The (e0, e0) entry rotates at frequency N, the (e0, e_i) entries at N/2
    and the complementary block is constant.
    """
    n = p0.n
    basis = OnesProjectorBasis.of(n)
    Xb = basis.to_basis(p0.X)
    Yb = basis.to_basis(p0.Y)
    c1, s1 = np.cos(n * t), np.sin(n * t)
    c2, s2 = np.cos(0.5 * n * t), np.sin(0.5 * n * t)
    Xn, Yn = Xb.copy(), Yb.copy()
    Xn[0, 0] = Xb[0, 0] * c1 + Yb[0, 0] * s1
    Yn[0, 0] = Yb[0, 0] * c1 - Xb[0, 0] * s1
    Xn[0, 1:] = Xb[0, 1:] * c2 + Yb[0, 1:] * s2
    Yn[0, 1:] = Yb[0, 1:] * c2 - Xb[0, 1:] * s2
    Xn[1:, 0] = Xn[0, 1:].conj()
    Yn[1:, 0] = Yn[0, 1:].conj()
    return p0._new(basis.from_basis(Xn), basis.from_basis(Yn))


# -- reduction ------------------------------------------------------------------

def reduce(point: PhasePoint, t=0.0, prev: Optional[SpectralFrame] = None) -> SpectralFrame:
    """Diagonalise X and express Y and ``L = [D, V]`` in its eigenframe.

    With ``prev`` the eigenvectors are continued from the previous frame;
    otherwise ``D`` is ascending.
    """
    eig = mc.eig_tracked(point.X, prev=prev, check=False)
    U = eig.U
    V = U @ point.Y @ U.conj().T
    D = eig.values
    L = (D[:, None] - D[None, :]) * V
    scale = 1.0 + float(np.max(np.abs(L)))
    if np.max(np.abs(L + L.conj().T)) > 1e-9 * scale:
        raise mc.ClassViolation("reduced L is not anti-Hermitian")
    if np.max(np.abs(np.diag(L))) > 1e-10 * scale:
        raise mc.ClassViolation("reduced L has a nonzero diagonal")
    return SpectralFrame(float(t), D, V, L, U, eig.min_gap)


def reduce_trajectory(flow, p0, times, **kw):
    """Reduce ``flow(p0, t)`` at each time, tracking eigenvector continuity."""
    frames = []
    prev = None
    for t in times:
        fr = reduce(flow(p0, t, **kw), t, prev)
        frames.append(fr)
        prev = fr
    return frames
