"""Matrix substrate: Hermitian checks, tracked eigendecomposition,
semidefinite Cholesky, commutators and Pauli helpers.

Matrices are plain numpy arrays.  Complex Hermitian and real symmetric
inputs are both accepted; the :class:`MatrixClass` tag records which one a
routine was asked to respect.
"""
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional
import warnings

import numpy as np


class MatrixClass(str, Enum):
    HERMITIAN = "hermitian-complex"
    REAL_SYMMETRIC = "real-symmetric"


class ClassViolation(ValueError):
    """Input does not belong to the requested matrix class."""


class NotPSDError(ValueError):
    """Matrix has an eigenvalue below ``-pivot_tol``."""


class DegeneracyWarning(UserWarning):
    """Eigenvalue gap fell below the tracking tolerance."""


HERMITIAN_RTOL = 1e-12
DEGENERACY_TOL = 1e-9

SIGMA_0 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = (SIGMA_X, SIGMA_Y, SIGMA_Z)


def hermiticity_residual(M):
    M = np.asarray(M)
    return float(np.max(np.abs(M - M.conj().T))) if M.size else 0.0


def is_hermitian(M, rtol=HERMITIAN_RTOL):
    M = np.asarray(M)
    scale = 1.0 + (float(np.max(np.abs(M))) if M.size else 0.0)
    return hermiticity_residual(M) <= rtol * scale


def check_square(M, name="matrix"):
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ClassViolation(f"{name} must be square, got shape {M.shape}")
    return M


def check_hermitian(M, cls=MatrixClass.HERMITIAN, name="matrix", rtol=HERMITIAN_RTOL):
    """Validate ``M`` against ``cls`` and return it as an array.

    Real-symmetric inputs come back as float arrays; Hermitian ones as
    complex arrays.
    """
    M = check_square(M, name)
    cls = MatrixClass(cls)
    if not is_hermitian(M, rtol):
        raise ClassViolation(
            f"{name} is not Hermitian (residual {hermiticity_residual(M):.3e})")
    if cls is MatrixClass.REAL_SYMMETRIC:
        if np.iscomplexobj(M):
            if np.any(M.imag != 0):
                raise ClassViolation(f"{name} tagged real-symmetric has imaginary entries")
            M = M.real
        return np.asarray(M, dtype=float)
    return np.asarray(M, dtype=complex)


def classify(M):
    M = np.asarray(M)
    if not np.iscomplexobj(M) or not np.any(M.imag):
        return MatrixClass.REAL_SYMMETRIC
    return MatrixClass.HERMITIAN


def random_hermitian(n, rng, cls=MatrixClass.HERMITIAN, scale=1.0):
    """GUE (or GOE) sample with unit-variance off-diagonal entries."""
    rng = np.random.default_rng(rng)
    if MatrixClass(cls) is MatrixClass.REAL_SYMMETRIC:
        A = rng.standard_normal((n, n))
        return scale * (A + A.T) / np.sqrt(2.0)
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * (A + A.conj().T) / 2.0


def random_unitary(n, rng):
    """Haar-distributed unitary via QR with phase correction."""
    rng = np.random.default_rng(rng)
    Z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    Q, R = np.linalg.qr(Z)
    d = np.diag(R)
    return Q * (d / np.abs(d))


def random_orthogonal(n, rng, proper=True):
    rng = np.random.default_rng(rng)
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    if proper and np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


# -- eigendecomposition -------------------------------------------------------

class Eigh(NamedTuple):
    """Result of :func:`eig_tracked`.  ``U @ M @ U.conj().T`` is diagonal."""
    values: np.ndarray
    U: np.ndarray
    min_gap: float
    degenerate: bool


def _greedy_match(overlap):
    """Column permutation maximising |overlap| greedily.

    ``perm[i]`` is the new column assigned to previous column ``i``.
    """
    n = overlap.shape[0]
    A = np.abs(overlap).copy()
    perm = np.empty(n, dtype=int)
    for _ in range(n):
        i, j = np.unravel_index(np.argmax(A), A.shape)
        perm[i] = j
        A[i, :] = -1.0
        A[:, j] = -1.0
    return perm


def eig_tracked(M, prev=None, degeneracy_tol=DEGENERACY_TOL, check=True):
    """Eigendecomposition with optional continuity tracking.

    Parameters
    ----------
    M : (N, N) Hermitian array
    prev : optional
        Previous frame (anything with a ``U`` attribute, or the unitary
        itself).  When given, eigenvectors are matched to the previous ones
        by maximal overlap and rephased so that ``diag(U_prev U^dagger)`` is
        real positive; this is the discrete form of the ``A_ii = 0`` gauge.
    degeneracy_tol : float
        Relative to the spectral diameter.  A smaller gap while tracking
        emits :class:`DegeneracyWarning` and sets ``degenerate``.

    Returns
    -------
    Eigh
        Without ``prev`` the eigenvalues are ascending.
    """
    M = check_square(M)
    if check and not is_hermitian(M):
        raise ClassViolation(
            f"eig_tracked needs a Hermitian matrix (residual {hermiticity_residual(M):.3e})")
    w, W = np.linalg.eigh(M)
    n = len(w)
    gaps = np.diff(w)
    min_gap = float(gaps.min()) if n > 1 else np.inf
    diameter = float(w[-1] - w[0]) if n > 1 else 0.0
    degenerate = n > 1 and min_gap <= degeneracy_tol * max(diameter, 1e-300)
    if prev is not None:
        U_prev = getattr(prev, "U", prev)
        U_prev = np.asarray(U_prev)
        if U_prev.shape != W.shape:
            raise ClassViolation(f"previous frame has shape {U_prev.shape}, expected {W.shape}")
        W_prev = U_prev.conj().T
        overlap = W_prev.conj().T @ W
        perm = _greedy_match(overlap)
        W = W[:, perm]
        w = w[perm]
        d = np.einsum("ij,ij->j", W_prev.conj(), W)
        phase = np.where(np.abs(d) > 0, d.conj() / np.where(d == 0, 1, np.abs(d)), 1.0)
        if not np.iscomplexobj(W):
            phase = phase.real
        W = W * phase
        if degenerate:
            warnings.warn(
                f"eigenvalue gap {min_gap:.3e} below tracking tolerance", DegeneracyWarning,
                stacklevel=2)
    return Eigh(w, W.conj().T, min_gap, bool(degenerate))


# -- semidefinite Cholesky ----------------------------------------------------

@dataclass(frozen=True)
class CholeskyFactor:
    """Rank-revealing factor of a PSD matrix.

    ``R`` has shape ``(rank, N)`` and is upper triangular in pivot order;
    ``factor`` is ``R`` with columns returned to the input order, so
    ``factor.conj().T @ factor == M + shift * I``.
    """
    rank: int
    R: np.ndarray
    perm: np.ndarray
    shift: float = 0.0

    @property
    def factor(self):
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(len(self.perm))
        return self.R[:, inv]

    @property
    def columns(self):
        """The N column vectors in C^rank, one per original index."""
        return self.factor

    def reconstruct(self):
        F = self.factor
        return F.conj().T @ F


def pivoted_cholesky(M, tol):
    """Outer-product Cholesky with diagonal pivoting.

    Stops once the largest remaining diagonal entry is ``<= tol``.
    Returns ``(R, perm)`` with ``R`` of shape ``(rank, N)``.
    """
    A = np.array(M, dtype=complex if np.iscomplexobj(M) else float)
    n = A.shape[0]
    perm = np.arange(n)
    R = np.zeros_like(A)
    rank = 0
    for k in range(n):
        d = A.diagonal().real[k:]
        j = k + int(np.argmax(d))
        if d[j - k] <= tol:
            break
        if j != k:
            A[[k, j], :] = A[[j, k], :]
            A[:, [k, j]] = A[:, [j, k]]
            R[:, [k, j]] = R[:, [j, k]]
            perm[[k, j]] = perm[[j, k]]
        piv = np.sqrt(A[k, k].real)
        R[k, k] = piv
        R[k, k + 1:] = A[k, k + 1:] / piv
        A[k + 1:, k + 1:] -= np.outer(R[k, k + 1:].conj(), R[k, k + 1:])
        rank += 1
    return R[:rank], perm


def cholesky_psd(M, pivot_tol=None, shift=0.0):
    """Factor ``M + shift*I`` as ``F^dagger F`` with minimal row count.

    ``pivot_tol`` defaults to ``1e-10 * trace``.  Eigenvalues below
    ``-pivot_tol`` raise :class:`NotPSDError`.
    """
    M = check_hermitian(M, classify(M), name="cholesky input")
    n = M.shape[0]
    A = M + shift * np.eye(n)
    tr = float(np.trace(A).real)
    if pivot_tol is None:
        pivot_tol = 1e-10 * max(tr, np.finfo(float).tiny)
    lam_min = float(np.linalg.eigvalsh(A)[0]) if n else 0.0
    if lam_min < -pivot_tol:
        raise NotPSDError(f"minimum eigenvalue {lam_min:.3e} < -{pivot_tol:.3e}")
    R, perm = pivoted_cholesky(A, pivot_tol)
    return CholeskyFactor(R.shape[0], R, perm, float(shift))


# -- algebra ------------------------------------------------------------------

def _pair(A, B):
    A = check_square(A, "A")
    B = check_square(B, "B")
    if A.shape != B.shape:
        raise ClassViolation(f"dimension mismatch {A.shape} vs {B.shape}")
    return A, B


def commutator(A, B):
    A, B = _pair(A, B)
    C = A @ B - B @ A
    if is_hermitian(A) and is_hermitian(B):
        # [H1, H2] must come out anti-Hermitian
        assert is_hermitian(1j * C, rtol=1e-9), "commutator of Hermitian pair not anti-Hermitian"
    return C


def anticommutator(A, B):
    A, B = _pair(A, B)
    return A @ B + B @ A


def pauli_compose(a0, a):
    """``a0 * 1 + a . sigma`` for a 3-vector ``a`` (real or complex)."""
    a = np.asarray(a)
    if a.shape != (3,):
        raise ValueError("Pauli vector must have 3 components")
    return a0 * SIGMA_0 + a[0] * SIGMA_X + a[1] * SIGMA_Y + a[2] * SIGMA_Z


def pauli_decompose(M):
    """Inverse of :func:`pauli_compose`: returns ``(a0, a)``."""
    M = np.asarray(M)
    a0 = np.trace(M) / 2
    a = np.array([np.trace(s @ M) / 2 for s in PAULI])
    return a0, a


def ones_projector_basis(n):
    """Orthonormal ``[e0 | Q]`` with ``e0 = (1,...,1)/sqrt(n)`` as first column."""
    e0 = np.full(n, 1.0 / np.sqrt(n))
    # Householder reflection mapping the first unit vector onto e0
    v = e0.copy()
    v[0] -= 1.0
    nv = np.linalg.norm(v)
    if nv < 1e-15:
        B = np.eye(n)
    else:
        v /= nv
        B = np.eye(n) - 2.0 * np.outer(v, v)
    return B
