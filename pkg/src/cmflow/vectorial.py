"""Vector decompositions of L, rank classification and stationarity tests.

Every valid L can be written ``L_ij = s i (eps_i|eps_j)`` for N vectors of
equal length, obtained from a rank-revealing Cholesky factor of
``s(-iL) + c 1``.  The rank r of that factor is a flow invariant; r = 1 is
exactly the ordinary CM system.
"""
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, FrozenSet, Optional

import numpy as np

from . import gauge as ga
from . import kernels as K
from . import matcore as mc

RANK_RTOL = 1e-8
CHOL_RTOL = 1e-9


class RankMismatchError(RuntimeError):
    """Eigenvalue-multiplicity and Cholesky ranks disagree."""


class InfeasiblePattern(ValueError):
    """Sign pattern cannot be realised by unit vectors at this g."""


@dataclass(frozen=True)
class EpsilonSet:
    """Columns of ``vectors`` (shape r x N) are the vectors |eps_i).

    ``sign`` is s in ``L_ij = s i (eps_i|eps_j)``; ``norm`` the common length.
    """
    vectors: np.ndarray
    rank: int
    norm: float
    sign: int = 1

    @property
    def n(self):
        return self.vectors.shape[1]

    @property
    def gram(self):
        return self.vectors.conj().T @ self.vectors

    @property
    def L(self):
        L = self.sign * 1j * self.gram
        L[np.diag_indices(self.n)] = 0.0
        return L


# -- rank -----------------------------------------------------------------------

def _extreme_multiplicities(w, rtol=RANK_RTOL):
    scale = max(float(np.max(np.abs(w))), 1e-300)
    lo = int(np.sum(np.abs(w - w[0]) <= rtol * scale))
    hi = int(np.sum(np.abs(w - w[-1]) <= rtol * scale))
    return lo, hi


def rank_of(L, rtol=RANK_RTOL):
    """``N`` minus the larger multiplicity of the extreme eigenvalues of ``-iL``."""
    L = ga._check_L(L)
    n = L.shape[0]
    if n == 0 or not np.any(L):
        return 0
    w = np.linalg.eigvalsh(-1j * L)
    lo, hi = _extreme_multiplicities(w, rtol)
    return n - max(lo, hi)


def decompose(L, g=None, rtol=RANK_RTOL) -> EpsilonSet:
    """Equal-length vectors with ``L_ij = s i (eps_i|eps_j)``.

    Without ``g`` the sign s and shift follow the extreme eigenvalue of
    ``-iL`` with the larger multiplicity, which minimises the span.  With
    ``g`` the factorised matrix is ``-iL + g 1`` (s = +1); ``g`` must make it
    semidefinite.  The factor rank is checked against the eigenvalue count.
    """
    L = ga._check_L(L)
    n = L.shape[0]
    H = -1j * L
    H = 0.5 * (H + H.conj().T)
    w = np.linalg.eigvalsh(H)
    if g is None:
        lo, hi = _extreme_multiplicities(w, rtol)
        if lo >= hi:
            s, c, mult = 1, -w[0], lo
        else:
            s, c, mult = -1, w[-1], hi
        expected = n - mult
    else:
        s, c = 1, float(g)
        if c + w[0] < -rtol * max(abs(c), 1.0):
            raise mc.NotPSDError(f"g = {g} is below -lambda_min = {-w[0]:.6g}")
        ws = w + c
        expected = int(np.sum(ws > rtol * max(float(ws.max()), 1e-300)))
    G = s * H + c * np.eye(n)
    G = 0.5 * (G + G.conj().T)
    tr = float(np.trace(G).real)
    if tr <= 0:
        return EpsilonSet(np.zeros((0, n), dtype=complex), 0, 0.0, s)
    # tiny negative eigenvalues from rounding: clip through the pivot tolerance
    fac = mc.cholesky_psd(G, pivot_tol=CHOL_RTOL * tr)
    if fac.rank != expected:
        raise RankMismatchError(f"Cholesky rank {fac.rank} != eigenvalue rank {expected}")
    return EpsilonSet(fac.factor, fac.rank, float(np.sqrt(max(c, 0.0))), s)


# -- sign patterns --------------------------------------------------------------

@dataclass(frozen=True)
class SignPattern:
    """Gauge-fixed sign bits: ``n_0j = 0`` and ``n_ij`` for ``0 < i < j`` packed
    into ``code`` in the order of :func:`cmflow.kernels.free_pairs`."""
    n: int
    code: int = 0

    def __post_init__(self):
        nb = len(K.free_pairs(self.n))
        if not 0 <= self.code < (1 << nb):
            raise ValueError(f"code {self.code} out of range for N={self.n}")

    @classmethod
    def from_bits(cls, bits, n=None):
        """From a symmetric 0/1 matrix or a ``{(i, j): bit}`` dict, gauge-fixing
        the first row to zero by flipping rows/columns."""
        if isinstance(bits, dict):
            if n is None:
                n = 1 + max(max(k) for k in bits) if bits else 0
            B = np.zeros((n, n), dtype=int)
            for (i, j), b in bits.items():
                B[i, j] = B[j, i] = int(b) & 1
        else:
            B = np.array(bits, dtype=int) & 1
            n = B.shape[0]
        # Z2 gauge: flip index j when n_0j = 1
        f = np.concatenate([[0], B[0, 1:]])
        B = (B + f[:, None] + f[None, :]) % 2
        code = 0
        for b, (i, j) in enumerate(K.free_pairs(n)):
            code |= int(B[i, j]) << b
        return cls(n, code)

    @property
    def bits(self):
        B = np.zeros((self.n, self.n), dtype=int)
        for b, (i, j) in enumerate(K.free_pairs(self.n)):
            B[i, j] = B[j, i] = (self.code >> b) & 1
        return B

    @property
    def signs(self):
        S = 1.0 - 2.0 * self.bits
        S[np.diag_indices(self.n)] = 0.0
        return S

    def matrix(self, g=1.0):
        return ga.sign_pattern_matrix(self.bits, self.n, g)


def build_even_vectors(n, g, pattern: Optional[SignPattern] = None, tol=1e-10) -> EpsilonSet:
    """Real unit vectors with ``(e_i|e_j) = g (-1)^{n_ij}``, built one at a time.

    Component l of vector k is ``((e_l|e_k) - sum_{i<l} e_l^i e_k^i) / e_l^l``
    and the last one closes the unit norm.  Vanishing pivots drop a
    dimension; the result is trimmed to the packing dimension.
    """
    if not 0 < g < 1:
        raise ValueError("g must lie in (0, 1)")
    pattern = pattern or SignPattern(n, 0)
    Gm = 1.0 * np.eye(n) + g * pattern.signs
    E = np.zeros((n, n))
    for k in range(n):
        for l in range(k):
            piv = E[l, l]
            num = Gm[l, k] - E[:l, l] @ E[:l, k]
            if abs(piv) <= tol:
                if abs(num) > 1e3 * tol:
                    raise InfeasiblePattern(f"pattern infeasible at g={g}: vector {k}, component {l}")
                continue
            E[l, k] = num / piv
        rad = 1.0 - E[:k, k] @ E[:k, k]
        if rad < -1e3 * tol:
            raise InfeasiblePattern(f"negative radicand {rad:.3e} for vector {k} at g={g}")
        E[k, k] = np.sqrt(max(rad, 0.0)) if rad > tol ** 2 else 0.0
    keep = np.abs(np.diag(E)) > tol
    V = E[keep]
    return EpsilonSet(V.astype(complex), int(keep.sum()), 1.0, 1)


def _pattern_ranks(codes, n, g):
    """Eigenvalue ranks with a batched Cholesky cross-check."""
    S = K.sign_matrices(np.asarray(codes, dtype=np.int64), n)
    H = g * S
    w = np.linalg.eigvalsh(H)
    scale = np.max(np.abs(w), axis=1, keepdims=True)
    lo = np.sum(np.abs(w - w[:, :1]) <= RANK_RTOL * scale, axis=1)
    hi = np.sum(np.abs(w - w[:, -1:]) <= RANK_RTOL * scale, axis=1)
    ranks = n - np.maximum(lo, hi)
    use_lo = lo >= hi
    eye = np.eye(n)[None]
    G = np.where(use_lo[:, None, None], H - w[:, :1, None] * eye, -H + w[:, -1:, None] * eye)
    chol = K.cholesky_rank_batch(G, CHOL_RTOL)
    bad = np.nonzero(chol != ranks)[0]
    if bad.size:
        b = bad[0]
        raise RankMismatchError(
            f"N={n} pattern {int(codes[b])}: Cholesky rank {chol[b]} != eigenvalue rank {ranks[b]}")
    return ranks


@dataclass(frozen=True)
class RankCensus:
    n: int
    counts: Dict[int, int]
    method: str
    n_patterns: int

    @property
    def ranks(self) -> FrozenSet[int]:
        return frozenset(self.counts)


def rank_census(n, g=0.5, n_samples=1_000_000, seed=0, exhaustive_max=8, batch=1 << 16):
    """Rank counts over gauge-fixed sign patterns.

    Exhaustive for ``n <= exhaustive_max``; otherwise ``n_samples`` uniform
    random patterns plus the all-zero pattern.
    """
    if n < 2:
        raise ValueError("need N >= 2")
    nb = len(K.free_pairs(n))
    counts: Dict[int, int] = {}
    if n <= exhaustive_max:
        total = 1 << nb
        method = "exhaustive"
        chunks = (np.arange(s, min(s + batch, total), dtype=np.int64) for s in range(0, total, batch))
    else:
        rng = np.random.default_rng(seed)
        codes = rng.integers(0, 1 << nb, size=n_samples, dtype=np.int64)
        codes[0] = 0
        total = n_samples
        method = "sampled"
        chunks = (codes[s:s + batch] for s in range(0, total, batch))
    for c in chunks:
        r, k = np.unique(_pattern_ranks(c, n, g), return_counts=True)
        for ri, ki in zip(r.tolist(), k.tolist()):
            counts[ri] = counts.get(ri, 0) + ki
    return RankCensus(n, dict(sorted(counts.items())), method, total)


def possible_ranks(n, **kw) -> FrozenSet[int]:
    """Union of ranks over the sign-pattern matrices ``L_ij = i g (-1)^{n_ij}``."""
    return rank_census(n, **kw).ranks


# -- stationarity ---------------------------------------------------------------

def first_derivative_stationary(eps: EpsilonSet, tol=1e-10) -> bool:
    """All ``Im((eps_i|eps_k)(eps_k|eps_j)(eps_j|eps_i))`` vanish."""
    G = eps.gram
    scale = max(float(np.max(np.abs(G))), 1e-300) ** 3
    T = np.einsum("ik,kj,ji->ijk", G, G, G)
    return bool(np.max(np.abs(T.imag)) <= tol * scale)


def second_derivative_stationary(pattern: SignPattern, n=None) -> bool:
    """``n_ij + n_kl = n_ik + n_jl = n_il + n_jk (mod 2)`` on every 4-subset.

    Vacuous (True) for N < 4.
    """
    n = pattern.n if n is None else n
    if n != pattern.n:
        raise ValueError("pattern size differs from N")
    B = pattern.bits
    for i, j, k, l in combinations(range(n), 4):
        a = (B[i, j] + B[k, l]) & 1
        b = (B[i, k] + B[j, l]) & 1
        c = (B[i, l] + B[j, k]) & 1
        if not a == b == c:
            return False
    return True


@dataclass(frozen=True)
class FEResult:
    L: Optional[np.ndarray]
    spread: float
    g: Optional[float]

    def __bool__(self):
        return self.L is not None


def fe_to_L(E, F, tol=1e-9) -> FEResult:
    """``L = i(FE - g 1)`` when every ``(f_i|e_i) = g``; else no L, with the spread."""
    E = np.asarray(E, dtype=complex)
    F = np.asarray(F, dtype=complex)
    Phi = F @ E
    if not mc.is_hermitian(Phi, 1e-10):
        raise mc.ClassViolation("F E is not Hermitian")
    c = np.real(np.diag(Phi))
    spread = float(c.max() - c.min()) if len(c) else 0.0
    if spread > tol * max(1.0, float(np.max(np.abs(c)))):
        return FEResult(None, spread, None)
    g = float(c.mean())
    L = 1j * (Phi - g * np.eye(len(c)))
    L[np.diag_indices(len(c))] = 0.0
    return FEResult(L, spread, g)


def vectorial_state_from_L(x, p, L):
    """Vectorial initial data with ``E = eps``, ``F = s eps^dagger`` reproducing L."""
    from .reduced import VectorialState
    eps = decompose(L)
    V = eps.vectors
    if V.shape[0] == 0:
        V = np.zeros((1, len(x)), dtype=complex)
    return VectorialState(x, p, V, eps.sign * V.conj().T)


def is_ordinary_cm(L, mag_rtol=1e-8, angle_tol=1e-8) -> bool:
    """Gauge class of ``+-L0``: equal magnitudes and one common triple sum in
    {0, pi}.  Cross-checked against ``rank_of(L) == 1``."""
    L = ga._check_L(L)
    n = L.shape[0]
    iu = np.triu_indices(n, 1)
    mags = np.abs(L[iu])
    if mags.size == 0 or mags.max() == 0:
        direct = False
    else:
        direct = bool(np.all(np.abs(mags - mags.mean()) <= mag_rtol * mags.max()))
        if direct and n >= 3:
            phis = np.array(list(ga.triple_sums(L).triples.values()))
            on0 = np.all(ga.angle_distance(phis, 0.0) <= angle_tol)
            onpi = np.all(ga.angle_distance(phis, np.pi) <= angle_tol)
            direct = bool(on0 or onpi)
    via_rank = rank_of(L) == 1
    if direct != via_rank:
        raise RankMismatchError(f"invariant test says {direct}, rank test says {via_rank}")
    return direct
