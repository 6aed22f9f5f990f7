"""Gauge classes of coupling matrices.

Two anti-Hermitian zero-diagonal matrices are gauge equivalent when
``L'_ij = L_ij exp(i(phi_i - phi_j))`` for some phases ``phi``.  The
complete invariants are the magnitudes ``|L_ij|`` and the cyclic triple
sums ``Phi_ijk``.

Phase convention: phases are read off the Hermitian matrix ``H = -i L``,
``H_ij = |L_ij| exp(i varphi_ij)``, so that
``Phi_ijk = arg(H_ij H_jk H_ki)`` lies in ``(-pi, pi]``.  With this choice the
ordinary-CM matrix ``L0 = i g (J - 1)`` has every ``Phi = 0``, its negative
has every ``Phi = pi`` and real antisymmetric matrices give ``+-pi/2``.
"""
from collections import deque
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, Optional, Tuple

import numpy as np

from . import matcore as mc

MAG_RTOL = 1e-8
ANGLE_TOL = 1e-8
ZERO_TOL = 1e-12


def _check_L(L, name="L"):
    L = np.asarray(mc.check_square(L, name), dtype=complex)
    scale = 1.0 + float(np.max(np.abs(L))) if L.size else 1.0
    if L.size and np.max(np.abs(L + L.conj().T)) > 1e-10 * scale:
        raise mc.ClassViolation(f"{name} is not anti-Hermitian")
    if L.size and np.max(np.abs(np.diag(L))) > 1e-10 * scale:
        raise mc.ClassViolation(f"{name} has a nonzero diagonal")
    return L


def wrap_angle(a):
    """Map angles into ``(-pi, pi]``."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def angle_distance(a, b):
    return np.abs(wrap_angle(np.asarray(a) - np.asarray(b)))


@dataclass(frozen=True)
class GaugeClass:
    """Gauge-invariant fingerprint of L.

    ``magnitudes`` is the symmetric matrix ``|L_ij|``; ``triples`` holds
    ``Phi_ijk`` for every ``i < j < k`` (``nan`` where a factor vanishes).
    The star triples ``(0, j, k)`` already form an independent set:
    ``Phi_ijk = Phi_0ij + Phi_0jk - Phi_0ik`` whenever row 0 has no zeros.
    """
    magnitudes: np.ndarray
    triples: Dict[Tuple[int, int, int], float]
    undefined: Tuple[Tuple[int, int, int], ...] = ()

    @property
    def n(self):
        return self.magnitudes.shape[0]

    def phi(self, i, j, k):
        """``Phi`` for any ordering of three distinct indices."""
        key = tuple(sorted((i, j, k)))
        v = self.triples[key]
        # even permutations of (a, b, c) keep the sign, odd ones flip it
        perm = [key.index(m) for m in (i, j, k)]
        inv = sum(1 for a in range(3) for b in range(a + 1, 3) if perm[a] > perm[b])
        return float(v if inv % 2 == 0 else wrap_angle(-v))

    def independent(self):
        """Star triples ``(0, j, k)``, ``0 < j < k``."""
        return {t: v for t, v in self.triples.items() if t[0] == 0}


def hermitian_phases(L):
    """``varphi_ij = arg(-i L_ij)``; antisymmetric in (i, j)."""
    return np.angle(-1j * np.asarray(L))


def triple_sums(L, tol=ZERO_TOL) -> GaugeClass:
    L = _check_L(L)
    n = L.shape[0]
    H = -1j * L
    mag = np.abs(L)
    scale = max(float(mag.max()) if n else 0.0, 1e-300)
    triples = {}
    undefined = []
    for i, j, k in combinations(range(n), 3):
        if min(mag[i, j], mag[j, k], mag[k, i]) < tol * scale:
            triples[(i, j, k)] = np.nan
            undefined.append((i, j, k))
            continue
        triples[(i, j, k)] = float(wrap_angle(np.angle(H[i, j] * H[j, k] * H[k, i])))
    return GaugeClass(mag, triples, tuple(undefined))


def gauge_transform(L, phases):
    """``E L E^dagger`` with ``E = diag(exp(i phases))``."""
    e = np.exp(1j * np.asarray(phases, dtype=float))
    return (e[:, None] * np.asarray(L)) * e.conj()[None, :]


def random_gauge(L, rng):
    rng = np.random.default_rng(rng)
    ph = rng.uniform(0, 2 * np.pi, np.asarray(L).shape[0])
    return gauge_transform(L, ph), ph


def _spanning_tree(mag, tol, prefer_chain=True):
    """Edges (parent, child) of a BFS forest on the nonzero pattern.

    With ``prefer_chain`` and a nonzero superdiagonal the tree is the path
    1-2-...-N used by the alpha-chain construction.
    """
    n = mag.shape[0]
    if prefer_chain and n > 1 and np.all(np.diag(mag, 1) > tol):
        return [(i, i + 1) for i in range(n - 1)]
    seen = np.zeros(n, dtype=bool)
    edges = []
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        q = deque([root])
        while q:
            u = q.popleft()
            for v in range(n):
                if not seen[v] and mag[u, v] > tol:
                    seen[v] = True
                    edges.append((u, v))
                    q.append(v)
    return edges


@dataclass(frozen=True)
class GaugeMatch:
    equivalent: bool
    phases: Optional[np.ndarray] = None
    reason: str = ""
    excluded: Tuple[Tuple[int, int, int], ...] = ()

    def __bool__(self):
        return self.equivalent

    def __iter__(self):
        # unpack as (equivalent, phases)
        return iter((self.equivalent, self.phases))


def is_gauge_equivalent(L, L2, mag_rtol=MAG_RTOL, angle_tol=ANGLE_TOL, tol=ZERO_TOL) -> GaugeMatch:
    """Decide ``L2 = E L E^dagger`` for diagonal unitary E and recover E.

    Magnitudes are compared relatively and triple sums within
    ``angle_tol``; triples touching a vanishing entry are excluded and
    reported.  On success ``phases`` satisfy
    ``L2_ij = L_ij exp(i(phases_i - phases_j))`` (checked explicitly), with
    ``phases[0] = 0``.
    """
    L = _check_L(L, "L")
    L2 = _check_L(L2, "L2")
    if L.shape != L2.shape:
        return GaugeMatch(False, reason="shape mismatch")
    n = L.shape[0]
    m1, m2 = np.abs(L), np.abs(L2)
    scale = max(float(m1.max()) if n else 0.0, 1e-300)
    if np.any(np.abs(m1 - m2) > mag_rtol * np.maximum(np.maximum(m1, m2), scale * tol)):
        return GaugeMatch(False, reason="magnitudes differ")
    g1 = triple_sums(L, tol)
    g2 = triple_sums(L2, tol)
    excluded = tuple(sorted(set(g1.undefined) | set(g2.undefined)))
    for key, v in g1.triples.items():
        if key in excluded:
            continue
        if angle_distance(v, g2.triples[key]) > angle_tol:
            return GaugeMatch(False, reason=f"triple sum {key} differs", excluded=excluded)
    # phases along a spanning tree (alpha chain on the superdiagonal when possible)
    ph = np.zeros(n)
    v1 = hermitian_phases(L)
    v2 = hermitian_phases(L2)
    for u, v in _spanning_tree(m1, tol * scale):
        alpha = v2[u, v] - v1[u, v]
        ph[v] = ph[u] - alpha
    ph = wrap_angle(ph)
    rec = gauge_transform(L, ph)
    if np.max(np.abs(rec - L2)) > max(mag_rtol, angle_tol) * 10 * scale:
        return GaugeMatch(False, reason="no consistent phases (cycle without triangle support)",
                          excluded=excluded)
    return GaugeMatch(True, ph, "", excluded)


def canonical_rep(L, tol=ZERO_TOL):
    """Gauge representative with ``L_uv = i |L_uv|`` on a BFS tree from index 0.

    Every nonzero entry of the first row becomes ``i |L_0j|``.  Tree entries
    are assigned exactly, so the map is idempotent bit for bit.
    """
    L = _check_L(L)
    n = L.shape[0]
    mag = np.abs(L)
    scale = max(float(mag.max()) if n else 0.0, 1e-300)
    edges = _spanning_tree(mag, tol * scale, prefer_chain=False)
    vphi = hermitian_phases(L)
    ph = np.zeros(n)
    for u, v in edges:
        # want varphi'_uv = varphi_uv + ph_u - ph_v = 0
        ph[v] = ph[u] + vphi[u, v]
    R = gauge_transform(L, ph)
    for u, v in edges:
        R[u, v] = 1j * mag[u, v]
    iu = np.triu_indices(n, 1)
    up = R[iu]
    R = np.zeros_like(R)
    R[iu] = up
    R = R - R.conj().T
    R[np.diag_indices(n)] = 0.0
    return R


def setting_split(L):
    """``L = L^O + L^I``: real antisymmetric and imaginary symmetric parts."""
    L = _check_L(L)
    return L.real.astype(complex), 1j * L.imag


def time_reversal(L):
    """Anti-unitary image ``-L*``; maps every ``Phi`` to ``-Phi``.

    For real antisymmetric L this is just ``-L``.
    """
    L = _check_L(L)
    return -L.conj()


def ordinary_cm_matrix(n, g=1.0):
    """``L0 = -i g (1 - |e><e|)`` with ``e = (1, ..., 1)``: ``L0_ij = i g``."""
    L = 1j * g * np.ones((n, n))
    L[np.diag_indices(n)] = 0.0
    return L


def sign_pattern_matrix(bits, n, g=1.0):
    """``L_ij = i g (-1)^{n_ij}`` from a dict or symmetric 0/1 array of bits."""
    if isinstance(bits, dict):
        B = np.zeros((n, n), dtype=int)
        for (i, j), b in bits.items():
            B[i, j] = B[j, i] = int(b) & 1
    else:
        B = np.asarray(bits, dtype=int)
    S = 1.0 - 2.0 * B
    L = 1j * g * S
    L[np.diag_indices(n)] = 0.0
    return L
