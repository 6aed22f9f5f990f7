"""Reachable sets of the coupling matrix L.

Orthogonal setting: real antisymmetric L is parametrised by its
upper-triangular vector ``l = (l_12, l_13, ..., l_{N-1,N})`` and the flow
acts by ``L -> O L O^T``, i.e. ``l -> M(O) l`` with ``M`` the second
compound of ``O``.  Unitary setting, N = 3: ``l = (|L_12|, |L_23|, |L_31|)``
stays on a sphere and inside the cap ``cos(Phi) l12 l23 l31 >= p0``.
"""
import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np
import scipy.linalg as sla

from . import flows as fl
from . import gauge as ga
from . import kernels as K
from . import matcore as mc
from . import reduced as rd

ORTH_TOL = 1e-10
ANGLE_TOL = 1e-8

# explicit N = 3 isomorphism M_3(O) = P3 O Q3, written on (l12, l23, l13);
# S3 reorders (l12, l13, l23) into that basis
P3 = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
Q3 = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
S3 = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])


# -- l vectors ------------------------------------------------------------------

def _pairs(n):
    return list(combinations(range(n), 2))


def n_from_dim(m):
    n = int(round((1 + np.sqrt(1 + 8 * m)) / 2))
    if n * (n - 1) // 2 != m:
        raise ValueError(f"{m} is not a triangular number N(N-1)/2")
    return n


@dataclass(frozen=True)
class LVector:
    """Upper-triangular entries of a real antisymmetric matrix."""
    l: np.ndarray

    def __post_init__(self):
        l = np.asarray(self.l, dtype=float).ravel()
        n_from_dim(l.size)
        object.__setattr__(self, "l", l)

    @property
    def n(self):
        return n_from_dim(self.l.size)

    @property
    def norm(self):
        return float(np.linalg.norm(self.l))

    @classmethod
    def from_L(cls, L, tol=1e-10):
        L = np.asarray(mc.check_square(L, "L"))
        if np.iscomplexobj(L):
            if np.max(np.abs(L.imag)) > tol * (1 + np.max(np.abs(L))):
                raise mc.ClassViolation("L is not real")
            L = L.real
        if np.max(np.abs(L + L.T)) > tol * (1 + np.max(np.abs(L))):
            raise mc.ClassViolation("L is not antisymmetric")
        iu = np.triu_indices(L.shape[0], 1)
        return cls(L[iu])

    def matrix(self):
        return L_from_l(self.l)


def l_vector(L):
    return LVector.from_L(L).l


def L_from_l(l):
    """``L_ij = sign(j - i) l_ij``."""
    l = np.asarray(l, dtype=float).ravel()
    n = n_from_dim(l.size)
    L = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    L[iu] = l
    return L - L.T


def _check_orthogonal(O, tol=ORTH_TOL, name="O"):
    O = np.asarray(mc.check_square(O, name), dtype=float)
    res = float(np.max(np.abs(O @ O.T - np.eye(O.shape[0])))) if O.size else 0.0
    if res > tol:
        raise mc.ClassViolation(f"{name} is not orthogonal (residual {res:.2e})")
    return O


def m_of_o(O, tol=ORTH_TOL):
    """Matrix of ``L -> O L O^T`` on l vectors.

    ``M[(a,b),(i,j)] = O_ai O_bj - O_aj O_bi`` for ``a < b``, ``i < j``.
    """
    O = _check_orthogonal(O, tol)
    n = O.shape[0]
    pr = _pairs(n)
    a = np.array([p[0] for p in pr], dtype=int)
    b = np.array([p[1] for p in pr], dtype=int)
    M = O[a][:, a] * O[b][:, b] - O[a][:, b] * O[b][:, a]
    res = float(np.max(np.abs(M @ M.T - np.eye(M.shape[0])))) if M.size else 0.0
    if res > 10 * tol * max(n, 1):
        raise mc.ClassViolation(f"M(O) lost orthogonality (residual {res:.2e})")
    return M


def m3_explicit(O, basis="l"):
    """The closed N = 3 form ``P3 O Q3`` for proper rotations.

    It acts on ``(l12, l23, l13)``; with ``basis="l"`` it is returned in the
    ``(l12, l13, l23)`` ordering of :func:`m_of_o`.
    """
    O = _check_orthogonal(O)
    if O.shape != (3, 3):
        raise ValueError("m3_explicit needs a 3x3 matrix")
    M = P3 @ O @ Q3
    return S3.T @ M @ S3 if basis == "l" else M


def o_from_m3(M):
    """Invert the N = 3 isomorphism (``M`` in the :func:`m_of_o` ordering)."""
    M = _check_orthogonal(M, name="M")
    return P3.T @ (S3 @ M @ S3.T) @ Q3.T


# -- canonical angles -----------------------------------------------------------

@dataclass(frozen=True)
class CanonicalAngles:
    """Rotation angles of ``M = Z T Z^T`` in real canonical form.

    ``angles`` are the nontrivial block angles in ``(0, pi]``, ascending;
    ``-1`` eigenvalues are paired into angles ``pi``.
    """
    angles: np.ndarray
    Z: np.ndarray
    T: np.ndarray
    n_minus_one: int = 0

    @property
    def count(self):
        return int(self.angles.size)

    def __len__(self):
        return self.count

    def __iter__(self):
        return iter(self.angles.tolist())


def canonical_angles(M, tol=ANGLE_TOL) -> CanonicalAngles:
    M = _check_orthogonal(M, 1e-8, "M")
    if M.size == 0:
        return CanonicalAngles(np.zeros(0), M.copy(), M.copy())
    T, Z = sla.schur(M, output="real")
    m = M.shape[0]
    angles = []
    n_neg = 0
    i = 0
    while i < m:
        if i + 1 < m and abs(T[i + 1, i]) > tol:
            # scipy standardises 2x2 blocks to equal diagonals
            c = 0.5 * (T[i, i] + T[i + 1, i + 1])
            s = np.sqrt(abs(T[i, i + 1] * T[i + 1, i]))
            angles.append(float(np.arctan2(s, c)))
            i += 2
        else:
            if T[i, i] < 0:
                n_neg += 1
            i += 1
    angles.extend([np.pi] * (n_neg // 2))
    a = np.sort(np.array(angles, dtype=float))
    a = a[a > tol]
    return CanonicalAngles(a, Z, T, n_neg)


def rotation_angles(O, tol=ANGLE_TOL):
    """Canonical angles of a proper rotation ``O`` (``[N/2]`` values, zeros kept)."""
    ca = canonical_angles(O, tol)
    n = O.shape[0] // 2
    a = np.concatenate([np.zeros(max(n - ca.count, 0)), ca.angles])
    return np.sort(a)


def template_angles(thetas, n):
    """Block angles of ``M(O)`` for ``O`` with canonical angles ``thetas``.

    Each pair of planes ``a < b`` contributes ``theta_a - theta_b`` and
    ``theta_a + theta_b``; for odd N each plane also contributes
    ``theta_a`` (its coupling to the fixed axis).  The remaining
    ``[N/2]`` directions are fixed.  Angles are folded into ``[0, pi]``.
    """
    th = np.asarray(thetas, dtype=float)
    out = []
    for a, b in combinations(range(th.size), 2):
        out += [th[a] - th[b], th[a] + th[b]]
    if n % 2 == 1:
        out += list(th)
    out = np.abs(ga.wrap_angle(np.array(out, dtype=float)))
    return np.sort(out)


def _match_multiset(a, b, tol):
    a = np.sort(np.asarray(a))
    b = np.sort(np.asarray(b))
    a = a[a > tol]
    b = b[b > tol]
    return a.size == b.size and (a.size == 0 or np.max(np.abs(a - b)) <= tol)


# -- reachability in the orthogonal setting -----------------------------------

def _real_canonical_basis(L, tol):
    """Orthogonal Z with ``Z^T L Z`` block diagonal ``[[0, a], [-a, 0]]``,
    ``a`` positive and ascending, kernel last."""
    n = L.shape[0]
    w, U = np.linalg.eigh(1j * L)
    scale = max(float(np.max(np.abs(w))) if n else 0.0, 1e-300)
    pos = np.where(w > tol * scale)[0]
    cols = []
    a = []
    for k in pos:
        u = U[:, k]
        # i L u = w u with w > 0  =>  L v = w w', L w' = -w v for v = Re, w' = Im
        v, x = np.sqrt(2) * u.real, np.sqrt(2) * u.imag
        cols += [v, x]
        a.append(w[k])
    Z = np.array(cols).T if cols else np.zeros((n, 0))
    k = n - Z.shape[1]
    if k:
        # kernel: orthogonal complement of the rotation planes
        P = np.eye(n) - Z @ Z.T
        ev, EV = np.linalg.eigh(P)
        Z = np.hstack([Z, EV[:, -k:]])
    # re-orthonormalise against rounding in degenerate eigenspaces
    Qz, R = np.linalg.qr(Z)
    Z = Qz * np.sign(np.diag(R))
    return Z, np.array(a)


def pfaffian_sign_4(L):
    """Sign of the Pfaffian for N = 4 (``l12 l34 - l13 l24 + l14 l23``)."""
    return float(np.sign(L[0, 1] * L[2, 3] - L[0, 2] * L[1, 3] + L[0, 3] * L[1, 2]))


@dataclass(frozen=True)
class ReachResult:
    reachable: bool
    O: Optional[np.ndarray] = None
    M: Optional[np.ndarray] = None
    angles: Optional[np.ndarray] = None
    thetas: Optional[np.ndarray] = None
    residual: float = np.nan
    reason: str = ""

    def __bool__(self):
        return self.reachable


def reachable_orthogonal(l, l2, proper=True, tol=1e-9) -> ReachResult:
    """Is ``l2 = M(O) l`` for some rotation ``O``?

    ``O L O^T = L2`` has a solution in O(N) iff L and L2 share their
    spectrum; within SO(N) a nonsingular even-N pair must also share the
    Pfaffian sign (a kernel vector absorbs a reflection otherwise).  The
    connecting ``O`` is built from real canonical bases of both matrices,
    checked through ``m_of_o(O) l = l2``, and the block angles of ``M(O)``
    are checked against :func:`template_angles` of the angles of ``O``.
    """
    l = LVector(l).l
    l2 = LVector(l2).l
    if l.size != l2.size:
        return ReachResult(False, reason="dimension mismatch")
    n = n_from_dim(l.size)
    nrm = max(np.linalg.norm(l), np.linalg.norm(l2), 1e-300)
    if abs(np.linalg.norm(l) - np.linalg.norm(l2)) > tol * nrm:
        return ReachResult(False, reason="norms differ")
    L, L2 = L_from_l(l), L_from_l(l2)
    w1 = np.linalg.eigvalsh(1j * L)
    w2 = np.linalg.eigvalsh(1j * L2)
    if np.max(np.abs(w1 - w2)) > 1e3 * tol * nrm:
        return ReachResult(False, reason="spectra differ")
    Z1, a1 = _real_canonical_basis(L, 1e3 * tol)
    Z2, a2 = _real_canonical_basis(L2, 1e3 * tol)
    if a1.size != a2.size:
        return ReachResult(False, reason="kernel dimensions differ")
    O = Z2 @ Z1.T
    if proper and np.linalg.det(O) < 0:
        if 2 * a1.size < n:
            Z2 = Z2.copy()
            Z2[:, -1] = -Z2[:, -1]
            O = Z2 @ Z1.T
        else:
            return ReachResult(False, reason="Pfaffian signs differ (no rotation connects them)")
    M = m_of_o(O, 1e-8)
    res = float(np.max(np.abs(M @ l - l2)))
    if res > 1e3 * tol * nrm:
        return ReachResult(False, O, M, residual=res, reason="construction residual too large")
    ca = canonical_angles(M)
    thetas = rotation_angles(O) if np.linalg.det(O) > 0 else None
    if thetas is not None and not _match_multiset(ca.angles, template_angles(thetas, n), 1e-6):
        return ReachResult(False, O, M, ca.angles, thetas, res,
                           reason="M(O) does not fit the canonical template")
    return ReachResult(True, O, M, ca.angles, thetas, res)


# -- N = 3 unitary cap ----------------------------------------------------------

def cap_vector(L):
    """``(|L_12|, |L_23|, |L_31|)`` and ``Phi_123`` of a 3x3 coupling matrix."""
    L = ga._check_L(L)
    if L.shape != (3, 3):
        raise ValueError("the cap characterisation is for N = 3")
    lv = np.array([abs(L[0, 1]), abs(L[1, 2]), abs(L[2, 0])])
    phi = ga.triple_sums(L).triples[(0, 1, 2)]
    return lv, float(phi)


@dataclass(frozen=True)
class CapSpec:
    """Sphere radius ``|l(0)|`` and level ``p0 = cos(Phi) l12 l23 l31`` at t = 0."""
    radius: float
    product: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        bound = (self.radius / np.sqrt(3)) ** 3
        if abs(self.product) > bound * (1 + 1e-9) + 1e-15:
            raise ValueError(f"|product| {abs(self.product):.6g} exceeds (r/sqrt3)^3 = {bound:.6g}")

    @property
    def center(self):
        return np.full(3, self.radius / np.sqrt(3))


def cap_spec_from_L(L) -> CapSpec:
    lv, phi = cap_vector(L)
    prod = float(np.prod(lv))
    c = np.cos(phi) if np.isfinite(phi) else 0.0
    return CapSpec(float(np.linalg.norm(lv)), float(c * prod))


def cap_test_n3(spec: CapSpec, L, tol=1e-9, mode="cap"):
    """Membership of a candidate in the reachable set of ``spec``.

    Both modes require ``| |l| - radius | <= tol``.  ``mode="cap"`` then asks
    for ``l12 l23 l31 >= |p0| - tol``: the point lies on a level surface
    ``x y z = p`` with ``p >= |p0|``, so some ``Phi`` with
    ``cos(Phi) x y z = p0`` exists.  ``mode="level"`` evaluates the
    candidate's own ``cos(Phi) l12 l23 l31 >= p0 - tol``.
    """
    lv, phi = cap_vector(L)
    if abs(np.linalg.norm(lv) - spec.radius) > tol:
        return False
    prod = float(np.prod(lv))
    if mode == "cap":
        return prod >= abs(spec.product) - tol
    if mode == "level":
        c = np.cos(phi) if np.isfinite(phi) else 0.0
        return c * prod >= spec.product - tol
    raise ValueError(f"unknown mode {mode!r}")


def cap_points_test(spec: CapSpec, lv, tol=1e-9):
    """Vectorised ``mode="cap"`` test on rows ``(l12, l23, l31)``."""
    lv = np.atleast_2d(np.asarray(lv, dtype=float))
    on_sphere = np.abs(np.linalg.norm(lv, axis=1) - spec.radius) <= tol
    return on_sphere & (np.prod(lv, axis=1) >= abs(spec.product) - tol)


def cap_opening(lv):
    """Largest angle between the rows ``l`` and the diagonal ``(1, 1, 1)``."""
    lv = np.atleast_2d(np.asarray(lv, dtype=float))
    nrm = np.linalg.norm(lv, axis=1)
    c = lv.sum(axis=1) / (np.sqrt(3) * np.where(nrm > 0, nrm, 1.0))
    return float(np.max(np.arccos(np.clip(c, -1.0, 1.0)))) if lv.size else 0.0


def unitary_L3(l, phi, g=1.0):
    """``L_ij = i l_ij e^{i phi_ij}`` with ``phi_12 = Phi`` and the other two zero.

    ``l = (l12, l23, l31)``; ``Phi_123`` of the result equals ``phi``.
    """
    l12, l23, l31 = (float(v) * g for v in l)
    L = np.zeros((3, 3), dtype=complex)
    L[0, 1] = 1j * l12 * np.exp(1j * phi)
    L[1, 2] = 1j * l23
    L[2, 0] = 1j * l31
    return L - L.conj().T


# -- Monte Carlo image ----------------------------------------------------------

def random_positions(n, rng, low=-2.0, high=2.0, min_gap=0.05):
    while True:
        x = np.sort(rng.uniform(low, high, n))
        if n < 2 or np.min(np.diff(x)) >= min_gap:
            return x


def random_momenta(n, rng, scale=5.0):
    return scale * rng.standard_normal(n)


SAMPLING_LAW = {"positions": "sorted uniform on [-2, 2], min gap 0.05",
                "momenta": "5 * standard normal"}


@dataclass
class PointCloud:
    traj_id: np.ndarray
    t: np.ndarray
    l: np.ndarray
    phi: np.ndarray
    n_traj: int
    failures: int = 0
    failed_ids: tuple = ()
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.t.size)

    @property
    def opening(self):
        return cap_opening(self.l)

    def spread(self):
        """Largest distance of a sample from the first sample."""
        if not len(self):
            return 0.0
        return float(np.max(np.linalg.norm(self.l - self.l[0], axis=1)))

    def to_csv(self, fh=None):
        """CSV with columns traj_id, t, l12, l23, l31, phi123 (17 digits)."""
        out = fh if fh is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["traj_id", "t", "l12", "l23", "l31", "phi123"])
        for k in range(len(self)):
            w.writerow([int(self.traj_id[k]), f"{self.t[k]:.17g}",
                        *(f"{v:.17g}" for v in self.l[k]), f"{self.phi[k]:.17g}"])
        if fh is None:
            return out.getvalue()
        return None


def _cloud_rows(L_seq):
    lv = np.empty((len(L_seq), 3))
    ph = np.empty(len(L_seq))
    for k, L in enumerate(L_seq):
        H = -1j * L
        lv[k] = (abs(L[0, 1]), abs(L[1, 2]), abs(L[2, 0]))
        ph[k] = ga.wrap_angle(np.angle(H[0, 1] * H[1, 2] * H[2, 0]))
    return lv, ph


def _one_trajectory(idx, L0, t_grid, seed, model, method, tol):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx,)))
    n = L0.shape[0]
    x0 = random_positions(n, rng)
    p0 = random_momenta(n, rng)
    if method == "exact":
        pt = fl.phase_point_from_reduced(x0, p0, L0)
        flow = fl.harmonic_flow if model == "cm-harmonic" else fl.free_flow
        # particles never cross, so ascending order keeps the labels
        Ls = [fl.reduce(flow(pt, t), t).L for t in t_grid]
        return _cloud_rows(Ls)
    y0 = np.concatenate([x0, p0, L0.real.ravel(), L0.imag.ravel()])
    params = np.array([n, rd._MODEL_CODE[model]], dtype=float)
    Y, status, t_stop, gmin, _, _ = K.dopri_cml(
        y0, t_grid, tol, n, params, 10_000_000, rd.GAP_FLOOR)
    if status != K.OK:
        return None
    n2 = n * n
    Ls = [(y[2 * n:2 * n + n2] + 1j * y[2 * n + n2:]).reshape(n, n) for y in Y]
    return _cloud_rows(Ls)


def sample_image(L0, n_traj, t_grid=None, seed=0, model="cm-harmonic", method="reduced",
                 tol=1e-10, workers=1) -> PointCloud:
    """Sample ``(|L12|, |L23|, |L31|)(t)`` over random positions and momenta.

    Trajectory ``k`` uses ``SeedSequence(seed, spawn_key=(k,))``, so the cloud
    does not depend on ``workers``.  Failed integrations are counted and
    skipped.  ``method="exact"`` reduces the closed-form matrix flow instead
    of integrating the reduced ODE.
    """
    L0 = ga._check_L(L0, "L0")
    if L0.shape != (3, 3):
        raise ValueError("sample_image records the N = 3 cap coordinates")
    if model not in ("cm-harmonic", "cm-free"):
        raise ValueError(f"model must be cm-harmonic or cm-free, got {model!r}")
    if method not in ("reduced", "exact"):
        raise ValueError(f"unknown method {method!r}")
    if t_grid is None:
        t_grid = np.linspace(0.0, 2 * np.pi, 33)
    t_grid = np.asarray(t_grid, dtype=float)

    def job(k):
        return _one_trajectory(k, L0, t_grid, seed, model, method, tol)
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(job, range(n_traj)))
    else:
        results = [job(k) for k in range(n_traj)]
    ok = [k for k, r in enumerate(results) if r is not None]
    failed = tuple(k for k, r in enumerate(results) if r is None)
    m = t_grid.size
    if ok:
        lv = np.vstack([results[k][0] for k in ok])
        ph = np.concatenate([results[k][1] for k in ok])
    else:
        lv, ph = np.zeros((0, 3)), np.zeros(0)
    ids = np.repeat(np.array(ok, dtype=int), m)
    ts = np.tile(t_grid, len(ok))
    meta = {"seed": int(seed), "n_traj": int(n_traj), "model": model, "method": method,
            "tol": float(tol), "sampling": dict(SAMPLING_LAW)}
    return PointCloud(ids, ts, lv, ph, int(n_traj), len(failed), failed, meta)
