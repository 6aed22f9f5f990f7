"""Reduced dynamics: right-hand sides, adaptive integration and invariant
monitoring for the (x, p, L), vectorial (x, p, E, F) and extended
(x, p, L, Omega) systems, plus the short-time Taylor-gap estimate.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, NamedTuple, Optional, Sequence
import time as _time

import numpy as np

from . import kernels as K
from . import matcore as mc

# "cm-constant-g-harmonic" is the frozen-coupling model in the harmonic trap
MODELS = ("cm-free", "cm-harmonic", "cm-constant-g", "cm-constant-g-harmonic")
_MODEL_CODE = {"cm-free": K.CM_FREE, "cm-harmonic": K.CM_HARMONIC,
               "cm-constant-g": K.CM_CONSTANT_G,
               "cm-constant-g-harmonic": K.CM_CONSTANT_G_HARMONIC}
TRAPPED = ("cm-harmonic", "cm-constant-g-harmonic")

GAP_FLOOR = 1e-9
DRIFT_FACTOR = 1e3


class IntegrationError(RuntimeError):
    """Integration stopped early.  ``t`` and ``min_gap`` locate the failure."""

    def __init__(self, msg, t=None, min_gap=None, partial=None):
        super().__init__(msg)
        self.t = t
        self.min_gap = min_gap
        self.partial = partial


class SingularityError(IntegrationError):
    """Two positions came closer than the gap floor."""


class StepUnderflowError(IntegrationError):
    """Step size collapsed below machine resolution of the time axis."""


class InvariantDriftError(IntegrationError):
    """A conserved quantity drifted beyond ``1e3 * tol``."""


# -- states ---------------------------------------------------------------------

def _check_positions(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise mc.ClassViolation("positions must be a vector")
    if len(x) > 1 and np.min(np.diff(x)) <= 0:
        raise mc.ClassViolation("positions must be strictly increasing")
    return x


@dataclass(frozen=True)
class ReducedState:
    x: np.ndarray
    p: np.ndarray
    L: np.ndarray
    model: str = "cm-free"

    def __post_init__(self):
        x = _check_positions(self.x)
        p = np.asarray(self.p, dtype=float)
        L = np.asarray(self.L, dtype=complex)
        n = len(x)
        if p.shape != (n,) or L.shape != (n, n):
            raise mc.ClassViolation("x, p, L dimensions disagree")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        scale = 1.0 + float(np.max(np.abs(L))) if n else 1.0
        if n and np.max(np.abs(np.diag(L))) > 1e-12 * scale:
            raise mc.ClassViolation("L must have a zero diagonal")
        if n and np.max(np.abs(L + L.conj().T)) > 1e-10 * scale:
            raise mc.ClassViolation("L must be anti-Hermitian")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "L", L)

    @property
    def n(self):
        return len(self.x)

    @property
    def V(self):
        return lax_v(self.x, self.p, self.L)


@dataclass(frozen=True)
class VectorialState:
    """Positions, momenta and the vectors: ``E`` is d x N, ``F`` is N x d."""
    x: np.ndarray
    p: np.ndarray
    E: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        x = _check_positions(self.x)
        E = np.asarray(self.E, dtype=complex)
        F = np.asarray(self.F, dtype=complex)
        n = len(x)
        if E.ndim != 2 or E.shape[1] != n or F.shape != (n, E.shape[0]):
            raise mc.ClassViolation(f"E {E.shape} / F {F.shape} incompatible with N={n}")
        Phi = F @ E
        if not mc.is_hermitian(Phi, 1e-10):
            raise mc.ClassViolation("F E must be Hermitian")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "F", F)

    @property
    def n(self):
        return len(self.x)

    @property
    def Phi(self):
        return self.F @ self.E

    @property
    def calL(self):
        """Induced coupling matrix ``i (f_i|e_j)``."""
        return 1j * self.Phi


@dataclass(frozen=True)
class ExtendedReducedState:
    x: np.ndarray
    p: np.ndarray
    L: np.ndarray
    Omega: np.ndarray
    xi: float = 1.0

    def __post_init__(self):
        x = _check_positions(self.x)
        L = np.asarray(self.L, dtype=complex)
        Om = np.asarray(self.Omega, dtype=complex)
        n = len(x)
        if L.shape != (n, n) or Om.shape != (n, n):
            raise mc.ClassViolation("x, L, Omega dimensions disagree")
        scale = 1.0 + float(np.max(np.abs(L)))
        if np.max(np.abs(L + L.conj().T)) > 1e-10 * scale or np.max(np.abs(np.diag(L))) > 1e-12 * scale:
            raise mc.ClassViolation("L must be anti-Hermitian with zero diagonal")
        if not mc.is_hermitian(Om, 1e-10):
            raise mc.ClassViolation("Omega must be Hermitian")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "Omega", Om)
        object.__setattr__(self, "xi", float(self.xi))

    @property
    def n(self):
        return len(self.x)

    @property
    def V(self):
        return lax_v(self.x, self.p, self.L)

    @property
    def M(self):
        return self.L - 1j * self.Omega


@dataclass(frozen=True)
class ElementSumState:
    """Matrix state of the element-sum model (``harmonic`` adds the X term)."""
    X: np.ndarray
    Y: np.ndarray
    harmonic: bool = True

    def __post_init__(self):
        X = mc.check_hermitian(self.X, mc.MatrixClass.HERMITIAN, "X", rtol=1e-10)
        Y = mc.check_hermitian(self.Y, mc.MatrixClass.HERMITIAN, "Y", rtol=1e-10)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)


def _raw(cls, **kw):
    # construct without validation; used for integrator output
    obj = object.__new__(cls)
    for k, v in kw.items():
        object.__setattr__(obj, k, v)
    return obj


# -- helpers --------------------------------------------------------------------

def _inv_pow(x, k):
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, np.inf)
    return 1.0 / d ** k


def lax_v(x, p, L):
    """``V = diag(p) + L_ij / (x_i - x_j)`` off the diagonal."""
    V = np.asarray(L, dtype=complex) * _inv_pow(np.asarray(x, dtype=float), 1)
    V[np.diag_indices(len(x))] = p
    return V


def hamiltonian(s):
    """Energy of a reduced, vectorial or extended state."""
    if isinstance(s, ReducedState):
        W = _inv_pow(s.x, 2)
        H = 0.5 * np.sum(s.p ** 2) + 0.5 * np.sum(np.abs(s.L) ** 2 * W)
        if s.model in TRAPPED:
            H += 0.5 * np.sum(s.x ** 2)
        return float(H)
    if isinstance(s, VectorialState):
        Phi = s.Phi
        W = _inv_pow(s.x, 2)
        return float(0.5 * np.sum(s.p ** 2) + 0.5 * np.real(np.sum(Phi * Phi.T * W)))
    if isinstance(s, ExtendedReducedState):
        B = s.V + s.xi * s.Omega
        return float(0.5 * np.real(np.trace(B @ B)))
    if isinstance(s, ElementSumState):
        H = 0.5 * np.real(np.sum(s.Y @ s.Y))
        if s.harmonic:
            H += 0.5 * np.real(np.sum(s.X @ s.X))
        return float(H)
    raise TypeError(f"no Hamiltonian for {type(s).__name__}")


# -- packing --------------------------------------------------------------------

def _cpack(*mats):
    return np.concatenate([np.concatenate([m.real.ravel(), m.imag.ravel()]) for m in mats])


def _cunpack(y, shape):
    k = shape[0] * shape[1]
    return (y[:k] + 1j * y[k:2 * k]).reshape(shape), y[2 * k:]


# -- right-hand sides -----------------------------------------------------------

class ReducedDeriv(NamedTuple):
    x: np.ndarray
    p: np.ndarray
    L: np.ndarray


class VectorialDeriv(NamedTuple):
    x: np.ndarray
    p: np.ndarray
    E: np.ndarray
    F: np.ndarray


class ExtendedDeriv(NamedTuple):
    x: np.ndarray
    p: np.ndarray
    L: np.ndarray
    Omega: np.ndarray


class ElementSumDeriv(NamedTuple):
    X: np.ndarray
    Y: np.ndarray


def _min_gap(x):
    return float(np.min(np.diff(x))) if len(x) > 1 else np.inf


def _check_gap(x):
    g = _min_gap(x)
    if g < GAP_FLOOR:
        raise SingularityError(f"positions closer than {GAP_FLOOR:g} (gap {g:.3e})", min_gap=g)


def _pack_reduced(s):
    return np.concatenate([s.x, s.p, s.L.real.ravel(), s.L.imag.ravel()])


def _unpack_reduced(y, n, model):
    L, _ = _cunpack(y[2 * n:], (n, n))
    return _raw(ReducedState, x=y[:n].copy(), p=y[n:2 * n].copy(), L=L, model=model)


def deriv_cml(s: ReducedState) -> ReducedDeriv:
    """Time derivative of ``(x, p, L)``.

    ``p_i' = sum_k -2 L_ik L_ki / x_ik^3`` (minus ``x_i`` for the harmonic
    model) and ``L_ij' = sum_k L_ik L_kj (1/x_ik^2 - 1/x_jk^2)``; for the
    constant-g model ``L`` is frozen.
    """
    _check_gap(s.x)
    n = s.n
    dy = K.cml_rhs(0.0, _pack_reduced(s), np.array([n, _MODEL_CODE[s.model]], dtype=float))
    dL, _ = _cunpack(dy[2 * n:], (n, n))
    return ReducedDeriv(dy[:n], dy[n:2 * n], dL)


def deriv_vectorial(s: VectorialState) -> VectorialDeriv:
    """``|e_i)' = -i sum_k |e_k)(f_k|e_i)/x_ik^2``, ``(f_i|' = i sum_k (f_i|e_k)(f_k|/x_ik^2``."""
    _check_gap(s.x)
    Phi = s.Phi
    W = _inv_pow(s.x, 2)
    B = Phi * W
    dp = 2.0 * np.real(np.sum(Phi * Phi.T * _inv_pow(s.x, 3), axis=1))
    dE = -1j * (s.E @ B)
    dF = 1j * (B @ s.F)
    return VectorialDeriv(s.p.copy(), dp, dE, dF)


def deriv_extended(s: ExtendedReducedState) -> ExtendedDeriv:
    """Eigenframe form of the ``Tr((Y + xi Phi)^2)/2`` flow.

    ``A_ij = (V_ij + xi Omega_ij) / x_ij`` keeps D diagonal; then
    ``x' = p + xi diag(Omega)``, ``p' = diag[A, V]``,
    ``L' = [A, L] - xi [V, Omega]``, ``Omega' = [A + i xi V, Omega]``.
    """
    _check_gap(s.x)
    xi = s.xi
    V = s.V
    A = (V + xi * s.Omega) * _inv_pow(s.x, 1)
    AV = A @ V - V @ A
    dx = s.p + xi * np.real(np.diag(s.Omega))
    dL = A @ s.L - s.L @ A - xi * (V @ s.Omega - s.Omega @ V)
    G = A + 1j * xi * V
    dOm = G @ s.Omega - s.Omega @ G
    return ExtendedDeriv(dx, np.real(np.diag(AV)), dL, dOm)


def deriv_elementsum(s: ElementSumState) -> ElementSumDeriv:
    """``X' = {M, Y}/2`` and ``Y' = -{M, X}/2`` (zero when not harmonic)."""
    n = s.X.shape[0]
    M = np.ones((n, n))
    dX = 0.5 * (M @ s.Y + s.Y @ M)
    dY = -0.5 * (M @ s.X + s.X @ M) if s.harmonic else np.zeros_like(s.Y)
    return ElementSumDeriv(dX, dY)


# -- invariants -----------------------------------------------------------------

def _tr(M):
    return complex(np.trace(M))


def invariants_reduced(s: ReducedState) -> Dict[str, float]:
    V = s.V
    L = s.L
    L2 = L @ L
    V2 = V @ V
    nL = np.linalg.norm(L)
    nV = np.linalg.norm(V)
    return {
        "H": hamiltonian(s),
        "trL2": _tr(L2).real,
        "trL4": _tr(L2 @ L2).real,
        "trV2": _tr(V2).real,
        "trV3": _tr(V2 @ V).real,
        "trLV": abs(_tr(L @ V)) / max(nL * nV, 1e-300),
        "trL2V": _tr(L2 @ V).real,
        "herm_residual": float(np.max(np.abs(L + L.conj().T))),
        "diag_residual": float(np.max(np.abs(np.diag(L)))),
        "min_gap": _min_gap(s.x),
    }


_CONSERVED_REDUCED = {
    "cm-free": ("H", "trL2", "trL4", "trV2", "trV3", "trLV", "trL2V"),
    "cm-harmonic": ("H", "trL2", "trL4", "trLV"),
    "cm-constant-g": ("H", "trL2"),
    "cm-constant-g-harmonic": ("H", "trL2"),
}


def invariants_vectorial(s: VectorialState) -> Dict[str, float]:
    Phi = s.Phi
    out = {"H": hamiltonian(s),
           "herm_residual": mc.hermiticity_residual(Phi),
           "min_gap": _min_gap(s.x)}
    for i, c in enumerate(np.real(np.diag(Phi))):
        out[f"c{i}"] = float(c)
    return out


def invariants_extended(s: ExtendedReducedState) -> Dict[str, float]:
    M = s.M
    V = s.V
    M2 = M @ M
    return {
        "H": hamiltonian(s),
        "trV2": _tr(V @ V).real,
        "trM2": _tr(M2).real,
        "trM2_imag": _tr(M2).imag,
        "trM3_re": _tr(M2 @ M).real,
        "trM3_im": _tr(M2 @ M).imag,
        "trMV_re": _tr(M @ V).real,
        "trMV_im": _tr(M @ V).imag,
        "herm_residual": mc.hermiticity_residual(s.Omega),
        "min_gap": _min_gap(s.x),
    }


def invariants_elementsum(s: ElementSumState) -> Dict[str, float]:
    return {"H": hamiltonian(s),
            "herm_residual": max(mc.hermiticity_residual(s.X), mc.hermiticity_residual(s.Y))}


# -- ledger ---------------------------------------------------------------------

@dataclass
class InvariantLedger:
    """Time series of monitored quantities sampled on the output grid."""
    t: np.ndarray
    series: Dict[str, np.ndarray]
    conserved: tuple = ()

    def __post_init__(self):
        if len(self.t) > 1 and np.any(np.diff(self.t) < 0):
            raise ValueError("ledger time stamps must be monotone")

    def __getitem__(self, name):
        return self.series[name]

    def drift(self, name):
        """``max |q(t) - q(0)| / |q(0)|``, or the absolute change when
        ``|q(0)| < 1e-12`` (quantities that vanish identically)."""
        q = self.series[name]
        scale = abs(q[0])
        d = float(np.max(np.abs(q - q[0])))
        return d / scale if scale >= 1e-12 else d

    def drift_summary(self):
        return {k: self.drift(k) for k in self.conserved}

    def max_drift(self):
        s = self.drift_summary()
        return max(s.values()) if s else 0.0


# -- integration ----------------------------------------------------------------

@dataclass
class _Adapter:
    pack: Callable
    unpack: Callable
    rhs: Callable
    n_pos: int
    params: np.ndarray
    invariants: Callable
    conserved: tuple
    fast_rhs: Optional[Callable] = None


def _adapter(deriv, s0):
    if isinstance(s0, ReducedState) and deriv in (deriv_cml, None):
        n, model = s0.n, s0.model
        return _Adapter(
            _pack_reduced, lambda y: _unpack_reduced(y, n, model), K.cml_rhs_np, n,
            np.array([n, _MODEL_CODE[model]], dtype=float), invariants_reduced,
            _CONSERVED_REDUCED[model], K.cml_rhs_nb if K.USE_NUMBA else None)
    n_pos = 0 if isinstance(s0, ElementSumState) else s0.n
    if isinstance(s0, VectorialState):
        n, d = s0.n, s0.E.shape[0]

        def pack(s):
            return np.concatenate([s.x, s.p, _cpack(s.E, s.F)])

        def unpack(y):
            E, rest = _cunpack(y[2 * n:], (d, n))
            F, _ = _cunpack(rest, (n, d))
            return _raw(VectorialState, x=y[:n].copy(), p=y[n:2 * n].copy(), E=E, F=F)
        cons = ("H",) + tuple(f"c{i}" for i in range(n))
    elif isinstance(s0, ExtendedReducedState):
        n, xi = s0.n, s0.xi

        def pack(s):
            return np.concatenate([s.x, s.p, _cpack(s.L, s.Omega)])

        def unpack(y):
            L, rest = _cunpack(y[2 * n:], (n, n))
            Om, _ = _cunpack(rest, (n, n))
            return _raw(ExtendedReducedState, x=y[:n].copy(), p=y[n:2 * n].copy(), L=L,
                        Omega=Om, xi=xi)
        cons = ("H", "trV2", "trM2", "trM3_re", "trM3_im", "trMV_re", "trMV_im")
    elif isinstance(s0, ElementSumState):
        n, harm = s0.X.shape[0], s0.harmonic

        def pack(s):
            return _cpack(s.X, s.Y)

        def unpack(y):
            X, rest = _cunpack(y, (n, n))
            Y, _ = _cunpack(rest, (n, n))
            return _raw(ElementSumState, X=X, Y=Y, harmonic=harm)
        cons = ("H",)
    elif isinstance(s0, ReducedState):
        n = s0.n
        model = s0.model

        def pack(s):
            return _pack_reduced(s)

        def unpack(y):
            return _unpack_reduced(y, n, model)
        cons = _CONSERVED_REDUCED[model]
    else:
        raise TypeError(f"cannot integrate {type(s0).__name__}")
    if deriv is None:
        deriv = {VectorialState: deriv_vectorial, ExtendedReducedState: deriv_extended,
                 ElementSumState: deriv_elementsum, ReducedState: deriv_cml}[type(s0)]
    inv = {VectorialState: invariants_vectorial, ExtendedReducedState: invariants_extended,
           ElementSumState: invariants_elementsum, ReducedState: invariants_reduced}[type(s0)]

    def rhs(t, y, params):
        return pack(deriv(unpack(y)))
    return _Adapter(pack, unpack, rhs, n_pos, np.zeros(1), inv, cons)


@dataclass
class Trajectory:
    t: np.ndarray
    states: list
    ledger: InvariantLedger
    stats: dict = field(default_factory=dict)

    @property
    def x(self):
        return np.array([s.x for s in self.states])

    @property
    def p(self):
        return np.array([s.p for s in self.states])

    @property
    def L(self):
        return np.array([s.L for s in self.states])

    def __len__(self):
        return len(self.states)


def integrate(deriv, s0, t_end=None, tol=1e-10, t_eval=None, n_out=101,
              check_drift=True, max_steps=10_000_000):
    """Adaptive Dormand-Prince 5(4) integration of a reduced state.

    Parameters
    ----------
    deriv : callable or None
        One of :func:`deriv_cml`, :func:`deriv_vectorial`,
        :func:`deriv_extended`, :func:`deriv_elementsum`, or None to pick
        by the state type.  Custom callables map a state to a derivative
        tuple with the same fields.
    s0 : state
    t_end : float
        Final time; ignored when ``t_eval`` is given.
    tol : float
        Absolute and relative per-step error target.
    t_eval : array, optional
        Increasing output times starting at 0.  Default ``n_out`` points
        on ``[0, t_end]``.
    check_drift : bool
        Raise :class:`InvariantDriftError` if a conserved quantity drifts
        by more than ``1e3 * tol``.
    """
    if t_eval is None:
        if t_end is None:
            raise ValueError("give t_end or t_eval")
        t_eval = np.linspace(0.0, float(t_end), int(n_out))
    t_eval = np.asarray(t_eval, dtype=float)
    if np.any(np.diff(t_eval) <= 0):
        raise ValueError("t_eval must be strictly increasing")
    ad = _adapter(deriv, s0)
    y0 = ad.pack(s0)
    w0 = _time.perf_counter()
    if ad.fast_rhs is not None:
        Y, status, t_stop, min_gap, n_acc, n_rej = K.dopri_cml_nb(
            y0, t_eval, tol, ad.n_pos, ad.params, max_steps, GAP_FLOOR)
    else:
        Y, status, t_stop, min_gap, n_acc, n_rej = K.dopri_core_py(
            ad.rhs, y0, t_eval, tol, ad.n_pos, ad.params, max_steps, GAP_FLOOR)
    wall = _time.perf_counter() - w0
    stats = {"status": int(status), "n_accepted": int(n_acc), "n_rejected": int(n_rej),
             "min_gap": float(min_gap), "t_stop": float(t_stop), "wall_time": wall,
             "backend": "numba" if ad.fast_rhs is not None else "numpy"}
    if status != K.OK:
        msg = {K.STEP_UNDERFLOW: "step size underflow",
               K.GAP_FLOOR: "minimum gap below floor",
               K.MAX_STEPS: "maximum number of steps exceeded",
               K.NON_FINITE: "non-finite state"}[int(status)]
        exc = {K.STEP_UNDERFLOW: StepUnderflowError, K.GAP_FLOOR: SingularityError}.get(
            int(status), IntegrationError)
        raise exc(f"{msg} at t={t_stop:.6g} (min gap {min_gap:.3e})", t=float(t_stop),
                  min_gap=float(min_gap), partial=stats)
    states = [ad.unpack(y) for y in Y]
    rows = [ad.invariants(s) for s in states]
    series = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    ledger = InvariantLedger(t_eval.copy(), series, ad.conserved)
    traj = Trajectory(t_eval.copy(), states, ledger, stats)
    if check_drift:
        bad = {k: v for k, v in ledger.drift_summary().items() if v > DRIFT_FACTOR * tol}
        if bad:
            worst = max(bad, key=bad.get)
            err = InvariantDriftError(
                f"invariant {worst} drifted by {bad[worst]:.3e} > {DRIFT_FACTOR * tol:.1e}",
                t=float(t_eval[-1]), min_gap=float(min_gap), partial=stats)
            err.trajectory = traj
            raise err
    return traj


def integrate_many(deriv, states: Sequence, t_end=None, tol=1e-10, workers=None, **kw):
    """Integrate independent states concurrently; results keep input order."""
    if workers == 1 or len(states) <= 1:
        return [integrate(deriv, s, t_end, tol, **kw) for s in states]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(integrate, deriv, s, t_end, tol, **kw) for s in states]
        return [f.result() for f in futs]


# -- short-time analysis --------------------------------------------------------

def dLij_abs_rate(s: ReducedState) -> np.ndarray:
    """``d|L_ij|^2/dt`` under the L-dynamics; identically zero for
    purely imaginary symmetric L."""
    n = s.n
    dy = K.cml_rhs(0.0, _pack_reduced(s), np.array([n, K.CM_FREE], dtype=float))
    dL, _ = _cunpack(dy[2 * n:], (n, n))
    return 2.0 * np.real(np.conj(s.L) * dL)


def taylor_gap(x0, p0, L0, t):
    """Leading-order difference between constant-|L| and L-dynamics runs.

    Returns ``(dx, dp)`` predictions of ``x_g - x_L`` and ``p_g - p_L``:
    ``-(t^3/3) sum_k x_ik^-3 d|L_ik|^2/dt`` and ``-t^2`` times the same sum.
    """
    s = ReducedState(x0, p0, L0)
    rate = dLij_abs_rate(s)
    S = np.sum(rate * _inv_pow(s.x, 3), axis=1)
    return -(t ** 3 / 3.0) * S, -(t ** 2) * S


def extended_from_matrices(X, Y, Phi, xi=1.0) -> ExtendedReducedState:
    """Eigenframe state of ``(X, Y, Phi)``: ``x`` eigenvalues of X (ascending),
    ``L = [diag(x), V]`` with ``V = U Y U^dagger`` and ``Omega = U Phi U^dagger``."""
    x, W = np.linalg.eigh(np.asarray(X))
    U = W.conj().T
    V = U @ np.asarray(Y) @ W
    Om = U @ np.asarray(Phi) @ W
    L = (x[:, None] - x[None, :]) * V
    L = 0.5 * (L - L.conj().T)
    return ExtendedReducedState(x, np.real(np.diag(V)), L, 0.5 * (Om + Om.conj().T), xi)
