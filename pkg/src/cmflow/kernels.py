"""Hot kernels.

Every kernel exists as an explicit-loop function compiled by numba
(suffix ``_nb``) and as a vectorised numpy function (suffix ``_np``).  The
public names at the bottom of the module point at one or the other
according to :data:`cmflow._accel.USE_NUMBA`.

The Dormand-Prince core is written once in a numba-compatible subset of
Python; the interpreted copy (``dopri_core_py``) drives numpy right-hand
sides and the compiled copy drives compiled ones.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# Model codes understood by the reduced CM right-hand sides.
CM_FREE = 0
CM_HARMONIC = 1
CM_CONSTANT_G = 2
CM_CONSTANT_G_HARMONIC = 3

# Integration status codes.
OK = 0
STEP_UNDERFLOW = 1
GAP_FLOOR = 2
MAX_STEPS = 3
NON_FINITE = 4


# -- reduced CM right-hand side -------------------------------------------------
#
# State layout (real vector of length 2n + 2n^2):
#   x[0:n] | p[n:2n] | Re L (row major) | Im L (row major)
# params = [n, model]

@njit
def cml_rhs_nb(t, y, params):
    n = int(params[0])
    model = int(params[1])
    off_r = 2 * n
    off_i = 2 * n + n * n
    dy = np.zeros_like(y)
    for i in range(n):
        dy[i] = y[n + i]
    for i in range(n):
        acc = 0.0
        for k in range(n):
            if k == i:
                continue
            d = y[i] - y[k]
            ar = y[off_r + i * n + k]
            ai = y[off_i + i * n + k]
            br = y[off_r + k * n + i]
            bi = y[off_i + k * n + i]
            acc += -2.0 * (ar * br - ai * bi) / (d * d * d)
        if model == CM_HARMONIC or model == CM_CONSTANT_G_HARMONIC:
            acc -= y[i]
        dy[n + i] = acc
    if model == CM_CONSTANT_G or model == CM_CONSTANT_G_HARMONIC:
        return dy
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            sr = 0.0
            si = 0.0
            for k in range(n):
                if k == i or k == j:
                    continue
                dik = y[i] - y[k]
                djk = y[j] - y[k]
                w = 1.0 / (dik * dik) - 1.0 / (djk * djk)
                ar = y[off_r + i * n + k]
                ai = y[off_i + i * n + k]
                br = y[off_r + k * n + j]
                bi = y[off_i + k * n + j]
                sr += (ar * br - ai * bi) * w
                si += (ar * bi + ai * br) * w
            dy[off_r + i * n + j] = sr
            dy[off_i + i * n + j] = si
    return dy


def cml_rhs_np(t, y, params):
    n = int(params[0])
    model = int(params[1])
    x = y[:n]
    L = (y[2 * n:2 * n + n * n] + 1j * y[2 * n + n * n:]).reshape(n, n)
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, np.inf)
    inv2 = 1.0 / d ** 2
    dp = -2.0 * np.real(np.sum(L * L.T / d ** 3, axis=1))
    if model == CM_HARMONIC or model == CM_CONSTANT_G_HARMONIC:
        dp = dp - x
    dy = np.empty_like(y)
    dy[:n] = y[n:2 * n]
    dy[n:2 * n] = dp
    if model == CM_CONSTANT_G or model == CM_CONSTANT_G_HARMONIC:
        dy[2 * n:] = 0.0
        return dy
    A = L * inv2
    dL = A @ L - L @ A
    dy[2 * n:2 * n + n * n] = dL.real.ravel()
    dy[2 * n + n * n:] = dL.imag.ravel()
    return dy


# -- Dormand-Prince 5(4) --------------------------------------------------------

def make_dopri(rhs):
    """Bind a right-hand side ``rhs(t, y, params)`` into a Dormand-Prince driver.

    The returned function compiles under numba when ``rhs`` is itself a
    compiled function.
    """
    def dopri_core(y0, t_out, tol, n_pos, params, max_steps, gap_floor):
        """Adaptive RK 5(4) from ``t_out[0]`` through every time in ``t_out``.

        Steps are clipped to land on output times.  When ``n_pos > 0`` the first
        ``n_pos`` state entries are ordered positions and the next ``n_pos``
        their momenta: the step is capped by ``0.05 * min_gap / max(|p|, 1)``
        and a gap below ``gap_floor`` stops the run.

        Returns ``(Y, status, t_stop, min_gap, n_accepted, n_rejected)``.
        """
        c2 = 1.0 / 5.0
        c3 = 3.0 / 10.0
        c4 = 4.0 / 5.0
        c5 = 8.0 / 9.0
        a21 = 1.0 / 5.0
        a31 = 3.0 / 40.0
        a32 = 9.0 / 40.0
        a41 = 44.0 / 45.0
        a42 = -56.0 / 15.0
        a43 = 32.0 / 9.0
        a51 = 19372.0 / 6561.0
        a52 = -25360.0 / 2187.0
        a53 = 64448.0 / 6561.0
        a54 = -212.0 / 729.0
        a61 = 9017.0 / 3168.0
        a62 = -355.0 / 33.0
        a63 = 46732.0 / 5247.0
        a64 = 49.0 / 176.0
        a65 = -5103.0 / 18656.0
        a71 = 35.0 / 384.0
        a73 = 500.0 / 1113.0
        a74 = 125.0 / 192.0
        a75 = -2187.0 / 6784.0
        a76 = 11.0 / 84.0
        e1 = 71.0 / 57600.0
        e3 = -71.0 / 16695.0
        e4 = 71.0 / 1920.0
        e5 = -17253.0 / 339200.0
        e6 = 22.0 / 525.0
        e7 = -1.0 / 40.0

        m = y0.shape[0]
        n_out = t_out.shape[0]
        Y = np.zeros((n_out, m))
        y = y0.copy()
        t = t_out[0]
        Y[0, :] = y
        status = 0
        min_gap = np.inf
        n_acc = 0
        n_rej = 0

        k1 = rhs(t, y, params)
        # initial step from the scaled derivative size
        d0 = 0.0
        d1 = 0.0
        for i in range(m):
            sc = tol + tol * abs(y[i])
            d0 += (y[i] / sc) ** 2
            d1 += (k1[i] / sc) ** 2
        d0 = np.sqrt(d0 / m)
        d1 = np.sqrt(d1 / m)
        if d0 < 1e-5 or d1 < 1e-5:
            h = 1e-6
        else:
            h = 0.01 * d0 / d1
        span = abs(t_out[n_out - 1] - t_out[0])
        if span > 0.0 and h > span:
            h = span
        facold = 1e-4
        iout = 1
        while iout < n_out:
            if n_acc + n_rej >= max_steps:
                status = 3
                break
            if n_pos > 0:
                gap = np.inf
                vmax = 1.0
                for i in range(n_pos - 1):
                    g = y[i + 1] - y[i]
                    if g < gap:
                        gap = g
                for i in range(n_pos):
                    v = abs(y[n_pos + i])
                    if v > vmax:
                        vmax = v
                if gap < min_gap:
                    min_gap = gap
                if gap < gap_floor:
                    status = 2
                    break
                hcap = 0.05 * gap / vmax
                if h > hcap:
                    h = hcap
            t_next = t_out[iout]
            clipped = False
            if t + h >= t_next:
                h_keep = h
                h = t_next - t
                clipped = True
            if h < 1e-14 * max(1.0, abs(t)):
                status = 1
                break
            k2 = rhs(t + c2 * h, y + h * (a21 * k1), params)
            k3 = rhs(t + c3 * h, y + h * (a31 * k1 + a32 * k2), params)
            k4 = rhs(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3), params)
            k5 = rhs(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), params)
            k6 = rhs(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), params)
            y_new = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6)
            k7 = rhs(t + h, y_new, params)
            err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7)
            err = 0.0
            finite = True
            for i in range(m):
                if not np.isfinite(y_new[i]):
                    finite = False
                sc = tol + tol * max(abs(y[i]), abs(y_new[i]))
                err += (err_vec[i] / sc) ** 2
            if not finite:
                status = 4
                break
            err = np.sqrt(err / m)
            fac11 = err ** 0.17
            if err <= 1.0:
                fac = fac11 / facold ** 0.04
                fac = max(0.1, min(5.0, fac / 0.9))
                h_new = h / fac
                facold = max(err, 1e-4)
                t = t + h
                y = y_new
                k1 = k7
                n_acc += 1
                if clipped:
                    t = t_next
                    Y[iout, :] = y
                    iout += 1
                    if h_new < h_keep:
                        h = h_new
                    else:
                        h = h_keep
                else:
                    h = h_new
            else:
                n_rej += 1
                h = h / min(5.0, fac11 / 0.9)
        return Y, status, t, min_gap, n_acc, n_rej
    return dopri_core

def dopri_core_py(rhs, y0, t_out, tol, n_pos, params, max_steps, gap_floor):
    """Interpreted driver for any Python right-hand side."""
    return make_dopri(rhs)(y0, t_out, tol, n_pos, params, max_steps, gap_floor)


# closures over dispatchers do not hit numba's disk cache; compile once per process
dopri_cml_nb = njit(make_dopri(cml_rhs_nb), cache=False)
dopri_cml_np = make_dopri(cml_rhs_np)


# -- sign-pattern matrices ------------------------------------------------------

def free_pairs(n):
    """Index pairs (i, j), i < j, not in the gauge-fixed first row."""
    return [(i, j) for i in range(1, n) for j in range(i + 1, n)]


@njit
def sign_matrices_nb(codes, n):
    B = codes.shape[0]
    S = np.zeros((B, n, n))
    for b in range(B):
        c = codes[b]
        for j in range(1, n):
            S[b, 0, j] = 1.0
            S[b, j, 0] = 1.0
        bit = 0
        for i in range(1, n):
            for j in range(i + 1, n):
                s = 1.0 - 2.0 * ((c >> bit) & 1)
                S[b, i, j] = s
                S[b, j, i] = s
                bit += 1
    return S


def sign_matrices_np(codes, n):
    codes = np.asarray(codes, dtype=np.int64)
    pairs = free_pairs(n)
    S = np.zeros((codes.shape[0], n, n))
    S[:, 0, 1:] = 1.0
    S[:, 1:, 0] = 1.0
    if pairs:
        I, J = np.array(pairs).T
        bits = (codes[:, None] >> np.arange(len(pairs))[None, :]) & 1
        s = 1.0 - 2.0 * bits
        S[:, I, J] = s
        S[:, J, I] = s
    return S


@njit
def cholesky_rank_batch_nb(G, rtol):
    B = G.shape[0]
    n = G.shape[1]
    ranks = np.zeros(B, dtype=np.int64)
    A = np.empty((n, n))
    for b in range(B):
        tr = 0.0
        for i in range(n):
            for j in range(n):
                A[i, j] = G[b, i, j]
            tr += G[b, i, i]
        tol = rtol * max(tr, 1e-300)
        done = np.zeros(n, dtype=np.bool_)
        r = 0
        for k in range(n):
            jmax = -1
            dmax = -np.inf
            for j in range(n):
                if not done[j] and A[j, j] > dmax:
                    dmax = A[j, j]
                    jmax = j
            if dmax <= tol:
                break
            done[jmax] = True
            piv = A[jmax, jmax]
            row = A[jmax, :].copy()
            for i in range(n):
                ci = row[i]
                if ci == 0.0:
                    continue
                for j in range(n):
                    A[i, j] -= ci * row[j] / piv
            r += 1
        ranks[b] = r
    return ranks


def cholesky_rank_batch_np(G, rtol):
    A = np.array(G, dtype=float)
    B, n, _ = A.shape
    tol = rtol * np.maximum(np.trace(A, axis1=1, axis2=2), 1e-300)
    done = np.zeros((B, n), dtype=bool)
    active = np.ones(B, dtype=bool)
    ranks = np.zeros(B, dtype=np.int64)
    rows = np.arange(B)
    for _ in range(n):
        d = np.where(done, -np.inf, np.diagonal(A, axis1=1, axis2=2))
        j = np.argmax(d, axis=1)
        piv = d[rows, j]
        ok = active & (piv > tol)
        active = ok
        if not ok.any():
            break
        ranks += ok
        done[rows[ok], j[ok]] = True
        col = A[rows, :, j]
        safe = np.where(ok, piv, 1.0)
        upd = col[:, :, None] * col[:, None, :] / safe[:, None, None]
        A -= np.where(ok[:, None, None], upd, 0.0)
    return ranks


if USE_NUMBA:
    cml_rhs = cml_rhs_nb
    dopri_cml = dopri_cml_nb
    sign_matrices = sign_matrices_nb
    cholesky_rank_batch = cholesky_rank_batch_nb
else:
    cml_rhs = cml_rhs_np
    dopri_cml = dopri_cml_np
    sign_matrices = sign_matrices_np
    cholesky_rank_batch = cholesky_rank_batch_np
