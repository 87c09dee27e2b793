# Fused sequential selective-scan kernels.  Same contract as _scan_py.ssm_forward /
# ssm_backward with chunk=None.  expm1(delta * A) is precomputed by numpy in float64
# (its vectorised expm1 is far cheaper than per-element libm calls); the loops here
# carry the recurrence state in double.
import numpy as np

from libc.math cimport fabs
from libc.stdlib cimport calloc, free

ctypedef fused real:
    float
    double

cdef double SMALL_A = 1e-8


cdef inline double _psi(double z, double a, double em) noexcept nogil:
    # (z e^z - expm1 z) / z^2
    if fabs(z) < 1e-4:
        return 0.5 + z * (1.0 / 3.0 + z * 0.125)
    return (z * a - em) / (z * z)


def _forward(real[:, :, ::1] u, real[:, :, ::1] delta, real[:, ::1] A,
             real[:, :, ::1] Bm, real[:, :, ::1] Cm, double[:, :, :, ::1] em,
             real[:, :, :, ::1] h, real[:, :, ::1] y):
    cdef Py_ssize_t Bt = u.shape[0], L = u.shape[1], E = u.shape[2], N = A.shape[1]
    cdef Py_ssize_t b, t, e, n, k
    cdef double d, x, acc, Aen, emv, bb, hv
    cdef double *hs = <double *> calloc(E * N, sizeof(double))
    if hs == NULL:
        raise MemoryError()
    try:
        with nogil:
            for b in range(Bt):
                for k in range(E * N):
                    hs[k] = 0.0
                for t in range(L):
                    for e in range(E):
                        d = delta[b, t, e]
                        x = u[b, t, e]
                        acc = 0.0
                        for n in range(N):
                            Aen = A[e, n]
                            emv = em[b, t, e, n]
                            if fabs(Aen) < SMALL_A:
                                bb = d * Bm[b, t, n]
                            else:
                                bb = emv / Aen * Bm[b, t, n]
                            k = e * N + n
                            hv = (emv + 1.0) * hs[k] + bb * x
                            hs[k] = hv
                            h[b, t, e, n] = <real> hv
                            acc = acc + Cm[b, t, n] * hv
                        y[b, t, e] = <real> acc
    finally:
        free(hs)


def _backward(real[:, :, ::1] u, real[:, :, ::1] delta, real[:, ::1] A,
              real[:, :, ::1] Bm, real[:, :, ::1] Cm, double[:, :, :, ::1] em,
              real[:, :, :, ::1] h, real[:, :, ::1] dy,
              real[:, :, ::1] du, real[:, :, ::1] ddelta, double[:, ::1] dA,
              real[:, :, ::1] dBm, real[:, :, ::1] dCm):
    cdef Py_ssize_t Bt = u.shape[0], L = u.shape[1], E = u.shape[2], N = A.shape[1]
    cdef Py_ssize_t b, t, e, n, k, tt
    cdef double d, x, g, dyv, Aen, z, a, emv, hp, da, dbb, bbar, db_dd, db_dA, db_dB
    cdef double dd_acc, du_acc, Bv, Cv
    cdef double *gs = <double *> calloc(E * N, sizeof(double))
    cdef double *dBt = <double *> calloc(N, sizeof(double))
    cdef double *dCt = <double *> calloc(N, sizeof(double))
    if gs == NULL or dBt == NULL or dCt == NULL:
        free(gs); free(dBt); free(dCt)
        raise MemoryError()
    try:
        with nogil:
            for b in range(Bt):
                for k in range(E * N):
                    gs[k] = 0.0
                for tt in range(L):
                    t = L - 1 - tt
                    for n in range(N):
                        dBt[n] = 0.0
                        dCt[n] = 0.0
                    for e in range(E):
                        d = delta[b, t, e]
                        x = u[b, t, e]
                        dyv = dy[b, t, e]
                        dd_acc = 0.0
                        du_acc = 0.0
                        for n in range(N):
                            k = e * N + n
                            Aen = A[e, n]
                            Bv = Bm[b, t, n]
                            Cv = Cm[b, t, n]
                            emv = em[b, t, e, n]
                            a = emv + 1.0
                            g = gs[k] + Cv * dyv
                            dCt[n] += h[b, t, e, n] * dyv
                            if t > 0:
                                hp = h[b, t - 1, e, n]
                            else:
                                hp = 0.0
                            da = g * hp
                            if fabs(Aen) < SMALL_A:
                                bbar = d * Bv
                                db_dd = Bv
                                db_dA = Bv * d * d * 0.5
                                db_dB = d
                            else:
                                z = d * Aen
                                db_dB = emv / Aen
                                bbar = db_dB * Bv
                                db_dd = a * Bv
                                db_dA = Bv * d * d * _psi(z, a, emv)
                            du_acc += g * bbar
                            dbb = g * x
                            dd_acc += da * Aen * a + dbb * db_dd
                            dA[e, n] += da * d * a + dbb * db_dA
                            dBt[n] += dbb * db_dB
                            gs[k] = a * g
                        ddelta[b, t, e] = <real> dd_acc
                        du[b, t, e] = <real> du_acc
                    for n in range(N):
                        dBm[b, t, n] = <real> dBt[n]
                        dCm[b, t, n] = <real> dCt[n]
    finally:
        free(gs); free(dBt); free(dCt)


def recurrence_seq(real[:, :, ::1] a, real[:, :, ::1] b, real[:, :, ::1] out):
    """h_t = a_t h_{t-1} + b_t along axis 1 of [B, L, M] arrays, state in double."""
    cdef Py_ssize_t Bt = a.shape[0], L = a.shape[1], M = a.shape[2]
    cdef Py_ssize_t i, t, m
    cdef double *hs = <double *> calloc(M, sizeof(double))
    if hs == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(Bt):
                for m in range(M):
                    hs[m] = 0.0
                for t in range(L):
                    for m in range(M):
                        hs[m] = a[i, t, m] * hs[m] + b[i, t, m]
                        out[i, t, m] = <real> hs[m]
    finally:
        free(hs)


def _expm1_za(delta, A):
    return np.expm1(delta.astype(np.float64)[..., None] * A.astype(np.float64))


def ssm_forward(u, delta, A, Bm, Cm):
    Bt, L, E = u.shape
    N = A.shape[1]
    h = np.empty((Bt, L, E, N), dtype=u.dtype)
    y = np.empty((Bt, L, E), dtype=u.dtype)
    _forward(u, delta, A, Bm, Cm, _expm1_za(delta, A), h, y)
    return y, h


def ssm_backward(u, delta, A, Bm, Cm, h, dy):
    du = np.empty_like(u)
    ddelta = np.empty_like(delta)
    dA = np.zeros(A.shape, dtype=np.float64)
    dBm = np.empty_like(Bm)
    dCm = np.empty_like(Cm)
    _backward(u, delta, A, Bm, Cm, _expm1_za(delta, A), h,
              np.ascontiguousarray(dy, dtype=u.dtype), du, ddelta, dA, dBm, dCm)
    return du, ddelta, dA.astype(u.dtype), dBm, dCm
