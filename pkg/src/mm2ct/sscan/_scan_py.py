"""Numpy selective-scan kernels (the pure-Python backend).

Shapes: ``u, delta: [B, L, E]``, ``A: [E, N]``, ``Bm, Cm: [B, L, N]``, states
``h: [B, L, E, N]``.  Discretisation is zero-order hold::

    a_t = exp(delta_t * A)
    b_t = expm1(delta_t * A) / A * Bm_t        (delta_t * Bm_t when |A| < 1e-8)
    h_t = a_t * h_{t-1} + b_t * u_t,  h_{-1} = 0
    y_t = sum_n Cm_t[n] * h_t[:, n]
"""
from __future__ import annotations

import numpy as np

SMALL_A = 1e-8


# ---------------------------------------------------------------- linear recurrence h_t = a_t h_{t-1} + b_t
def recurrence_seq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sequential scan along axis 1 of ``[B, L, ...]`` arrays."""
    h = np.empty_like(b)
    state = np.zeros_like(b[:, 0])
    for t in range(b.shape[1]):
        state = a[:, t] * state + b[:, t]
        h[:, t] = state
    return h


def recurrence_chunked(a: np.ndarray, b: np.ndarray, chunk: int) -> np.ndarray:
    """Chunked scan: Hillis-Steele doubling inside each chunk, sequential carry between chunks.

    ``(a1, b1) then (a2, b2)`` composes to ``(a2 * a1, a2 * b1 + b2)``, which is
    associative, so each chunk's prefix can be built in ``ceil(log2 chunk)``
    vectorised passes.
    """
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    Bt, L = b.shape[:2]
    if chunk >= L:
        return recurrence_seq(a, b)
    rest = b.shape[2:]
    nc = -(-L // chunk)
    padn = nc * chunk - L
    if padn:
        widths = [(0, 0), (0, padn)] + [(0, 0)] * len(rest)
        a = np.pad(a, widths, constant_values=1.0)
        b = np.pad(b, widths)
    A = a.reshape(Bt, nc, chunk, *rest).copy()
    Bc = b.reshape(Bt, nc, chunk, *rest).copy()
    d = 1
    while d < chunk:
        a_new = A[:, :, d:] * A[:, :, :-d]
        b_new = A[:, :, d:] * Bc[:, :, :-d] + Bc[:, :, d:]
        A[:, :, d:] = a_new
        Bc[:, :, d:] = b_new
        d *= 2
    carry = np.zeros_like(Bc[:, 0, 0])
    for c in range(nc):
        Bc[:, c] += A[:, c] * carry[:, None]
        carry = Bc[:, c, -1]
    return Bc.reshape(Bt, nc * chunk, *rest)[:, :L]


def _run(a, b, chunk):
    if chunk is None:
        return recurrence_seq(a, b)
    return recurrence_chunked(a, b, chunk)


# ---------------------------------------------------------------- discretisation
def _zoh(delta, A, Bm):
    z = delta[..., None] * A                      # [B,L,E,N]
    a = np.exp(z)
    small = np.abs(A) < SMALL_A
    safe_A = np.where(small, 1.0, A)
    coef = np.where(small, delta[..., None], np.expm1(z) / safe_A)
    return z, a, coef, small, safe_A


def _psi(z: np.ndarray) -> np.ndarray:
    """(z e^z - expm1 z) / z^2, evaluated in float64 with a series near 0."""
    z = z.astype(np.float64)
    out = np.empty_like(z)
    near = np.abs(z) < 1e-3
    zn = z[near]
    out[near] = 0.5 + zn * (1.0 / 3.0 + zn * (0.125 + zn / 30.0))
    zf = z[~near]
    out[~near] = (zf * np.exp(zf) - np.expm1(zf)) / (zf * zf)
    return out


def ssm_forward(u, delta, A, Bm, Cm, chunk: int | None = None):
    """Return ``(y, h)``; ``chunk=None`` selects the sequential recurrence."""
    z, a, coef, _, _ = _zoh(delta, A, Bm)
    bx = coef * Bm[:, :, None, :] * u[..., None]
    h = _run(a, bx, chunk)
    y = np.einsum("blen,bln->ble", h, Cm)
    return y.astype(u.dtype), h


def ssm_backward(u, delta, A, Bm, Cm, h, dy, chunk: int | None = None):
    """Gradients ``(du, ddelta, dA, dBm, dCm)`` of ``sum(y * dy)``."""
    z, a, coef, small, safe_A = _zoh(delta, A, Bm)
    dh_direct = dy[..., None] * Cm[:, :, None, :]
    # g_t = dh_direct_t + a_{t+1} g_{t+1}: a forward recurrence on reversed time
    a_next = np.zeros_like(a)
    a_next[:, :-1] = a[:, 1:]
    g = _run(a_next[:, ::-1], dh_direct[:, ::-1], chunk)[:, ::-1]
    h_prev = np.zeros_like(h)
    h_prev[:, 1:] = h[:, :-1]

    Bx = Bm[:, :, None, :]
    bbar = coef * Bx
    da = g * h_prev
    dbbar = g * u[..., None]
    du = (g * bbar).sum(axis=-1)
    # d bbar / d delta = a * B  (B in the small-A limit, where a == 1 anyway)
    ddelta = (da * A * a + dbbar * a * Bx).sum(axis=-1)
    dcoef_dA = np.where(small, 0.5 * delta[..., None] ** 2,
                        (delta[..., None] ** 2) * _psi(z)).astype(u.dtype)
    dA = (da * delta[..., None] * a + dbbar * Bx * dcoef_dA).sum(axis=(0, 1))
    dBm = (dbbar * coef).sum(axis=2)
    dCm = (h * dy[..., None]).sum(axis=2)
    cast = u.dtype
    return (du.astype(cast), ddelta.astype(cast), dA.astype(cast),
            dBm.astype(cast), dCm.astype(cast))
