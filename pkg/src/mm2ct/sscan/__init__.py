"""Selective state-space scan: discretisation, sequential and chunked scans.

A feature sequence ``x[L, C]`` drives the recurrence (per channel ``c`` and
state index ``n``)::

    h_t = exp(delta_t A) * h_{t-1} + expm1(delta_t A) / A * B_t * x_t
    y_t = <C_t, h_t> + D * x_t

where ``B_t``, ``C_t`` and ``delta_t`` are computed from ``x`` itself.
"""
from __future__ import annotations

import numpy as np

from ..tensor_core import F, Linear, Module, Parameter, Tensor, make_result
from . import _scan_py, backend
from ._scan_py import SMALL_A

__all__ = [
    "SSMParams", "discretize_zoh", "ssm_scan", "selective_scan_seq",
    "selective_scan_chunked", "backend", "SMALL_A",
]


class SSMParams(Module):
    """Per-block scan parameters for ``channels`` feature channels.

    ``A = -exp(A_log)`` is strictly negative; ``delta = softplus(proj_delta(x))``
    with the projection bias starting at ``delta_bias`` so early steps are small.
    """

    def __init__(self, rng, channels: int, d_state: int = 8, delta_bias: float = -2.0):
        self.d_state = d_state
        self.A_log = Parameter(np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (channels, 1))))
        self.D_skip = Parameter(np.ones(channels))
        self.proj_B = Linear(rng, channels, d_state)
        self.proj_C = Linear(rng, channels, d_state)
        self.proj_delta = Linear(rng, channels, channels)
        self.proj_delta.bias.data[:] = delta_bias

    def A(self) -> Tensor:
        return -F.exp(self.A_log)

    def evaluate(self, x: Tensor):
        """Return ``(A, B, C, delta)`` for the sequence ``x[..., L, C]``."""
        return (self.A(), self.proj_B(x), self.proj_C(x),
                F.softplus(self.proj_delta(x)))


def discretize_zoh(A: Tensor, B: Tensor, delta: Tensor):
    """Zero-order-hold step coefficients.

    ``A[C,N]``, ``B[L,N]``, ``delta[L,C]`` -> ``Abar, Bbar`` shaped ``[L,C,N]``,
    ``Abar = exp(delta A)`` and ``Bbar = (Abar - 1) / A * B``; entries with
    ``|A| < 1e-8`` use the limit ``Bbar = delta B``.
    """
    A, B, delta = F.as_tensor(A), F.as_tensor(B), F.as_tensor(delta)
    d3 = F.reshape(delta, delta.shape + (1,))
    B3 = F.reshape(B, B.shape[:-1] + (1, B.shape[-1]))
    z = d3 * A
    Abar = F.exp(z)
    small = np.abs(A.data) < SMALL_A
    if not small.any():
        return Abar, F.expm1(z) / A * B3
    safe_A = F.add(F.mul(A, Tensor(~small)), Tensor(small))
    ratio = F.expm1(z) / safe_A
    mask = Tensor(small)
    coef = ratio * (1.0 - mask) + d3 * mask
    return Abar, coef * B3


def _flip(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a[:, ::-1])


def ssm_scan(u: Tensor, delta: Tensor, A: Tensor, Bm: Tensor, Cm: Tensor,
             chunk: int | None = None, reverse: bool = False,
             use_extension: bool | None = None) -> Tensor:
    """Differentiable fused scan ``y = sum_n C * h`` (no skip term).

    Accepts ``[L, E]`` / ``[L, N]`` or batched ``[B, L, E]`` / ``[B, L, N]``
    inputs.  ``reverse`` runs the recurrence from the last position backwards.
    """
    unbatched = u.ndim == 2
    ud, dd, Bd, Cd = u.data, delta.data, Bm.data, Cm.data
    if unbatched:
        ud, dd, Bd, Cd = ud[None], dd[None], Bd[None], Cd[None]
    if ud.shape[1] == 0:
        raise ValueError("selective scan over an empty sequence")
    if ud.shape != dd.shape or Bd.shape != Cd.shape or Bd.shape[:2] != ud.shape[:2]:
        raise ValueError(f"scan shape mismatch: u{ud.shape} delta{dd.shape} B{Bd.shape} C{Cd.shape}")
    if A.shape != (ud.shape[2], Bd.shape[2]):
        raise ValueError(f"A shape {A.shape} != {(ud.shape[2], Bd.shape[2])}")
    if reverse:
        ud, dd, Bd, Cd = _flip(ud), _flip(dd), _flip(Bd), _flip(Cd)
    Ad = A.data
    y, h = backend.forward(ud, dd, Ad, Bd, Cd, chunk=chunk, use_extension=use_extension)

    def bwd(g):
        g = g[None] if unbatched else g
        if reverse:
            g = _flip(g)
        du, ddl, dA, dB, dC = backend.backward(ud, dd, Ad, Bd, Cd, h, g, chunk=chunk,
                                               use_extension=use_extension)
        if reverse:
            du, ddl, dB, dC = _flip(du), _flip(ddl), _flip(dB), _flip(dC)
        if unbatched:
            du, ddl, dB, dC = du[0], ddl[0], dB[0], dC[0]
        return du, ddl, dA, dB, dC

    if reverse:
        y = _flip(y)
    return make_result(y[0] if unbatched else y, (u, delta, A, Bm, Cm), bwd)


def _scan_with(x: Tensor, params: SSMParams, chunk, reverse=False, use_extension=None) -> Tensor:
    A, Bm, Cm, delta = params.evaluate(x)
    y = ssm_scan(x, delta, A, Bm, Cm, chunk=chunk, reverse=reverse, use_extension=use_extension)
    return y + x * params.D_skip


def selective_scan_seq(x: Tensor, params: SSMParams, reverse: bool = False,
                       use_extension: bool | None = None) -> Tensor:
    """Sequential scan of ``x[L, C]`` (or ``[B, L, C]``), zero initial state."""
    return _scan_with(x, params, None, reverse, use_extension)


def selective_scan_chunked(x: Tensor, params: SSMParams, chunk: int, reverse: bool = False) -> Tensor:
    """Chunked scan; equals :func:`selective_scan_seq` up to float reassociation.

    ``chunk >= L`` runs the sequential path itself.
    """
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    L = x.shape[-2]
    if chunk >= L:
        return selective_scan_seq(x, params, reverse)
    return _scan_with(x, params, chunk, reverse, use_extension=False)
