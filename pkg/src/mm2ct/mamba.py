"""Residual Mamba block and its cross-modal (gate-swapped) variant.

Block layout on a token sequence ``x[B, L, C]``::

    n    = LayerNorm(x)
    scan = SSM(dwconv1d(in_proj_x(n)))          # width E = expand * C
    gate = SiLU(in_proj_z(n_gate))              # n_gate = n, or LayerNorm(x_k) when cross-modal
    out  = x + out_proj(scan * gate)
"""
from __future__ import annotations

import numpy as np

from .sscan import SSMParams, backend, ssm_scan
from .tensor_core import F, Linear, LayerNorm, Module, Parameter, Tensor, trunc_normal


class MambaBlock(Module):
    def __init__(self, rng, channels: int, d_state: int = 8, expand: int = 2,
                 conv_kernel: int = 3, bidirectional: bool = True, delta_bias: float = -2.0):
        inner = expand * channels
        self.channels = channels
        self.norm = LayerNorm(channels)
        self.in_proj_x = Linear(rng, channels, inner)
        self.in_proj_z = Linear(rng, channels, inner)
        self.dw_weight = Parameter(trunc_normal(rng, (inner, conv_kernel)))
        self.dw_bias = Parameter(np.zeros(inner))
        self.ssm = SSMParams(rng, inner, d_state, delta_bias)
        self.out_proj = Linear(rng, inner, channels)
        self.bidirectional = bidirectional
        # None -> fastest available scan (compiled sequential, else numpy chunked)
        self.scan_chunk = backend.fastest_chunk()

    def ssm_path(self, u: Tensor) -> Tensor:
        A, Bm, Cm, delta = self.ssm.evaluate(u)
        y = ssm_scan(u, delta, A, Bm, Cm, chunk=self.scan_chunk)
        if self.bidirectional:
            y = y + ssm_scan(u, delta, A, Bm, Cm, chunk=self.scan_chunk, reverse=True)
        return y + u * self.ssm.D_skip

    def forward(self, x: Tensor, gate_src: Tensor | None = None) -> Tensor:
        """Residual block on ``x[..., L, C]``; ``gate_src`` drives the gate path when given."""
        if x.shape[-1] != self.channels:
            raise ValueError(f"MambaBlock width {self.channels} got input width {x.shape[-1]}")
        if gate_src is not None and gate_src.shape != x.shape:
            raise ValueError(f"cross-modal shape mismatch {x.shape} vs {gate_src.shape}")
        n = self.norm(x)
        u = F.depthwise_conv1d_causal(self.in_proj_x(n), self.dw_weight, self.dw_bias)
        scan = self.ssm_path(u)
        ng = n if gate_src is None else self.norm(gate_src)
        gate = F.silu(self.in_proj_z(ng))
        return x + self.out_proj(scan * gate)


def mamba_forward(x: Tensor, block: MambaBlock) -> Tensor:
    return block(x)


def cross_modal_mamba(x_q: Tensor, x_k: Tensor, block: MambaBlock) -> Tensor:
    """Scan path from ``x_q``, gate path from ``x_k``; both share the block's norm and projections."""
    return block(x_q, gate_src=x_k)


def to_tokens(fmap: Tensor) -> Tensor:
    """[B, C, H, W] -> [B, H*W, C] in raster order."""
    B, C, H, W = fmap.shape
    return F.reshape(F.transpose(fmap, (0, 2, 3, 1)), (B, H * W, C))


def from_tokens(tokens: Tensor, H: int, W: int) -> Tensor:
    B, L, C = tokens.shape
    return F.transpose(F.reshape(tokens, (B, H, W, C)), (0, 3, 1, 2))


def mamba2d(fmap: Tensor, block: MambaBlock, gate_map: Tensor | None = None) -> Tensor:
    """Apply a block to a feature map by flattening it to a raster-order sequence."""
    H, W = fmap.shape[-2:]
    gate = to_tokens(gate_map) if gate_map is not None else None
    return from_tokens(block(to_tokens(fmap), gate), H, W)
