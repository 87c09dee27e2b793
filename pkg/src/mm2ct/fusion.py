"""Two-modality feature fusion feeding the diffusive module.

Pipeline for registered inputs ``t1, t2`` (each ``[B, 1, H, W]`` in [-1, 1])::

    stem -> pre Mamba blocks -> channel swap -> per-branch Mamba
         -> cross-modal Mamba (both directions, summed)
         -> dynamic local conv -> difference-aware attention
         -> post Mamba blocks -> 3x3 conv

``enable_mamba=False`` replaces every Mamba stage by concatenation and a 1x1
conv; ``enable_de=False`` makes the two enhancement stages identity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mamba import MambaBlock, mamba2d
from .tensor_core import Conv2d, F, Module, Tensor


@dataclass
class FusionConfig:
    width: int = 16
    n_pre_blocks: int = 1
    n_post_blocks: int = 1
    swap_period: int = 2
    theta_cdc: float = 0.7
    enable_mamba: bool = True
    enable_de: bool = True
    d_state: int = 8
    expand: int = 2
    bidirectional: bool = True

    def __post_init__(self):
        if self.width % 2:
            raise ValueError(f"fusion width must be even, got {self.width}")
        if not 0.0 <= self.theta_cdc <= 1.0:
            raise ValueError(f"theta_cdc must lie in [0, 1], got {self.theta_cdc}")
        if self.swap_period < 2:
            raise ValueError("swap_period must be >= 2")


def channel_swap(a: Tensor, b: Tensor, period: int = 2):
    """Exchange every ``period``-th channel (indices ``period-1, 2*period-1, ...``).

    Works on ``[C, H, W]`` or ``[B, C, H, W]``; with the default period the odd
    channels swap and the even ones stay.
    """
    if a.shape != b.shape:
        raise ValueError(f"channel_swap shape mismatch {a.shape} vs {b.shape}")
    axis = a.ndim - 3
    C = a.shape[axis]
    if C % 2:
        raise ValueError(f"channel_swap needs an even channel count, got {C}")
    swap = (np.arange(C) % period) == period - 1
    shape = [1] * a.ndim
    shape[axis] = C
    m = Tensor(swap.reshape(shape))
    keep = 1.0 - m
    return a * keep + b * m, b * keep + a * m


class Stem(Module):
    """Two 3x3 stride-1 convs lifting one channel to ``width``, SiLU in between."""

    def __init__(self, rng, width: int):
        self.conv1 = Conv2d(rng, 1, width, 3)
        self.conv2 = Conv2d(rng, width, width, 3)

    def forward(self, img):
        return self.conv2(F.silu(self.conv1(img)))


class DynamicLocalConv(Module):
    """Mix of a plain 3x3 conv and its central-difference form.

    ``out = (1-theta) conv(x) + theta cd(x)`` where ``cd`` convolves
    ``x_neighbour - x_centre``; with shared weights ``cd(x) = conv(x) - x * sum(w)``.
    """

    def __init__(self, rng, width: int, theta: float):
        self.conv = Conv2d(rng, width, width, 3)
        self.theta = theta

    def forward(self, x):
        plain = self.conv(x)
        if self.theta == 0.0:
            return plain
        w_sum = F.sum(F.sum(self.conv.weight, axis=3, keepdims=True), axis=2, keepdims=True)
        centre = F.conv2d(x, w_sum)
        # (1-theta) plain + theta (plain - centre) = plain - theta centre
        return plain - centre * self.theta


class DiffAwareAttention(Module):
    """``fused + sigmoid(conv_a(|f1-f2|)) * conv_v(|f1-f2|)`` with 1x1 convs."""

    def __init__(self, rng, width: int):
        self.att = Conv2d(rng, width, width, 1)
        self.val = Conv2d(rng, width, width, 1)

    def attention(self, f1, f2):
        d = F.abs(f1 - f2)
        return F.sigmoid(self.att(d)), self.val(d)

    def forward(self, f1, f2, fused):
        if not (f1.shape == f2.shape == fused.shape):
            raise ValueError(f"diff_aware_attention shape mismatch {f1.shape}, {f2.shape}, {fused.shape}")
        a, v = self.attention(f1, f2)
        return fused + a * v


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return F.reshape(x, (1,) + x.shape), True
    return x, False


class FusionModule(Module):
    def __init__(self, rng, cfg: FusionConfig):
        self.cfg = cfg
        C = cfg.width

        def block():
            return MambaBlock(rng, C, cfg.d_state, cfg.expand, bidirectional=cfg.bidirectional)

        self.stem_t1 = Stem(rng, C)
        self.stem_t2 = Stem(rng, C)
        if cfg.enable_mamba:
            self.pre_t1 = [block() for _ in range(cfg.n_pre_blocks)]
            self.pre_t2 = [block() for _ in range(cfg.n_pre_blocks)]
            self.branch_t1 = block()
            self.branch_t2 = block()
            self.cross_12 = block()
            self.cross_21 = block()
            self.post = [block() for _ in range(cfg.n_post_blocks)]
        else:
            self.merge = Conv2d(rng, 2 * C, C, 1)
        if cfg.enable_de:
            self.dlc = DynamicLocalConv(rng, C, cfg.theta_cdc)
            self.daa = DiffAwareAttention(rng, C)
        self.out_conv = Conv2d(rng, C, C, 3)

    def forward(self, t1: Tensor, t2: Tensor) -> Tensor:
        if t1.shape != t2.shape:
            raise ValueError(f"modality size mismatch {t1.shape} vs {t2.shape}")
        t1, unbatched = _batched(t1)
        t2, _ = _batched(t2)
        cfg = self.cfg
        f1, f2 = self.stem_t1(t1), self.stem_t2(t2)
        if cfg.enable_mamba:
            for blk in self.pre_t1:
                f1 = mamba2d(f1, blk)
            for blk in self.pre_t2:
                f2 = mamba2d(f2, blk)
            f1, f2 = channel_swap(f1, f2, cfg.swap_period)
            f1 = mamba2d(f1, self.branch_t1)
            f2 = mamba2d(f2, self.branch_t2)
            fused = mamba2d(f1, self.cross_12, gate_map=f2) + mamba2d(f2, self.cross_21, gate_map=f1)
        else:
            fused = self.merge(F.concat([f1, f2], axis=1))
        if cfg.enable_de:
            fused = self.daa(f1, f2, self.dlc(fused))
        if cfg.enable_mamba:
            for blk in self.post:
                fused = mamba2d(fused, blk)
        out = self.out_conv(fused)
        return F.reshape(out, out.shape[1:]) if unbatched else out


def fuse(t1: Tensor, t2: Tensor, cfg: FusionConfig, params: FusionModule) -> Tensor:
    if params.cfg != cfg:
        raise ValueError("fusion parameters were built for a different config")
    return params(t1, t2)
