"""Adversarial / L1 / cycle objectives, the PatchGAN discriminator and Adam."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor_core import Conv2d, F, Module, Parameter, Tensor


@dataclass
class LossWeights:
    lambda_l1: float = 100.0
    lambda_gan: float = 1.0
    lambda_cycle: float = 10.0

    def __post_init__(self):
        if min(self.lambda_l1, self.lambda_gan, self.lambda_cycle) < 0:
            raise ValueError("loss weights must be non-negative")


class PatchDiscriminator(Module):
    """Three stride-2 4x4 convs (widths C, 2C, 4C, LeakyReLU 0.2) and a 3x3 logit head.

    An ``H x W`` input with both extents divisible by 8 yields an
    ``H/8 x W/8`` logit map; each logit judges one receptive-field patch.
    With ``norm`` the second and third convs are instance-normalised, which
    couples the patches through per-image statistics but keeps the logit
    scale independent of the small init.
    """

    def __init__(self, rng, c_in: int, width: int = 16, norm: bool = True):
        self.norm = norm
        self.conv1 = Conv2d(rng, c_in, width, 4, stride=2, pad=1)
        self.conv2 = Conv2d(rng, width, 2 * width, 4, stride=2, pad=1)
        self.conv3 = Conv2d(rng, 2 * width, 4 * width, 4, stride=2, pad=1)
        self.head = Conv2d(rng, 4 * width, 1, 3, pad=1)

    @staticmethod
    def output_extent(n: int) -> int:
        for _ in range(3):
            n = (n + 2 - 4) // 2 + 1
        return n

    def forward(self, img: Tensor) -> Tensor:
        unbatched = img.ndim == 3
        if unbatched:
            img = F.reshape(img, (1,) + img.shape)
        if min(img.shape[-2:]) < 16:
            raise ValueError(f"PatchGAN input too small: {img.shape[-2:]}")
        h = F.leaky_relu(self.conv1(img), 0.2)
        h = self.conv2(h)
        h = F.leaky_relu(F.instance_norm(h) if self.norm else h, 0.2)
        h = self.conv3(h)
        h = F.leaky_relu(F.instance_norm(h) if self.norm else h, 0.2)
        out = self.head(h)
        return F.reshape(out, out.shape[1:]) if unbatched else out


def patchgan_forward(img: Tensor, p: PatchDiscriminator) -> Tensor:
    return p(img)


# ---------------------------------------------------------------- losses
def loss_l1(a, b) -> Tensor:
    return F.l1_loss(a, b)


def loss_cycle(src, reconstructed) -> Tensor:
    """Mean absolute round-trip error, averaged over modalities (channel axis)."""
    src, reconstructed = F.as_tensor(src), F.as_tensor(reconstructed)
    if src.shape != reconstructed.shape:
        raise ValueError(f"loss_cycle shape mismatch {src.shape} vs {reconstructed.shape}")
    axis = 1 if src.ndim == 4 else 0
    n = src.shape[axis]
    per = [F.l1_loss(src[_take(axis, i)], reconstructed[_take(axis, i)]) for i in range(n)]
    total = per[0]
    for p in per[1:]:
        total = total + p
    return total * (1.0 / n)


def _take(axis, i):
    return (slice(None),) * axis + (slice(i, i + 1),)


def loss_gan(logits_fake, logits_real=None, mode: str = "generator", kind: str = "bce") -> Tensor:
    """Adversarial loss over patch logit maps.

    ``kind="bce"`` is the non-saturating form: discriminator
    ``BCE(real, 1) + BCE(fake, 0)``, generator ``BCE(fake, 1)``.
    ``kind="lsgan"`` uses squared error to the same targets.
    """
    if mode not in ("generator", "discriminator"):
        raise ValueError(f"unknown mode {mode!r}")
    if kind == "bce":
        crit = F.bce_with_logits
    elif kind == "lsgan":
        def crit(z, target):
            d = F.as_tensor(z) - target
            return F.mean(d * d)
    else:
        raise ValueError(f"unknown adversarial loss {kind!r}")
    if mode == "generator":
        return crit(logits_fake, 1.0)
    if logits_real is None:
        raise ValueError("discriminator loss needs real logits")
    return crit(logits_real, 1.0) + crit(logits_fake, 0.0)


def loss_total(parts: dict, w: LossWeights) -> Tensor:
    """Generator-side objective ``lambda_l1 * l1 + lambda_gan * gan (+ lambda_cycle * cycle)``.

    The discriminator term is optimised by the discriminator's own step and is
    not part of this sum.
    """
    for name, v in parts.items():
        val = v.data if isinstance(v, Tensor) else np.asarray(v)
        if not np.all(np.isfinite(val)):
            raise FloatingPointError(f"non-finite loss part {name!r}")
    total = F.as_tensor(parts["l1"]) * w.lambda_l1 + F.as_tensor(parts["gan"]) * w.lambda_gan
    if "cycle" in parts:
        total = total + F.as_tensor(parts["cycle"]) * w.lambda_cycle
    return total


# ---------------------------------------------------------------- optimiser
class Adam:
    """Adam over a fixed, ordered list of parameters."""

    def __init__(self, params: list[Parameter], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.5, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        if self.lr == 0.0:
            return
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        step = self.lr * math.sqrt(c2) / c1
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (step * m / (np.sqrt(v) + self.eps)).astype(p.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array([self.t], dtype=np.float32)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m.{i:04d}"] = m
            out[f"{prefix}.v.{i:04d}"] = v
        return out
