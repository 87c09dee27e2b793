"""Translation module: non-diffusive cycle generators and the conditional diffusive module."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion import FusionModule
from .tensor_core import Conv2d, F, Module, Tensor, default_dtype, no_grad


# ---------------------------------------------------------------- schedule
@dataclass
class DiffusionSchedule:
    """Linear beta schedule with the derived products; ``alpha_bar[0] == 1``."""

    T: int = 8
    beta_min: float = 1e-2
    beta_max: float = 0.3
    betas: np.ndarray = field(init=False, repr=False)
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0.0 < self.beta_min < 1.0 or not 0.0 < self.beta_max < 1.0:
            raise ValueError("betas must lie in (0, 1)")
        if self.T > 1 and not self.beta_min < self.beta_max:
            raise ValueError("beta_min must be < beta_max")
        # index 0 is a placeholder so betas[t] is the step-t value
        b = np.linspace(self.beta_min, self.beta_max, self.T) if self.T > 1 else np.array([self.beta_min])
        self.betas = np.concatenate([[0.0], b])
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)

    def posterior(self, t: int):
        """Coefficients ``(c0, ct, sigma)`` of q(x_{t-1} | x_t, x0) = N(c0 x0 + ct x_t, sigma^2)."""
        ab_t, ab_prev = self.alpha_bars[t], self.alpha_bars[t - 1]
        beta = self.betas[t]
        c0 = np.sqrt(ab_prev) * beta / (1.0 - ab_t)
        ct = np.sqrt(self.alphas[t]) * (1.0 - ab_prev) / (1.0 - ab_t)
        var = beta * (1.0 - ab_prev) / (1.0 - ab_t)
        return c0, ct, np.sqrt(var)


def q_sample(x0, t: int, noise, sched: DiffusionSchedule):
    """Forward noising ``sqrt(ab_t) x0 + sqrt(1-ab_t) noise``; works on Tensors or arrays."""
    if not 0 <= t <= sched.T:
        raise ValueError(f"t={t} outside [0, {sched.T}]")
    if t == 0:
        return x0
    ab = sched.alpha_bars[t]
    return x0 * float(np.sqrt(ab)) + noise * float(np.sqrt(1.0 - ab))


# ---------------------------------------------------------------- non-diffusive generator
class ResBlock(Module):
    def __init__(self, rng, width: int):
        self.conv1 = Conv2d(rng, width, width, 3)
        self.conv2 = Conv2d(rng, width, width, 3)

    def forward(self, x):
        h = F.relu(F.instance_norm(self.conv1(x)))
        return x + F.instance_norm(self.conv2(h))


class Generator(Module):
    """ResNet-style generator: two stride-2 convs, residual blocks, two upsamplings, tanh."""

    def __init__(self, rng, c_in: int, c_out: int, width: int = 16, n_res: int = 3):
        w = width
        self.c_in = c_in
        self.head = Conv2d(rng, c_in, w, 3)
        self.down1 = Conv2d(rng, w, 2 * w, 3, stride=2)
        self.down2 = Conv2d(rng, 2 * w, 4 * w, 3, stride=2)
        self.res = [ResBlock(rng, 4 * w) for _ in range(n_res)]
        self.up1 = Conv2d(rng, 4 * w, 2 * w, 3)
        self.up2 = Conv2d(rng, 2 * w, w, 3)
        self.tail = Conv2d(rng, w, c_out, 3)

    def forward(self, x):
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ValueError(f"generator needs H, W divisible by 4, got {x.shape[-2:]}")
        unbatched = x.ndim == 3
        if unbatched:
            x = F.reshape(x, (1,) + x.shape)
        h = F.relu(F.instance_norm(self.head(x)))
        h = F.relu(F.instance_norm(self.down1(h)))
        h = F.relu(F.instance_norm(self.down2(h)))
        for blk in self.res:
            h = blk(h)
        h = F.relu(F.instance_norm(self.up1(F.upsample_nearest(h))))
        h = F.relu(F.instance_norm(self.up2(F.upsample_nearest(h))))
        out = F.tanh(self.tail(h))
        return F.reshape(out, out.shape[1:]) if unbatched else out


def generator_forward(src: Tensor, p: Generator) -> Tensor:
    return p(src)


# ---------------------------------------------------------------- diffusive module
def timestep_embedding(t: np.ndarray, T: int, dim: int) -> np.ndarray:
    """Sinusoidal features of ``t / T`` (shape [B, dim])."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1) / max(T, 1)
    freqs = np.pi * 2.0 ** np.arange(dim // 2)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class ConvBlock(Module):
    def __init__(self, rng, c_in, c_out, stride=1):
        self.conv1 = Conv2d(rng, c_in, c_out, 3, stride=stride)
        self.conv2 = Conv2d(rng, c_out, c_out, 3)
        self.skip = Conv2d(rng, c_in, c_out, 1, stride=stride) if (c_in != c_out or stride != 1) else None

    def forward(self, x):
        h = F.silu(F.instance_norm(self.conv1(x)))
        h = F.instance_norm(self.conv2(h))
        s = x if self.skip is None else self.skip(x)
        return F.silu(h + s)


class Denoiser(Module):
    """Small UNet predicting x0 from ``(x_t, t, condition)``.

    Input channels: noisy target (1) + fused condition (``cond_ch``) + the
    timestep embedding broadcast over the image (``temb_dim``).  Widths
    ``C`` at full resolution and ``2C`` after each of the two downsamplings.
    """

    def __init__(self, rng, cond_ch: int, width: int = 16, temb_dim: int = 8, T: int = 8):
        C = width
        self.T = T
        self.temb_dim = temb_dim
        self.inc = ConvBlock(rng, 1 + cond_ch + temb_dim, C)
        self.down1 = ConvBlock(rng, C, 2 * C, stride=2)
        self.down2 = ConvBlock(rng, 2 * C, 2 * C, stride=2)
        self.mid = ConvBlock(rng, 2 * C, 2 * C)
        self.up1 = ConvBlock(rng, 4 * C, 2 * C)
        self.up2 = ConvBlock(rng, 3 * C, C)
        self.outc = Conv2d(rng, C, 1, 3)

    def forward(self, x_t: Tensor, t, cond: Tensor) -> Tensor:
        B, _, H, W = x_t.shape
        if H % 4 or W % 4:
            raise ValueError(f"denoiser needs H, W divisible by 4, got {(H, W)}")
        t = np.broadcast_to(np.asarray(t), (B,))
        emb = timestep_embedding(t, self.T, self.temb_dim).astype(default_dtype())
        emb_map = Tensor(np.broadcast_to(emb[:, :, None, None], (B, self.temb_dim, H, W)).copy())
        h0 = self.inc(F.concat([x_t, cond, emb_map], axis=1))
        h1 = self.down1(h0)
        h2 = self.mid(self.down2(h1))
        u1 = self.up1(F.concat([F.upsample_nearest(h2), h1], axis=1))
        u2 = self.up2(F.concat([F.upsample_nearest(u1), h0], axis=1))
        return F.tanh(self.outc(u2))


def p_step(x_t, t: int, cond, denoiser, sched: DiffusionSchedule, noise, x0_pred=None):
    """One reverse step: predict x0, then sample the posterior q(x_{t-1} | x_t, x0_hat).

    ``denoiser`` may be a :class:`Denoiser` or any callable ``(x_t, t, cond) -> x0``;
    the final step (t == 1) has zero variance and returns the x0 prediction.
    """
    if t < 1:
        raise ValueError("p_step needs t >= 1")
    x_t = F.as_tensor(x_t)
    x0 = x0_pred if x0_pred is not None else denoiser(x_t, t, cond)
    x0 = F.as_tensor(x0)
    if t == 1:
        return x0
    c0, ct, sigma = sched.posterior(t)
    return x0 * float(c0) + x_t * float(ct) + F.as_tensor(noise) * float(sigma)


def sample(cond: Tensor, denoiser, sched: DiffusionSchedule, rng: np.random.Generator) -> Tensor:
    """Reverse diffusion from Gaussian x_T down to x_0 given the condition map."""
    B, _, H, W = cond.shape
    shape = (B, 1, H, W)
    x = Tensor(rng.standard_normal(shape))
    for t in range(sched.T, 0, -1):
        noise = rng.standard_normal(shape) if t > 1 else np.zeros(shape)
        x = p_step(x, t, cond, denoiser, sched, Tensor(noise))
    return x


def translate(t1, t2, fusion: FusionModule, denoiser: Denoiser, sched: DiffusionSchedule,
              seed: int) -> Tensor:
    """Synthesize CT-like ``[.., 1, H, W]`` in (-1, 1) from a registered (t1, t2) pair."""
    t1, t2 = F.as_tensor(t1), F.as_tensor(t2)
    if t1.shape != t2.shape:
        raise ValueError(f"translate: modality shape mismatch {t1.shape} vs {t2.shape}")
    unbatched = t1.ndim == 3
    if unbatched:
        t1, t2 = F.reshape(t1, (1,) + t1.shape), F.reshape(t2, (1,) + t2.shape)
    with no_grad():
        cond = fusion(t1, t2)
        out = sample(cond, denoiser, sched, np.random.default_rng(seed))
    return F.reshape(out, out.shape[1:]) if unbatched else out
