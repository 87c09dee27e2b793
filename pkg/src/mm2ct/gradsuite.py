"""Finite-difference checks over every differentiable building block, at 32-bit."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .fusion import DiffAwareAttention, DynamicLocalConv, FusionConfig, FusionModule
from .mamba import MambaBlock
from .objectives import LossWeights, PatchDiscriminator, loss_gan, loss_l1, loss_total
from .sscan import SSMParams, selective_scan_seq
from .tensor_core import F, Conv2d, LayerNorm, Linear, Tensor, grad, grad_check, no_grad
from .translate import Denoiser, Generator

TOLERANCE = 1e-3
DEFAULT_STEP = 1e-2
# ReLU-dense nets cross a kink on most probes at the default step
BLOCK_STEP = {"generator": 1e-3, "discriminator": 1e-3}


@dataclass
class CheckResult:
    name: str
    error: float
    seconds: float
    probes: int
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.probes > 0 and self.error <= TOLERANCE


def _projector(rng, shape):
    # fixed random readout touching every output element
    return Tensor(rng.standard_normal(shape))


def _normalise(f, inputs, R):
    """Rescale the readout so the largest analytic gradient entry is 1.

    The per-coordinate error ``|a - n| / max(1, |a|)`` is then a genuine
    relative error instead of passing vacuously on tiny gradients.
    """
    for t in inputs:
        t.requires_grad = True
    scale = max(float(np.max(np.abs(g))) for g in grad(f(), inputs))
    if scale > 0:
        R.data = (R.data / scale).astype(R.dtype)


SPREAD = 5.0


def _spread(module, scale=None):
    # widen the std-0.02 init so activations leave the near-linear regime
    scale = SPREAD if scale is None else scale
    for p in module.parameters():
        if p.ndim >= 2:
            p.data *= scale


def _blocks(rng):
    """Yield ``(name, f, inputs)`` with ``f()`` a scalar depending on ``inputs``."""
    def readout(fn, inputs):
        with no_grad():
            R = _projector(rng, fn().shape)
        f = lambda: F.sum(fn() * R)  # noqa: E731
        _normalise(f, inputs, R)
        return f

    x = Tensor(rng.standard_normal((1, 2, 5, 5)))
    conv = Conv2d(rng, 2, 3, 3)
    _spread(conv)
    inp = [x, conv.weight]
    yield "conv2d", readout(lambda: conv(x), inp), inp

    x = Tensor(rng.standard_normal((5, 4)))
    lin = Linear(rng, 4, 3)
    _spread(lin)
    inp = [x, lin.weight]
    yield "linear", readout(lambda: lin(x), inp), inp

    x = Tensor(rng.standard_normal((4, 6)))
    ln = LayerNorm(6)
    inp = [x, ln.gamma]
    yield "layer_norm", readout(lambda: ln(x), inp), inp

    x = Tensor(rng.standard_normal((1, 3, 4, 4)))
    inp = [x]
    yield "instance_norm", readout(lambda: F.instance_norm(x), inp), inp

    x = Tensor(rng.standard_normal((12, 4)))
    ssm = SSMParams(rng, 4, d_state=3)
    _spread(ssm)
    inp = [x, ssm.A_log, ssm.proj_B.weight]
    yield "selective_scan", readout(lambda: selective_scan_seq(x, ssm), inp), inp

    x = Tensor(rng.standard_normal((1, 10, 4)))
    blk = MambaBlock(rng, 4, d_state=2)
    _spread(blk)
    inp = [x, blk.in_proj_x.weight]
    yield "mamba_block", readout(lambda: blk(x), inp), inp

    xq = Tensor(rng.standard_normal((1, 10, 4)))
    xk = Tensor(rng.standard_normal((1, 10, 4)))
    inp = [xq, xk]
    yield "cross_modal_block", readout(lambda: blk(xq, gate_src=xk), inp), inp

    f1 = Tensor(rng.standard_normal((1, 4, 6, 6)))
    f2 = Tensor(rng.standard_normal((1, 4, 6, 6)))
    dlc = DynamicLocalConv(rng, 4, 0.7)
    daa = DiffAwareAttention(rng, 4)
    _spread(dlc)
    _spread(daa)
    inp = [f1, f2, dlc.conv.weight]
    yield "dynamic_enhancement", readout(lambda: daa(f1, f2, dlc(f1 + f2)), inp), inp

    t1 = Tensor(rng.standard_normal((1, 1, 8, 8)))
    t2 = Tensor(rng.standard_normal((1, 1, 8, 8)))
    fus = FusionModule(rng, FusionConfig(width=4, d_state=2))
    _spread(fus)
    inp = [t1, t2]
    yield "fusion", readout(lambda: fus(t1, t2), inp), inp

    x = Tensor(rng.standard_normal((1, 1, 16, 16)))
    gen = Generator(rng, 1, 1, width=2, n_res=1)
    _spread(gen)
    inp = [x, gen.head.weight]
    yield "generator", readout(lambda: gen(x), inp), inp

    xt = Tensor(rng.standard_normal((1, 1, 16, 16)))
    cond = Tensor(rng.standard_normal((1, 2, 16, 16)))
    den = Denoiser(rng, 2, width=2, temb_dim=4, T=8)
    _spread(den)
    inp = [xt, cond]
    yield "denoiser", readout(lambda: den(xt, 3, cond), inp), inp

    x = Tensor(rng.standard_normal((1, 1, 16, 16)))
    dis = PatchDiscriminator(rng, 1, width=2)
    _spread(dis)
    inp = [x, dis.conv1.weight]
    yield "discriminator", readout(lambda: dis(x), inp), inp

    pred = Tensor(rng.uniform(-1, 1, (1, 1, 16, 16)))
    target = Tensor(rng.uniform(-1, 1, (1, 1, 16, 16)))
    w = LossWeights(lambda_l1=2.0, lambda_gan=1.0)

    def composite():
        parts = {"l1": loss_l1(pred, target), "gan": loss_gan(dis(pred), kind="bce")}
        return loss_total(parts, w)
    yield "loss_total", composite, [pred]


def run_suite(seed: int = 0, h: float | None = None, probes: int = 64, only: list[str] | None = None):
    """Run every block check; ``probes`` caps the coordinates perturbed per block.

    By default the step is ``1e-2``, which balances float32 roundoff against
    truncation error on these readouts, and ``1e-3`` for the ReLU-dense blocks.
    """
    rng = np.random.default_rng(seed)
    results = []
    for name, f, inputs in _blocks(rng):
        if only and name not in only:
            continue
        per = max(1, probes // len(inputs))
        t0 = time.perf_counter()
        err, n_probe, n_skip = 0.0, 0, 0
        step = h if h is not None else BLOCK_STEP.get(name, DEFAULT_STEP)
        for t in inputs:
            st: dict = {}
            err = max(err, grad_check(f, [t], h=step, max_coords=per, rng=np.random.default_rng(seed), stats=st))
            n_probe += st["probed"]
            n_skip += st["skipped"]
        results.append(CheckResult(name, err, time.perf_counter() - t0, n_probe, n_skip))
    return results


def format_results(results) -> str:
    lines = [f"{'block':<22} {'rel_err':>10} {'probes':>6} {'kinks':>5} {'sec':>6}  status"]
    for r in results:
        lines.append(f"{r.name:<22} {r.error:10.2e} {r.probes:6d} {r.skipped:5d} {r.seconds:6.2f}  "
                     f"{'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
