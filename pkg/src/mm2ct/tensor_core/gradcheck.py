"""Central finite-difference validation of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import functional as _fn
from .tensor import Tensor, backward, no_grad, reset_graph


def _eval_with_kinks(f):
    _fn._KINK_LOG = []
    try:
        val = float(np.asarray(f().data, dtype=np.float64))
        return val, _fn._KINK_LOG
    finally:
        _fn._KINK_LOG = None


def _same_side(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], h: float = 1e-3,
               max_coords: int | None = None, rng: np.random.Generator | None = None,
               skip_kinks: bool = True, stats: dict | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` is called with no arguments and must return a scalar tensor that
    depends on the tensors in ``x``.  The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.  With ``max_coords`` only a
    random subset of coordinates per tensor is probed.

    With ``skip_kinks`` a probe whose ``x +- h`` evaluations put any ReLU /
    LeakyReLU / abs / max element on the other side of its kink is discarded
    (the difference quotient is meaningless there) and the next random
    coordinate is tried instead.  ``stats`` receives probe/skip counts.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved = [(t.requires_grad, t.grad) for t in xs]
    for t in xs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    try:
        reset_graph()
        out = f()
        if out.size != 1:
            raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
        backward(out)
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in xs]
        rng = rng or np.random.default_rng(0)
        worst = 0.0
        probed = skipped = 0
        with no_grad():
            _, base = _eval_with_kinks(f) if skip_kinks else (None, None)
            for t, ga in zip(xs, analytic):
                flat = t.data.reshape(-1)
                want = flat.size if max_coords is None else min(max_coords, flat.size)
                done = 0
                for i in rng.permutation(flat.size):
                    if done == want:
                        break
                    orig = flat[i]
                    flat[i] = orig + h
                    fp, kp = _eval_with_kinks(f) if skip_kinks else (float(np.asarray(f().data, np.float64)), None)
                    flat[i] = orig - h
                    fm, km = _eval_with_kinks(f) if skip_kinks else (float(np.asarray(f().data, np.float64)), None)
                    flat[i] = orig
                    if skip_kinks and not (_same_side(kp, base) and _same_side(km, base)):
                        skipped += 1
                        continue
                    done += 1
                    num = (fp - fm) / (2.0 * h)
                    a = float(ga.reshape(-1)[i])
                    worst = max(worst, abs(a - num) / max(1.0, abs(a)))
                probed += done
        if stats is not None:
            stats.update(probed=probed, skipped=skipped)
        return worst
    finally:
        reset_graph()
        for t, (rg, g) in zip(xs, saved):
            t.requires_grad = rg
            t.grad = g
