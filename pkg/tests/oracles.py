"""Slow, obviously-correct reference implementations shared by several test modules."""
import math

import numpy as np

from mm2ct.metrics import PSNR_CAP, gaussian_window


def psnr_loop(a, b):
    s = 0.0
    for x, y in zip(np.ravel(a), np.ravel(b)):
        s += (float(x) - float(y)) ** 2
    mse = s / np.size(a)
    return PSNR_CAP if mse == 0 else min(10 * math.log10(1.0 / mse), PSNR_CAP)


def ssim_loop(x, y, L=1.0):
    """Window-by-window SSIM with explicit weighted sums (valid positions only)."""
    w = gaussian_window()
    k = w.shape[0]
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    vals = []
    for i in range(x.shape[0] - k + 1):
        for j in range(x.shape[1] - k + 1):
            px, py = x[i:i + k, j:j + k], y[i:i + k, j:j + k]
            mx, my = np.sum(w * px), np.sum(w * py)
            vx = np.sum(w * (px - mx) ** 2)
            vy = np.sum(w * (py - my) ** 2)
            cxy = np.sum(w * (px - mx) * (py - my))
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))
