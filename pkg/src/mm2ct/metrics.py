"""PSNR, Gaussian-window SSIM and directory-level evaluation reports."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import data as D
from .tensor_core.checkpoint import read_tensor

PSNR_CAP = 99.0
SSIM_WIN, SSIM_SIGMA = 11, 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
# full-scale pelvis reference row, kept only as context for the desk-scale tables
REFERENCE_ROW = {"dataset": "pelvis (full scale)", "psnr_db": 25.72, "ssim_percent": 89.54}


def psnr(pred, gt, max_val: float = 1.0) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"psnr shape mismatch {pred.shape} vs {gt.shape}")
    mse = np.mean((pred - gt) ** 2)
    if mse == 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(max_val ** 2 / mse), PSNR_CAP))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(img, w.shape)
    return np.einsum("ijkl,kl->ij", win, w)


def ssim_map(pred, gt, data_range: float = 1.0) -> np.ndarray:
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"ssim shape mismatch {x.shape} vs {y.shape}")
    while x.ndim > 2 and x.shape[0] == 1:
        x, y = x[0], y[0]
    if x.ndim != 2:
        raise ValueError(f"ssim needs single-channel 2-d images, got {x.shape}")
    if min(x.shape) < SSIM_WIN:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    w = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _filter_valid(x, w), _filter_valid(y, w)
    sxx = _filter_valid(x * x, w) - mx * mx
    syy = _filter_valid(y * y, w) - my * my
    sxy = _filter_valid(x * y, w) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(pred, gt, data_range: float = 1.0) -> float:
    """Mean SSIM over all valid 11x11 window positions (no padding)."""
    return float(np.mean(ssim_map(pred, gt, data_range)))


# ---------------------------------------------------------------- reports
@dataclass
class EvalReport:
    files: list[str]
    psnr_db: list[float]
    ssim_percent: list[float]
    fingerprint: str | None = None
    dataset_id: str | None = None
    reference: dict = field(default_factory=lambda: dict(REFERENCE_ROW))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_db))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_percent))

    def table(self, label: str = "MM2CT (desk)") -> str:
        lines = [f"{'Method':<24}| PSNR  | SSIM",
                 f"{label:<24}| {self.mean_psnr:.2f} | {self.mean_ssim:.2f}",
                 f"{'reference (pelvis)':<24}| {self.reference['psnr_db']:.2f} | {self.reference['ssim_percent']:.2f}"]
        return "\n".join(lines)

    def write_csv(self, path: str):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["filename", "psnr_db", "ssim"])
            for f, p, s in zip(self.files, self.psnr_db, self.ssim_percent):
                w.writerow([f, f"{p:.6f}", f"{s:.6f}"])
            w.writerow(["MEAN", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}"])

    def to_json(self) -> str:
        return json.dumps({"files": self.files, "psnr_db": self.psnr_db, "ssim_percent": self.ssim_percent,
                           "mean_psnr_db": self.mean_psnr, "mean_ssim_percent": self.mean_ssim,
                           "fingerprint": self.fingerprint, "dataset_id": self.dataset_id,
                           "reference": self.reference}, indent=1, sort_keys=True)


def report_from_arrays(pred, gt, files, fingerprint=None, dataset_id=None) -> EvalReport:
    ps, ss = [], []
    for p, g in zip(pred, gt):
        ps.append(psnr(p, g))
        ss.append(100.0 * ssim(p, g))
    return EvalReport(list(files), ps, ss, fingerprint, dataset_id)


class EvalError(RuntimeError):
    pass


def _ten_files(root: str) -> list[str]:
    out = []
    for dirpath, _, names in os.walk(root):
        for n in names:
            if n.endswith(".ten"):
                out.append(os.path.relpath(os.path.join(dirpath, n), root))
    return sorted(out)


def eval_report(pred_dir: str, gt_dir: str, force: bool = False) -> EvalReport:
    """Pair files by relative path; a dataset root as ``gt_dir`` restricts to test-split CT slices."""
    gt_fp, pred_fp = D.read_fingerprint(gt_dir), D.read_fingerprint(pred_dir)
    if gt_fp and pred_fp and gt_fp != pred_fp and not force:
        raise EvalError(f"fingerprint mismatch: predictions {pred_fp} vs ground truth {gt_fp} (use --force)")
    pred_files = _ten_files(pred_dir)
    if os.path.exists(os.path.join(gt_dir, "split.txt")):
        split = D.read_split(gt_dir)
        gt_files = [f for f in _ten_files(gt_dir)
                    if f.split(os.sep)[1] == "ct" and split.get(f.split(os.sep)[0]) == "test"]
    else:
        gt_files = _ten_files(gt_dir)
    missing = sorted(set(gt_files) ^ set(pred_files))
    if missing:
        raise EvalError(f"{len(missing)} file(s) without a counterpart, e.g. {missing[0]}")
    if not gt_files:
        raise EvalError("no files to evaluate")
    pred = [read_tensor(os.path.join(pred_dir, f)) for f in gt_files]
    gt = [read_tensor(os.path.join(gt_dir, f)) for f in gt_files]
    cfg_fp = None
    p = os.path.join(pred_dir, "config.txt")
    if os.path.exists(p):
        with open(p) as fh:
            cfg_fp = fh.read().strip()
    return report_from_arrays(pred, gt, [f.replace(os.sep, "/") for f in gt_files], cfg_fp, gt_fp)
