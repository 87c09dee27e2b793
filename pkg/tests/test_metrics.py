import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from mm2ct import data as D
from mm2ct.metrics import (
    PSNR_CAP, SSIM_K1, EvalError, eval_report, gaussian_window, psnr, report_from_arrays, ssim, ssim_map,
)
from mm2ct.tensor_core import write_tensor
from oracles import psnr_loop, ssim_loop


def test_psnr_mse_001_is_20db():
    # uniform +0.1 error: mse = 0.01
    a = np.full((8, 8), 0.3)
    assert abs(psnr(a + 0.1, a) - 20.0) < 1e-9


def test_psnr_identical_is_capped():
    a = np.random.default_rng(0).uniform(size=(4, 4))
    assert psnr(a, a) == PSNR_CAP


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))


images = hnp.arrays(np.float64, (16, 16), elements=st.floats(0, 1))


@settings(max_examples=30, deadline=None)
@given(images, images)
def test_psnr_matches_loop(a, b):
    assert abs(psnr(a, b) - psnr_loop(a, b)) <= 1e-6


@settings(max_examples=15, deadline=None)
@given(images, images)
def test_ssim_matches_loop(a, b):
    assert abs(ssim(a, b) - ssim_loop(a, b)) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(images, images)
def test_ssim_symmetric_and_bounded(a, b):
    s1, s2 = ssim(a, b), ssim(b, a)
    assert abs(s1 - s2) < 1e-12
    assert -1.0 - 1e-12 <= s1 <= 1.0 + 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_ssim_identity_is_one(seed):
    a = np.random.default_rng(seed).uniform(size=(20, 24))
    assert abs(ssim(a, a) - 1.0) <= 1e-9


def test_ssim_constant_zero_vs_one():
    c1 = SSIM_K1 ** 2
    got = ssim(np.zeros((16, 16)), np.ones((16, 16)))
    assert abs(got - c1 / (1 + c1)) <= 1e-9


def test_ssim_monotone_in_noise():
    rng = np.random.default_rng(1)
    a = rng.uniform(size=(32, 32))
    noise = rng.standard_normal(a.shape)
    scores = [ssim(np.clip(a + s * noise, 0, 1), a) for s in (0.01, 0.05, 0.1, 0.3)]
    assert all(x > y for x, y in zip(scores, scores[1:]))


def test_ssim_window_is_normalised():
    w = gaussian_window()
    assert w.shape == (11, 11) and abs(w.sum() - 1.0) < 1e-15


def test_ssim_valid_map_extent():
    assert ssim_map(np.zeros((20, 30)), np.zeros((20, 30))).shape == (10, 20)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_ssim_against_skimage():
    metrics = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(4)
    a, b = rng.uniform(size=(40, 40)), rng.uniform(size=(40, 40))
    ref = metrics.structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                        use_sample_covariance=False)
    assert abs(ssim(a, b) - ref) < 1e-6


# ---------------------------------------------------------------- reports on disk
def _tree(root, keys, arrays, fingerprint=None, split=None):
    for k, a in zip(keys, arrays):
        p = os.path.join(root, k)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        write_tensor(p, a)
    if fingerprint:
        with open(os.path.join(root, "fingerprint.txt"), "w") as fh:
            fh.write(fingerprint + "\n")
    if split:
        with open(os.path.join(root, "split.txt"), "w") as fh:
            fh.writelines(f"{s} {p}\n" for s, p in split.items())


@pytest.fixture
def pair(tmp_path):
    rng = np.random.default_rng(0)
    keys = ["s000/ct/000.ten", "s000/ct/001.ten"]
    gt = [rng.uniform(size=(1, 16, 16)).astype(np.float32) for _ in keys]
    pred = [np.clip(g + 0.05, 0, 1).astype(np.float32) for g in gt]
    _tree(tmp_path / "gt", keys, gt, "aaaa")
    _tree(tmp_path / "pred", keys, pred, "aaaa")
    return tmp_path, keys, pred, gt


def test_eval_report_numbers(pair):
    root, keys, pred, gt = pair
    rep = eval_report(str(root / "pred"), str(root / "gt"))
    assert rep.files == keys
    np.testing.assert_allclose(rep.psnr_db, [psnr(p, g) for p, g in zip(pred, gt)])
    assert rep.dataset_id == "aaaa"


def test_eval_refuses_fingerprint_mismatch(pair):
    root, keys, pred, _ = pair
    _tree(root / "other", keys, pred, "bbbb")
    with pytest.raises(EvalError):
        eval_report(str(root / "other"), str(root / "gt"))
    assert eval_report(str(root / "other"), str(root / "gt"), force=True).files == keys


def test_eval_missing_counterpart(pair):
    root, keys, pred, _ = pair
    _tree(root / "short", keys[:1], pred[:1], "aaaa")
    with pytest.raises(EvalError):
        eval_report(str(root / "short"), str(root / "gt"))


def test_eval_uses_test_split_only(tmp_path):
    arr = np.zeros((1, 16, 16), np.float32)
    keys = ["s000/ct/000.ten", "s001/ct/000.ten", "s001/t1/000.ten"]
    _tree(tmp_path / "data", keys, [arr] * 3, "ff", {"s000": "train", "s001": "test"})
    _tree(tmp_path / "pred", ["s001/ct/000.ten"], [arr], "ff")
    rep = eval_report(str(tmp_path / "pred"), str(tmp_path / "data"))
    assert rep.files == ["s001/ct/000.ten"]


def test_csv_and_json(tmp_path):
    rep = report_from_arrays([np.full((16, 16), 0.5)] * 2, [np.full((16, 16), 0.4)] * 2, ["a", "b"], "cf", "df")
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "filename,psnr_db,ssim" and lines[-1].startswith("MEAN,20.0000")
    blob = json.loads(rep.to_json())
    assert blob["fingerprint"] == "cf" and abs(blob["mean_psnr_db"] - 20.0) < 1e-9
    assert "25.72" in rep.table()


def test_report_is_deterministic(pair):
    root = pair[0]
    a = eval_report(str(root / "pred"), str(root / "gt")).to_json()
    b = eval_report(str(root / "pred"), str(root / "gt")).to_json()
    assert a == b
