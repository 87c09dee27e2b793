import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mm2ct import data as D
from mm2ct.tensor_core import read_tensor


SMALL = D.PhantomSpec(size=32, n_slices=2, split=(2, 1, 1))


def test_default_spec_mirrors_subject_split():
    spec = D.PhantomSpec()
    assert spec.n_subjects == 15 and spec.split == (9, 2, 4)
    assert spec.size == 64 and spec.n_tissue_classes == 5 and spec.noise_std == 0.02


def test_ambiguity_by_construction():
    amb = D.PhantomSpec().ambiguous_pairs()
    assert amb["t1"] and amb["t2"]
    tab = D.PhantomSpec().table()
    for m, col in (("t1", 0), ("t2", 1)):
        for i, j in amb[m]:
            assert tab[i, col] == tab[j, col] and abs(tab[i, 2] - tab[j, 2]) >= 0.2


def test_ambiguity_visible_in_pixels():
    spec = D.PhantomSpec()
    (i, j), = spec.ambiguous_pairs()["t1"]
    lab, img = D.render_subject(spec, 0)
    for k in range(1, 5):
        lab_k, img_k = D.render_subject(spec, k)
        lab, img = np.concatenate([lab, lab_k]), {m: np.concatenate([img[m], img_k[m]]) for m in img}
    a, b = lab == i, lab == j
    assert a.sum() > 100 and b.sum() > 100
    # bias field is multiplicative (<= mr_bias), noise 3 sigma on top
    tol = spec.table()[i, 0] * spec.mr_bias * 2 + 3 * spec.noise_std
    assert abs(np.median(img["t1"][a]) - np.median(img["t1"][b])) < tol
    assert abs(np.median(img["ct"][a]) - np.median(img["ct"][b])) >= 0.2


def test_all_classes_present():
    lab, _ = D.render_subject(D.PhantomSpec(), 3)
    assert set(np.unique(lab)) == {0, 1, 2, 3, 4}


def test_render_is_deterministic_and_independent_of_count():
    a = D.render_subject(D.PhantomSpec(split=(9, 2, 4)), 5)
    b = D.render_subject(D.PhantomSpec(split=(20, 5, 5)), 5)
    assert np.array_equal(a[0], b[0])
    for m in D.MODALITIES:
        assert a[1][m].tobytes() == b[1][m].tobytes()


def test_seed_changes_phantom():
    a = D.render_subject(D.PhantomSpec(seed=0), 0)[0]
    b = D.render_subject(D.PhantomSpec(seed=1), 0)[0]
    assert not np.array_equal(a, b)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 20))
def test_rendered_range(seed, i):
    _, img = D.render_subject(D.PhantomSpec(size=32, n_slices=2, seed=seed), i)
    for m in D.MODALITIES:
        assert img[m].dtype == np.float32 and img[m].shape == (2, 32, 32)
        assert img[m].min() >= 0.0 and img[m].max() <= 1.0


@pytest.mark.parametrize("kw", [dict(size=60), dict(size=8), dict(intensities=((0, 0, 0),) * 4),
                                dict(intensities=((0, 0, 2),) * 5), dict(n_slices=0)])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        D.PhantomSpec(**kw)


def test_fingerprint_changes_with_field():
    assert D.PhantomSpec().fingerprint() != D.PhantomSpec(noise_std=0.03).fingerprint()
    assert D.PhantomSpec().fingerprint() == D.PhantomSpec().fingerprint()


def _tree_bytes(root):
    out = {}
    for dp, _, names in os.walk(root):
        for n in names:
            p = os.path.join(dp, n)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


def test_generate_twice_bit_identical(tmp_path):
    D.phantom_generate(SMALL, tmp_path / "a")
    D.phantom_generate(SMALL, tmp_path / "b")
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")


def test_generate_layout(tmp_path):
    split = D.phantom_generate(SMALL, tmp_path)
    assert D.read_split(tmp_path) == split
    assert sorted(split.values()) == ["test", "train", "train", "val"]
    assert D.read_fingerprint(tmp_path) == SMALL.fingerprint()
    x = read_tensor(tmp_path / "s000" / "t2" / "001.ten")
    assert x.shape == (1, 32, 32)
    mr, ct, keys = D.load_split(str(tmp_path), "train")
    assert mr.shape == (4, 2, 32, 32) and ct.shape == (4, 1, 32, 32)
    assert keys[0] == "s000/ct/000.ten"
    assert mr.min() >= -1 and mr.max() <= 1


def test_default_dataset_has_15_subjects(tmp_path):
    spec = D.PhantomSpec(n_slices=1)
    split = D.phantom_generate(spec, tmp_path)
    dirs = sorted(d for d in os.listdir(tmp_path) if os.path.isdir(tmp_path / d))
    assert dirs == [D.subject_name(i) for i in range(15)]
    assert [list(split.values()).count(p) for p in ("train", "val", "test")] == [9, 2, 4]


@pytest.mark.parametrize("n,want", [(1, (1, 0, 0)), (3, (2, 0, 1)), (30, (18, 4, 8))])
def test_rescaled_split(tmp_path, n, want):
    split = D.phantom_generate(D.PhantomSpec(size=16, n_slices=1), tmp_path, n_subjects=n)
    got = tuple(list(split.values()).count(p) for p in ("train", "val", "test"))
    assert got == want


def test_generate_rejects_zero(tmp_path):
    with pytest.raises(ValueError):
        D.phantom_generate(SMALL, tmp_path, n_subjects=0)


def test_load_split_missing_part(tmp_path):
    D.phantom_generate(D.PhantomSpec(size=16, n_slices=1), tmp_path, n_subjects=1)
    with pytest.raises(ValueError):
        D.load_split(str(tmp_path), "test")


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1))
def test_model_range_round_trip(v):
    x = np.array([v], np.float32)
    assert abs(D.from_model(D.to_model(x))[0] - x[0]) < 1e-6


# ---------------------------------------------------------------- PGM
def test_pgm_half_is_128(tmp_path):
    D.export_pgm(np.full((4, 5), 0.5), tmp_path / "h.pgm")
    raw = (tmp_path / "h.pgm").read_bytes()
    assert raw.startswith(b"P5\n5 4\n255\n")
    assert set(D.read_pgm(tmp_path / "h.pgm").ravel()) == {128}


def test_pgm_clamps_and_rounds():
    q = np.frombuffer(D.pgm_bytes(np.array([[-1.0, 0.0, 1.0, 2.0, 1 / 255 * 0.5]]))[-5:], np.uint8)
    assert list(q) == [0, 0, 255, 255, 1]


def test_pgm_rejects_bad_input():
    with pytest.raises(ValueError):
        D.pgm_bytes(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        D.pgm_bytes(np.zeros((2, 2, 2)))


def test_generate_with_pgm(tmp_path):
    D.phantom_generate(D.PhantomSpec(size=16, n_slices=1), tmp_path, n_subjects=1, pgm=True)
    img = D.read_pgm(tmp_path / "s000" / "ct" / "000.pgm")
    assert img.shape == (16, 16)
