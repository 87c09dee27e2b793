import pytest

from mm2ct import data as D
from mm2ct import experiments as E
from mm2ct.config import RunConfig

TINY = {"data.size": 16, "data.n_slices": 1, "data.split": "2,0,1", "fusion.width": 4, "fusion.d_state": 2,
        "model.gen_width": 4, "model.unet_width": 4, "model.disc_width": 4, "model.resblocks": 1,
        "train.batch_size": 1}


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    cfg = RunConfig(TINY)
    root = tmp_path_factory.mktemp("exp")
    D.phantom_generate(cfg.phantom_spec(), root)
    return cfg, str(root)


def test_ablation_table_has_three_rows(tiny):
    runs = E.ablation_runs(*tiny, seeds=(0,), steps=1)
    lines = E.ablation_table(runs).splitlines()
    assert lines[0] == "Mamba module | DE  | PSNR  | SSIM"
    assert [ln.split("|")[0].strip() + "/" + ln.split("|")[1].strip() for ln in lines[1:]] == [
        "no/no", "yes/no", "yes/yes"]


def test_grids_share_the_full_model_run(tiny):
    cache = {}
    abl = E.ablation_runs(*tiny, seeds=(0,), steps=1, cache=cache)
    mod = E.modality_runs(*tiny, seeds=(0,), steps=1, cache=cache)
    assert len(cache) == 5
    assert abl[0]["mamba,de"].report is mod[0]["t1+t2"].report
    assert mod[0]["t1+t2"].label == "t1+t2"


def test_variant_seed_and_flags(tiny):
    mod = E.modality_runs(*tiny, seeds=(3,), steps=1)
    assert mod[3]["t1 only"].cfg["input.drop"] == "t2" and mod[3]["t1 only"].seed == 3
    assert "t2 only" in E.modality_table(mod)


def test_acceptance_config_fixed_keys():
    cfg = E.acceptance_config(run__seed=2)
    assert cfg["run.seed"] == 2 and cfg["train.steps"] == 2000 and cfg["data.size"] == 64
    assert cfg.phantom_spec().split == (9, 2, 4)
