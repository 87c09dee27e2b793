"""End-to-end acceptance checks, one test per criterion.

Every check records a PASS/FAIL line that is printed in the terminal summary.
The training experiments share one cache, so the dual-modality run of each
seed serves both the fusion and the ablation comparison.
"""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import psnr_loop, ssim_loop

from mm2ct import data as D
from mm2ct import experiments as E
from mm2ct.cli import main
from mm2ct.metrics import EvalError, SSIM_K1, eval_report, psnr, report_from_arrays, ssim
from mm2ct.sscan import SSMParams, selective_scan_chunked, selective_scan_seq
from mm2ct.tensor_core import Tensor, read_tensor, write_tensor
from mm2ct.tensor_core.checkpoint import CheckpointError
from mm2ct.training import (
    Models, load_checkpoint, predict_split, save_checkpoint, train, translate_pair, write_predictions,
)
from mm2ct.translate import DiffusionSchedule, q_sample, sample

SEEDS = (0, 1, 2)
RUN_BUDGET_S = 30 * 60


def record(name, ok, detail):
    ACCEPTANCE_LINES.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok


@pytest.fixture(scope="module")
def phantoms(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_data")
    D.phantom_generate(E.acceptance_config().phantom_spec(), root)
    return str(root)


@pytest.fixture(scope="module")
def cache():
    return {}


# ---------------------------------------------------------------- property checks
def test_gradient_suite():
    from mm2ct.gradsuite import TOLERANCE, run_suite
    t0 = time.perf_counter()
    results = run_suite()
    elapsed = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.error)
    bad = [r.name for r in results if not r.passed]
    names = {r.name for r in results}
    required = {"conv2d", "linear", "layer_norm", "instance_norm", "selective_scan", "mamba_block",
                "cross_modal_block", "dynamic_enhancement", "generator", "denoiser", "discriminator",
                "loss_total"}
    ok = not bad and required <= names and elapsed <= 120
    record("gradient suite", ok, f"{len(results)} blocks, worst {worst.name} {worst.error:.2e} "
                                 f"(tol {TOLERANCE:g}), {elapsed:.1f}s, failing {bad or 'none'}")
    assert ok


def test_scan_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        L = int(rng.integers(1, 257))
        C, N = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        p = SSMParams(rng, C, N)
        x = Tensor(rng.uniform(-1, 1, (L, C)).astype(np.float32))
        ys = selective_scan_seq(x, p, use_extension=False).data
        for chunk in (1, 2, 7, 16, L):
            worst = max(worst, float(np.max(np.abs(selective_scan_chunked(x, p, chunk).data - ys))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed <= 30
    record("scan equivalence", ok, f"100 trials, max |chunked - seq| {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_metric_oracles():
    rng = np.random.default_rng(7)
    dev = 0.0
    for _ in range(10):
        a, b = rng.uniform(size=(24, 24)), rng.uniform(size=(24, 24))
        dev = max(dev, abs(psnr(a, b) - psnr_loop(a, b)), abs(ssim(a, b) - ssim_loop(a, b)))
    ident = abs(ssim(a, a) - 1.0)
    c1 = SSIM_K1 ** 2
    const = abs(ssim(np.zeros((16, 16)), np.ones((16, 16))) - c1 / (1 + c1))
    ok = dev <= 1e-6 and ident <= 1e-9 and const <= 1e-9
    record("metric oracles", ok, f"oracle dev {dev:.1e}, identity dev {ident:.1e}, constant-pair dev {const:.1e}")
    assert ok


def test_diffusion_sanity():
    rng = np.random.default_rng(0)
    s = DiffusionSchedule(8)
    x0 = rng.uniform(-1, 1, (2, 1, 32, 32))
    out = sample(Tensor(np.zeros((2, 3, 32, 32))), lambda x_t, t, c: Tensor(x0), s, np.random.default_rng(1))
    rec_db = psnr(D.from_model(out.data), D.from_model(x0))
    n, worst_z = 10_000, 0.0
    for t in range(1, s.T + 1):
        xt = q_sample(np.full(n, 0.3), t, rng.standard_normal(n), s)
        ab = s.alpha_bars[t]
        z_mean = abs(xt.mean() - np.sqrt(ab) * 0.3) / np.sqrt((1 - ab) / n)
        z_var = abs(xt.var(ddof=1) - (1 - ab)) / ((1 - ab) * np.sqrt(2.0 / (n - 1)))
        worst_z = max(worst_z, z_mean, z_var)
    ok = rec_db > 40 and worst_z < 3
    record("diffusion sanity", ok, f"oracle reconstruction {rec_db:.1f} dB, worst q_sample z {worst_z:.2f}")
    assert ok


# ---------------------------------------------------------------- training experiments
def _progress(label):
    def cb(r):
        if r["step"] % 500 == 0:
            print(f"  {label} step {r['step']} l1 {r['loss_l1']:.4f}", flush=True)
    return cb


@pytest.mark.slow
def test_fusion_advantage(phantoms, cache):
    runs = E.modality_runs(E.acceptance_config(), phantoms, SEEDS, progress=_progress("modality"), cache=cache)
    print(E.modality_table(runs))
    mean = {k: np.mean([runs[s][k].psnr for s in SEEDS]) for k in ("t1+t2", "t1 only", "t2 only")}
    gap = min(mean["t1+t2"] - mean["t1 only"], mean["t1+t2"] - mean["t2 only"])
    slowest = max(r.seconds for s in SEEDS for r in runs[s].values())
    ok = gap >= 1.0 and slowest <= RUN_BUDGET_S
    record("fusion advantage", ok, f"dual {mean['t1+t2']:.2f} dB, t1 only {mean['t1 only']:.2f}, "
                                   f"t2 only {mean['t2 only']:.2f}; margin {gap:+.2f} dB (need >= 1.00); "
                                   f"slowest run {slowest / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_trained_beats_untrained(phantoms, cache):
    cfg = E.acceptance_config()
    runs = E.modality_runs(cfg, phantoms, SEEDS[:1], cache=cache)
    trained = runs[0]["t1+t2"].psnr
    pred, gt, keys = predict_split(Models(cfg), cfg, phantoms, "test")
    untrained = report_from_arrays(pred, gt, keys).mean_psnr
    ok = trained - untrained >= 6.0
    record("trained vs untrained (translate example)", ok,
           f"{trained:.2f} dB vs {untrained:.2f} dB at init, gain {trained - untrained:+.2f} (need >= 6)")
    assert ok


@pytest.mark.slow
def test_ablation_ordering(phantoms, cache):
    runs = E.ablation_runs(E.acceptance_config(), phantoms, SEEDS, progress=_progress("ablation"), cache=cache)
    table = E.ablation_table(runs)
    print(table)
    ordered = [s for s in SEEDS
               if runs[s]["mamba,de"].psnr >= runs[s]["mamba,no-de"].psnr >= runs[s]["no-mamba,no-de"].psnr]
    per_seed = "; ".join(f"seed {s}: " + "/".join(f"{runs[s][k].psnr:.2f}" for k in
                                                  ("mamba,de", "mamba,no-de", "no-mamba,no-de")) for s in SEEDS)
    rows = table.splitlines()
    ok = len(ordered) >= 2 and len(rows) == 4
    record("ablation ordering", ok, f"full/mamba-only/neither {per_seed}; ordered in {len(ordered)} of 3")
    assert ok


# ---------------------------------------------------------------- reproducibility
@pytest.mark.slow
def test_determinism(phantoms, tmp_path):
    cfg = E.acceptance_config()
    out = []
    for k in range(2):
        models, state = train(cfg, phantoms, steps=20, log_path=str(tmp_path / f"log{k}.csv"))
        pred, gt, keys = predict_split(models, cfg, phantoms, "test")
        mr, _, _ = D.load_split(phantoms, "test")
        img = translate_pair(models, cfg, mr[:1, 0:1], mr[:1, 1:2], seed=11)
        rep = report_from_arrays(pred, gt, keys, cfg.fingerprint(), D.read_fingerprint(phantoms))
        logs = [{c: r[c] for c in r if c != "wallclock_ms"} for r in state.log]
        out.append((logs, pred.tobytes(), img.tobytes(), rep.to_json()))
    same = [a == b for a, b in zip(*out)]
    ok = all(same)
    record("determinism", ok, "logs/predictions/translation/report identical: "
                              + "/".join("yes" if s else "no" for s in same))
    assert ok


@pytest.mark.slow
def test_checkpoint_and_fingerprints(phantoms, tmp_path):
    cfg = E.acceptance_config()
    rng = np.random.default_rng(3)
    # tensor files: arbitrary float32 bit patterns survive unchanged
    raw = rng.integers(0, 2 ** 32, size=(3, 5, 7), dtype=np.uint32).view(np.float32)
    write_tensor(tmp_path / "x.ten", raw)
    tensor_ok = read_tensor(tmp_path / "x.ten").tobytes() == raw.tobytes()

    models, _ = train(cfg, phantoms, steps=3)
    data_fp = D.read_fingerprint(phantoms)
    save_checkpoint(str(tmp_path / "m.ckpt"), models, cfg, data_fp)
    back, cfg2, meta = load_checkpoint(str(tmp_path / "m.ckpt"))
    a, b = models.state_dict(), back.state_dict()
    ckpt_ok = list(a) == list(b) and all(a[k].tobytes() == b[k].tobytes() for k in a) and cfg2 == cfg

    # foreign dataset: predict refuses without --force, eval refuses mismatched trees
    foreign = tmp_path / "foreign"
    D.phantom_generate(D.PhantomSpec(seed=99, n_slices=1), foreign)
    rc = main(["predict", "--ckpt", str(tmp_path / "m.ckpt"), "--data", str(foreign), "--out", str(tmp_path / "p")])
    pred, _, keys = predict_split(back, cfg2, phantoms, "test")
    write_predictions(str(tmp_path / "own"), pred, keys, data_fp, cfg.fingerprint())
    try:
        eval_report(str(tmp_path / "own"), str(foreign))
        eval_refused = False
    except EvalError:
        eval_refused = True
    try:
        from mm2ct.tensor_core import checkpoint
        arrays, m = checkpoint.load(str(tmp_path / "m.ckpt"))
        m["config_fingerprint"] = "0" * 16
        checkpoint.save(str(tmp_path / "bad.ckpt"), arrays, m)
        load_checkpoint(str(tmp_path / "bad.ckpt"))
        tamper_refused = False
    except CheckpointError:
        tamper_refused = True
    ok = tensor_ok and ckpt_ok and rc == 1 and eval_refused and tamper_refused
    record("checkpoint round trip and fingerprint gating", ok,
           f"tensor {tensor_ok}, checkpoint {ckpt_ok}, predict on foreign data rc={rc}, "
           f"eval mismatch refused {eval_refused}, tampered fingerprint refused {tamper_refused}")
    assert ok
