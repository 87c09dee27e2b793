"""Unpaired adversarial training of the full translator, checkpoints and prediction.

One step on unpaired batches ``mr[B,2,H,W]`` (t1, t2) and ``ct[B,1,H,W]``:

1. non-diffusive round trips: ``fake_ct = G_mr2ct(mr)``, ``fake_mr = G_ct2mr(ct)``
   and their cycle reconstructions;
2. diffusive pseudo pair: ``x_t = q_sample(ct, t)``, ``x0_hat = denoiser(x_t, t,
   fusion(fake_mr))`` with the pseudo MR detached;
3. diffusive round trip from real MR: ``x0_mr = denoiser(q_sample(fake_ct), t',
   fusion(mr))`` must map back to ``mr`` through ``G_ct2mr`` and look like CT;
4. discriminator update on real vs detached fakes (CT, MR and the diffusive
   ``(x0, x_t)`` pair);
5. generator-side update on ``lambda_l1 * L1(x0_hat, ct) + lambda_gan * GAN + lambda_cycle * cycle``.

Step 3 is the only place the denoiser sees the fused features of real MR
during training, which is what it is conditioned on at inference.
"""
from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import data as D
from .config import RunConfig
from .fusion import FusionModule
from .objectives import Adam, PatchDiscriminator, loss_cycle, loss_gan, loss_l1, loss_total
from .tensor_core import F, Module, Tensor, backward, checkpoint, no_grad, reset_graph
from .translate import Denoiser, Generator, q_sample, translate

STREAM_INIT = 0x494E4954   # "INIT"
STREAM_TRAIN = 0x5452414E  # "TRAN"
LOG_COLUMNS = ("step", "loss_l1", "loss_gan_g", "loss_dis", "loss_cycle", "wallclock_ms")


class TrainingDiverged(FloatingPointError):
    pass


class GeneratorSide(Module):
    def __init__(self, rng, cfg: RunConfig):
        gw, res = cfg["model.gen_width"], cfg["model.resblocks"]
        self.g_mr2ct = Generator(rng, 1, 1, gw, res)
        self.g_ct2mr = Generator(rng, 1, 2, gw, res)
        self.fusion = FusionModule(rng, cfg.fusion_config())
        self.denoiser = Denoiser(rng, cfg["fusion.width"], cfg["model.unet_width"],
                                 cfg["model.temb_dim"], cfg["diffusion.T"])


class Discriminators(Module):
    def __init__(self, rng, cfg: RunConfig):
        w = cfg["model.disc_width"]
        self.d_ct = PatchDiscriminator(rng, 1, w)
        self.d_mr = PatchDiscriminator(rng, 2, w)
        self.d_diff = PatchDiscriminator(rng, 2, w)


class Models(Module):
    """Generator-side and discriminator parameters under disjoint ``gen.`` / ``dis.`` names."""

    def __init__(self, cfg: RunConfig, seed: int | None = None):
        seed = cfg["run.seed"] if seed is None else seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, STREAM_INIT]))
        self.gen = GeneratorSide(rng, cfg)
        self.dis = Discriminators(rng, cfg)


def drop_mask(drop: str) -> np.ndarray:
    m = np.ones((1, 2, 1, 1), dtype=np.float32)
    if drop == "t1":
        m[:, 0] = 0.0
    elif drop == "t2":
        m[:, 1] = 0.0
    elif drop != "none":
        raise ValueError(f"unknown input.drop {drop!r}")
    return m


def mr_proxy(mr: Tensor, drop: str) -> Tensor:
    """Single-channel input of the MR->CT generator from the available modality(ies)."""
    t1, t2 = mr[:, 0:1], mr[:, 1:2]
    if drop == "t1":
        return t2
    if drop == "t2":
        return t1
    return F.maximum(t1, t2)


@dataclass
class OptState:
    gen: Adam
    dis: Adam
    rng: np.random.Generator
    step: int = 0
    log: list = field(default_factory=list)


def make_opt_state(models: Models, cfg: RunConfig, seed: int | None = None) -> OptState:
    seed = cfg["run.seed"] if seed is None else seed
    betas = (cfg["optim.beta1"], cfg["optim.beta2"])
    return OptState(gen=Adam(models.gen.parameters(), cfg["optim.lr"], betas),
                    dis=Adam(models.dis.parameters(), cfg["optim.lr"], betas),
                    rng=np.random.default_rng(np.random.SeedSequence([seed, STREAM_TRAIN])))


def sample_batch(rng, mr: np.ndarray, ct: np.ndarray, batch_size: int):
    """Independent MR and CT draws, so no loss can exploit co-registration."""
    i = rng.choice(len(mr), size=min(batch_size, len(mr)), replace=False)
    j = rng.choice(len(ct), size=min(batch_size, len(ct)), replace=False)
    return {"mr": mr[i], "ct": ct[j]}


def _check(name, t: Tensor, step):
    v = float(t.data)
    if not np.isfinite(v):
        reset_graph()
        raise TrainingDiverged(f"non-finite {name} = {v} at step {step}")
    return v


def train_step(batch, models: Models, opt_state: OptState, cfg: RunConfig) -> dict:
    """One discriminator update followed by one generator-side update; returns the log record."""
    t0 = time.perf_counter()
    step = opt_state.step + 1
    gen, dis = models.gen, models.dis
    sched = cfg.schedule()
    drop, kind = cfg["input.drop"], cfg["loss.adversarial"]
    mask = Tensor(drop_mask(drop))
    mr = Tensor(batch["mr"]) * mask
    ct = Tensor(batch["ct"])
    B = ct.shape[0]
    rng = opt_state.rng

    fake_ct = gen.g_mr2ct(mr_proxy(mr, drop))
    fake_mr = gen.g_ct2mr(ct) * mask
    rec_mr = gen.g_ct2mr(fake_ct) * mask
    rec_ct = gen.g_mr2ct(mr_proxy(fake_mr, drop))

    t = int(rng.integers(1, sched.T + 1))
    noise = rng.standard_normal(ct.shape).astype(np.float32)
    x_t = q_sample(ct, t, Tensor(noise), sched)
    pseudo = fake_mr.detach()
    cond = gen.fusion(pseudo[:, 0:1], pseudo[:, 1:2])
    x0_hat = gen.denoiser(x_t, np.full(B, t), cond)

    t_mr = int(rng.integers(1, sched.T + 1))
    noise_mr = rng.standard_normal(ct.shape).astype(np.float32)
    x_t_mr = q_sample(fake_ct.detach(), t_mr, Tensor(noise_mr), sched)
    x0_mr = gen.denoiser(x_t_mr, np.full(B, t_mr), gen.fusion(mr[:, 0:1], mr[:, 1:2]))
    rec_mr_diff = gen.g_ct2mr(x0_mr) * mask

    # (1) discriminators on real vs detached fakes
    dis.zero_grad()
    real_pair = F.concat([ct, x_t], axis=1)
    fake_pair = F.concat([x0_hat.detach(), x_t], axis=1)
    l_dis = (loss_gan(dis.d_ct(fake_ct.detach()), dis.d_ct(ct), "discriminator", kind)
             + loss_gan(dis.d_mr(fake_mr.detach()), dis.d_mr(mr), "discriminator", kind)
             + loss_gan(dis.d_diff(fake_pair), dis.d_diff(real_pair), "discriminator", kind))
    v_dis = _check("loss_dis", l_dis, step)
    backward(l_dis, retain_graph=True)
    opt_state.dis.step()

    # (2) generators, fusion and denoiser
    gen.zero_grad()
    l_gan = (loss_gan(dis.d_ct(fake_ct), kind=kind)
             + loss_gan(dis.d_mr(fake_mr), kind=kind)
             + loss_gan(dis.d_diff(F.concat([x0_hat, x_t], axis=1)), kind=kind)
             + loss_gan(dis.d_ct(x0_mr), kind=kind))
    l_l1 = loss_l1(x0_hat, ct)
    l_cyc = (loss_cycle(mr, rec_mr) + loss_cycle(ct, rec_ct) + loss_cycle(mr, rec_mr_diff)) / 3.0
    parts = {"l1": l_l1, "gan": l_gan, "cycle": l_cyc}
    for k, v in parts.items():
        _check(f"loss_{k}", v, step)
    total = loss_total(parts, cfg.loss_weights())
    backward(total)
    opt_state.gen.step()
    dis.zero_grad()
    gen.zero_grad()

    opt_state.step = step
    rec = {"step": step, "loss_l1": float(l_l1.data), "loss_gan_g": float(l_gan.data),
           "loss_dis": v_dis, "loss_cycle": float(l_cyc.data),
           "wallclock_ms": (time.perf_counter() - t0) * 1e3}
    opt_state.log.append(rec)
    return rec


def write_log(path: str, log: list[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in log:
            w.writerow([r["step"]] + [f"{r[c]:.9g}" for c in LOG_COLUMNS[1:-1]] + [f"{r['wallclock_ms']:.3f}"])


def train(cfg: RunConfig, data_root: str, steps: int | None = None, log_path: str | None = None,
          progress=None) -> tuple[Models, OptState]:
    mr, ct, _ = D.load_split(data_root, "train")
    models = Models(cfg)
    state = make_opt_state(models, cfg)
    n = cfg["train.steps"] if steps is None else steps
    for _ in range(n):
        batch = sample_batch(state.rng, mr, ct, cfg["train.batch_size"])
        rec = train_step(batch, models, state, cfg)
        if progress is not None:
            progress(rec)
    if log_path:
        write_log(log_path, state.log)
    return models, state


# ---------------------------------------------------------------- checkpoints
def save_checkpoint(path: str, models: Models, cfg: RunConfig, data_fingerprint: str | None = None):
    from .config import dumps
    meta = {"config_fingerprint": cfg.fingerprint(), "config": dumps(cfg).replace("\n", ";"),
            "data_fingerprint": data_fingerprint or ""}
    checkpoint.save(path, models.state_dict(), meta)


def load_checkpoint(path: str) -> tuple[Models, RunConfig, dict]:
    from .config import loads
    arrays, meta = checkpoint.load(path)
    cfg = loads(meta["config"].replace(";", "\n"))
    if cfg.fingerprint() != meta.get("config_fingerprint"):
        raise checkpoint.CheckpointError("checkpoint config does not match its fingerprint")
    models = Models(cfg)
    models.load_state_dict(arrays)
    return models, cfg, meta


# ---------------------------------------------------------------- inference
def translate_pair(models: Models, cfg: RunConfig, t1: np.ndarray, t2: np.ndarray, seed: int) -> np.ndarray:
    """Model-range ([-1, 1]) ``t1, t2`` of shape ``[N, 1, H, W]`` -> CT prediction of the same shape."""
    m = drop_mask(cfg["input.drop"])
    out = translate(Tensor(t1 * m[:, 0:1]), Tensor(t2 * m[:, 1:2]), models.gen.fusion, models.gen.denoiser,
                    cfg.schedule(), seed)
    return out.data


def predict_split(models: Models, cfg: RunConfig, data_root: str, part: str = "test",
                  seed: int | None = None, batch: int = 8):
    """Translate every slice of one split; returns ``(pred[N,1,H,W], gt[N,1,H,W], keys)`` in [0, 1]."""
    mr, ct, keys = D.load_split(data_root, part)
    seed = cfg["eval.seed"] if seed is None else seed
    preds = []
    with no_grad():
        for k in range(0, len(mr), batch):
            sub = mr[k:k + batch]
            preds.append(translate_pair(models, cfg, sub[:, 0:1], sub[:, 1:2], seed + k))
    return D.from_model(np.concatenate(preds)), D.from_model(ct), keys


def write_predictions(out_dir: str, pred: np.ndarray, keys: list[str], data_fingerprint: str,
                      config_fingerprint: str):
    """Mirror ``<subject>/ct/<slice>.ten`` under ``out_dir``.

    ``fingerprint.txt`` carries the source dataset's fingerprint (so eval can
    refuse a mismatched ground truth) and ``config.txt`` the model's.
    """
    for img, key in zip(pred, keys):
        path = os.path.join(out_dir, key)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        checkpoint.write_tensor(path, img)
    with open(os.path.join(out_dir, "fingerprint.txt"), "w") as fh:
        fh.write(data_fingerprint + "\n")
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(config_fingerprint + "\n")
