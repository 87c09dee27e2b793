"""Command-line entry point: ``mm2ct <subcommand> ...``."""
from __future__ import annotations

import argparse
import hashlib
import sys

from . import config as C
from . import data as D


def _cfg(args) -> C.RunConfig:
    overrides = dict(C.parse_override(s) for s in (args.set or []))
    path = getattr(args, "config", None) or getattr(args, "spec", None)
    if path:
        return C.load(path, overrides)
    return C.RunConfig(overrides)


def _add_set(p):
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mm2ct", description="Multi-modal MR-to-CT translation at desk scale.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic phantom dataset")
    p.add_argument("--spec", help="config file (data.* keys)")
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", action="store_true", help="also export PGM previews")
    _add_set(p)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="per-step CSV log path")
    p.add_argument("--steps", type=int)
    p.add_argument("--force", action="store_true", help="train on a dataset whose fingerprint differs")
    _add_set(p)

    p = sub.add_parser("translate", help="translate one (t1, t2) slice pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--t1", required=True)
    p.add_argument("--t2", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pgm", help="also write a PGM preview here")

    p = sub.add_parser("predict", help="translate every slice of one split into a prediction tree")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("eval", help="PSNR / SSIM of a prediction tree against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--csv")
    p.add_argument("--json")
    p.add_argument("--force", action="store_true", help="ignore a fingerprint mismatch")

    for name, hlp in (("ablate", "Mamba / DE ablation grid"),
                      ("modality-ablation", "dual vs single-modality inputs")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config")
        p.add_argument("--data", required=True)
        p.add_argument("--seeds", type=int, nargs="+", default=[0])
        p.add_argument("--steps", type=int)
        _add_set(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable block")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench-scan", help="selective-scan benchmark (CSV)")
    p.add_argument("--lengths", type=int, nargs="+", default=[256, 1024, 4096])
    p.add_argument("--channels", type=int, nargs="+", default=[4, 32])
    p.add_argument("--d-state", type=int, default=8)
    p.add_argument("--chunk", type=int, default=64)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out")
    return ap


# ---------------------------------------------------------------- subcommands
def cmd_gen_data(args):
    spec = _cfg(args).phantom_spec()
    split = D.phantom_generate(spec, args.out, pgm=args.pgm)
    counts = {k: sum(v == k for v in split.values()) for k in ("train", "val", "test")}
    print(f"wrote {len(split)} subjects to {args.out} {counts} fingerprint {spec.fingerprint()}")


def _check_data(cfg, root, force):
    have, want = D.read_fingerprint(root), cfg.phantom_spec().fingerprint()
    if have != want and not force:
        raise RuntimeError(f"dataset fingerprint {have} does not match config data.* ({want}); use --force")
    return have


def cmd_train(args):
    from .training import save_checkpoint, train, write_log
    cfg = _cfg(args)
    data_fp = _check_data(cfg, args.data, args.force)
    n = args.steps if args.steps is not None else cfg["train.steps"]
    every = max(1, n // 20)

    def progress(r):
        if r["step"] % every == 0 or r["step"] == n:
            print(f"step {r['step']:5d}  l1 {r['loss_l1']:.4f}  gan {r['loss_gan_g']:.3f}  "
                  f"dis {r['loss_dis']:.3f}  cycle {r['loss_cycle']:.4f}", flush=True)

    models, state = train(cfg, args.data, steps=n, progress=progress)
    save_checkpoint(args.out, models, cfg, data_fp)
    if args.log:
        write_log(args.log, state.log)
    print(f"saved {args.out} (config {cfg.fingerprint()})")


def cmd_translate(args):
    from .tensor_core import read_tensor, write_tensor
    from .training import load_checkpoint, translate_pair
    models, cfg, _ = load_checkpoint(args.ckpt)
    t1, t2 = read_tensor(args.t1), read_tensor(args.t2)
    if t1.shape != t2.shape or t1.ndim != 3 or t1.shape[0] != 1:
        raise RuntimeError(f"t1/t2 must both be [1, H, W] tensors, got {t1.shape} and {t2.shape}")
    out = translate_pair(models, cfg, D.to_model(t1)[None], D.to_model(t2)[None], args.seed)
    img = D.from_model(out[0])
    write_tensor(args.out, img)
    if args.pgm:
        D.export_pgm(img, args.pgm)
    digest = hashlib.sha256(open(args.out, "rb").read()).hexdigest()[:16]
    print(f"wrote {args.out} sha256 {digest}")


def cmd_predict(args):
    from .training import load_checkpoint, predict_split, write_predictions
    models, cfg, meta = load_checkpoint(args.ckpt)
    data_fp = D.read_fingerprint(args.data)
    if meta.get("data_fingerprint") and meta["data_fingerprint"] != data_fp and not args.force:
        raise RuntimeError(f"checkpoint was trained on data {meta['data_fingerprint']}, "
                           f"not {data_fp}; use --force")
    pred, _, keys = predict_split(models, cfg, args.data, args.split, seed=args.seed)
    write_predictions(args.out, pred, keys, data_fp or "", cfg.fingerprint())
    print(f"wrote {len(keys)} predictions to {args.out}")


def cmd_eval(args):
    from .metrics import eval_report
    rep = eval_report(args.pred, args.gt, force=args.force)
    if args.csv:
        rep.write_csv(args.csv)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(rep.to_json())
    print(rep.table())
    print(f"{len(rep.files)} images; model {rep.fingerprint}; data {rep.dataset_id}")


def cmd_ablate(args, kind="ablate"):
    from . import experiments as E
    cfg = _cfg(args)
    _check_data(cfg, args.data, False)

    def progress(r):
        if r["step"] % 500 == 0:
            print(f"  step {r['step']}  l1 {r['loss_l1']:.4f}", flush=True)

    if kind == "ablate":
        runs = E.ablation_runs(cfg, args.data, args.seeds, args.steps, progress)
        print(E.ablation_table(runs))
    else:
        runs = E.modality_runs(cfg, args.data, args.seeds, args.steps, progress)
        print(E.modality_table(runs))


def cmd_gradcheck(args):
    from .gradsuite import format_results, run_suite
    results = run_suite(seed=args.seed)
    print(format_results(results))
    bad = [r.name for r in results if not r.passed]
    if bad:
        print(f"FAILED: {', '.join(bad)}")
        return 1
    print("all blocks pass")
    return 0


def cmd_bench(args):
    from .bench import bench_scan, to_csv
    from .sscan import backend
    rows = bench_scan(args.lengths, args.channels, args.d_state, args.chunk, args.repeats)
    text = to_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    print(f"# backend: {backend.BACKEND}", file=sys.stderr)


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "translate": cmd_translate, "predict": cmd_predict,
    "eval": cmd_eval, "ablate": cmd_ablate,
    "modality-ablation": lambda a: cmd_ablate(a, "modality"),
    "gradcheck": cmd_gradcheck, "bench-scan": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on unknown flags
    try:
        rc = COMMANDS[args.cmd](args)
    except C.ConfigError as e:
        parser.print_usage(sys.stderr)
        print(f"mm2ct: config error: {e}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, OSError, FloatingPointError) as e:
        print(f"mm2ct: error: {e}", file=sys.stderr)
        return 1
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
