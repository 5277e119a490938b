"""Command line entry point: ``mcm {synth,train,eval,infer,profile,plot}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from ..data import load_tensor, random_phantom_spec, save_tensor, synth_phantom
from ..encoder import WindowSpec
from ..model import predict_motion
from . import plot
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, dump_config, load_config
from .profiling import profile
from .train import evaluate, load_dataset, train

log = logging.getLogger("mcm")


def cmd_synth(args) -> int:
    out = Path(args.out)
    for i in range(args.n):
        spec = random_phantom_spec(args.seed + i, T=args.T, size=args.size, noise_sigma=args.noise)
        frames, gt, masks = synth_phantom(spec)
        d = out if args.n == 1 else out / f"seq_{i:03d}"
        d.mkdir(parents=True, exist_ok=True)
        save_tensor(d / "seq.mcmt", frames)
        save_tensor(d / "gt.mcmt", gt)
        save_tensor(d / "masks.mcmt", masks.float())
        (d / "phantom.json").write_text(json.dumps(spec.__dict__, indent=1), encoding="utf-8")
    log.info("wrote %d phantom(s) to %s", args.n, out)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.out:
        cfg.out = args.out
    dataset = load_dataset(cfg.data, crop=cfg.crop) if cfg.data else None
    model, state, records = train(cfg, dataset)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.mcmc", model, state, cfg)
    plot.write_loss_log(out / "loss.csv", records)
    (out / "config.cfg").write_text(dump_config(cfg), encoding="utf-8")
    print(out / "model.mcmc")
    return 0


def cmd_eval(args) -> int:
    model, _, cfg = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data, crop=cfg.crop)
    records = evaluate(model, dataset, frames=args.frames, extra={"K": cfg.K, "lam": cfg.lam})
    lines = "".join(json.dumps(r) + "\n" for r in records)
    if args.out:
        Path(args.out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    return 0


def cmd_infer(args) -> int:
    model, _, cfg = load_checkpoint(args.ckpt)
    seq = load_tensor(args.seq)
    model.eval()
    with torch.no_grad():
        phi = predict_motion(seq, WindowSpec(args.t, cfg.K, seq.shape[0]), model)
    save_tensor(args.out, phi.float().contiguous())
    return 0


def cmd_profile(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.size:
        cfg.crop = args.size
    if args.c_base:
        cfg.c_base = args.c_base
    rows = profile(cfg, calls=args.calls)
    for r in rows:
        print(json.dumps(r))
    return 0


def cmd_plot(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.records:
        print(plot.temporal_curves(args.records, out))
        sweep = plot.lambda_sweep(args.records, out)
        if sweep:
            print(sweep)
    if args.loss:
        print(plot.loss_curves(args.loss, out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcm", description="Sequential cardiac motion tracking")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write synthetic phantom sequences (MCMT)")
    s.add_argument("--out", required=True)
    s.add_argument("--T", type=int, default=10)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=1, help="number of sequences")
    s.add_argument("--noise", type=float, default=0.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config")
    s.add_argument("--out", help="output directory (overrides config)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="write metric records (JSON lines)")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--frames", type=int, nargs="*")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="estimate one motion field")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--seq", required=True)
    s.add_argument("--t", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("profile", help="memory and latency for N_f in {1,3,5}")
    s.add_argument("--config")
    s.add_argument("--size", type=int)
    s.add_argument("--c-base", type=int)
    s.add_argument("--calls", type=int, default=100)
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("plot", help="CSV + SVG curves from eval records and loss logs")
    s.add_argument("--records", nargs="*", default=[])
    s.add_argument("--loss", nargs="*", default=[])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
