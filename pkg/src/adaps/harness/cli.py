"""Command line entry point: ``adaps run | ablate | oracle-check | info``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .. import KERNEL_BACKEND, __version__
from ..errors import AdapsError
from ..nonlinear import NonlinearOperator
from ..schedule import make_linear_schedule, respace, step_coeffs
from .config import TASKS, default_config, load_config
from .experiment import AXES, build_task, run_ablation, run_experiment

log = logging.getLogger("adaps")


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _criteria(text):
    out = set()
    for part in text.split(","):
        lo, _, hi = part.partition("-")
        out.update(range(int(lo), int(hi or lo) + 1))
    if not out <= set(range(1, 11)):
        raise argparse.ArgumentTypeError("criteria are numbered 1-10")
    return sorted(out)


def _load(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = default_config(args.task)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.jobs is not None:
        changes["jobs"] = args.jobs
    if args.out is not None:
        changes["out"] = args.out
    return cfg.replace(**changes) if changes else cfg


def cmd_run(args):
    cfg = _load(args)
    rec = run_experiment(cfg)
    print(f"task {rec.task}: psnr {rec.psnr:.3f} dB, mse {rec.mse:.6g}, w1 {rec.w1}, mean xi {rec.mean_xi:.4g}")
    if cfg.out:
        print(f"outputs in {cfg.out}")
    return 0


def cmd_ablate(args):
    cfg = _load(args)
    values = [v for v in args.values.split(",") if v.strip()]
    rows = run_ablation(cfg, args.axis, values)
    for row in rows:
        print(f"{args.axis}={row['value']}: psnr {row['psnr']:.3f}, mse {row['mse']:.6g}, w1 {row['w1']}")
    if not rows:
        print("no values given; empty table")
    return 0


def cmd_oracle_check(args):
    from .checks import run_checks

    results = run_checks(args.only, stream=sys.stdout)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


def cmd_info(args):
    cfg = _load(args)
    sched = make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    resp = respace(sched, cfg.steps)
    print(f"adaps {__version__}, kernel backend {KERNEL_BACKEND}")
    print(f"task {cfg.task}, chains {cfg.chains}, seed {cfg.seed}, sigma_y {cfg.sigma_y} (effective {cfg.effective_sigma_y})")
    print(f"schedule T={sched.T} beta [{cfg.beta_start}, {cfg.beta_end}], alpha_bar_T {sched.alpha_bar(sched.T):.3e}")
    print(f"respaced N={resp.steps}, eta={cfg.eta}")
    for pos in sorted({resp.steps - 1, resp.steps // 2, 0}, reverse=True):
        c = step_coeffs(resp, pos, cfg.eta)
        print(f"  t={c.t:4d} -> {c.t_prev:4d}: abar {c.abar:.4e}, gamma {c.gamma:.4e}, sigma {c.sigma:.4e}")
    task = build_task(cfg)
    op = task.op
    if isinstance(op, NonlinearOperator):
        print(f"operator nonlinear {type(op).__name__}, {op.in_dim} -> {op.out_dim}")
    else:
        print(f"operator {op!r}")
        if op.in_dim * op.out_dim <= 65536:
            s = np.linalg.svd(op.to_dense(), compute_uv=False)
            print(f"  singular values max {s.max():.4e}, min {s.min():.4e}")
    print(f"prior {task.prior.kind}, dim {task.prior.dim}")
    g = cfg.guidance
    print("guidance off" if g is None else f"guidance g={g.g_kind} d={g.d_kind} xi={g.label} normalize_g={g.normalize_g}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="adaps", description="Adaptive posterior diffusion sampling experiments.")
    p.add_argument("--version", action="version", version=f"adaps {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--config", help="INI experiment config")
        src.add_argument("--task", choices=TASKS, default="gmm-1d", help="built-in task defaults (no --config)")
        sp.add_argument("--seed", type=_u64, help="override [experiment] seed")
        sp.add_argument("--jobs", type=_positive, help="worker threads for chains")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("run", help="run one experiment")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("ablate", help="sweep one axis with paired seeds")
    common(sp)
    sp.add_argument("--axis", required=True, choices=AXES)
    sp.add_argument("--values", required=True, help="comma-separated values, e.g. adaptive,fixed:1,fixed:2")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("oracle-check", help="run the acceptance criteria")
    sp.add_argument("--only", type=_criteria, default=list(range(1, 10)), help="criteria, e.g. 1-9 or 2,5")
    sp.set_defaults(func=cmd_oracle_check)

    sp = sub.add_parser("info", help="schedule and operator diagnostics")
    common(sp)
    sp.set_defaults(func=cmd_info)
    return p


def main(argv=None):
    level = os.environ.get("ADAPS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AdapsError as exc:
        print(f"adaps: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"adaps: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
