"""``fhdm`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 oracle-check failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import model as mlp
from .config import RunConfig, UsageError, default_threads, load_dataset, target_model, write_dataset
from .errors import FHDMError
from .rng import substream

log = logging.getLogger("fhdm")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_ORACLE = 0, 1, 2, 3


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _config(args) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    over = {k: getattr(args, k, None) for k in (
        "seed", "eps", "dt", "epochs", "batch_size", "learning_rate", "bridges_per_point", "target", "z0",
    )}
    if over.get("z0") is not None and len(over["z0"]) != base.d:
        raise UsageError(f"--z0 needs {base.d} entries")
    over["threads"] = args.threads if args.threads is not None else default_threads()
    return base.replace(**over)


# --- commands --------------------------------------------------------------------


def cmd_make_data(args) -> int:
    from .spectral import sample_target

    cfg = _config(args)
    if args.n < 1:
        raise UsageError("--n must be positive")
    hm = target_model(cfg.target)
    x = sample_target(hm, substream(cfg.seed, "data"), args.n)
    write_dataset(x, args.out)
    log.info("wrote %d points to %s", args.n, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import train, write_log

    cfg = _config(args)
    data = load_dataset(args.data, cfg.d)
    params, reports = train(data, cfg.init_params(), cfg.train_config())
    params.save(args.out)
    write_log(reports, args.log)
    return EXIT_OK


def cmd_sample(args) -> int:
    from .sampler import clip_eps, generate, write_diagnostics, write_samples

    cfg = _config(args)
    params = mlp.MlpParams.load(args.checkpoint)
    z0 = np.asarray(cfg.z0)
    eps = clip_eps(cfg.resolved_eps(), z0)
    samples, diag = generate(params, eps, z0, args.n, cfg.sim_config(), substream(cfg.seed, "generate"))
    write_samples(samples, args.out)
    if args.diag:
        with open(args.diag, "w") as fh:
            write_diagnostics(diag, fh)
    return EXIT_OK


EVAL_COLUMNS = ("n_samples", "tv", "tv_se", "baseline_tv", "baseline_tv_se", "chi2", "chi2_p",
                "score_mse", "score_mse_se")


def cmd_eval(args) -> int:
    from .evaluation import BinGrid, chi2_exit_test, empirical_tv, explicit_score_mse, harmonic_target_density
    from .geometry import sample_uniform_sphere

    cfg = _config(args)
    hm = target_model(cfg.target)
    dens = harmonic_target_density(hm)
    grid = BinGrid()
    x = load_dataset(args.samples, 3)
    tv, tv_se = empirical_tv(x, dens, grid, return_se=True)
    base = sample_uniform_sphere(3, substream(cfg.seed, "baseline"), x.shape[0])
    btv, btv_se = empirical_tv(base, dens, grid, return_se=True)
    chi2, p = chi2_exit_test(x, dens, grid)
    mse = mse_se = float("nan")
    if args.checkpoint:
        params = mlp.MlpParams.load(args.checkpoint)
        mse, mse_se = explicit_score_mse(params, hm, np.asarray(cfg.z0), cfg.resolved_eps(), cfg.eval_paths,
                                         cfg.sim_config(), substream(cfg.seed, "eval"))
    row = dict(n_samples=x.shape[0], tv=tv, tv_se=tv_se, baseline_tv=btv, baseline_tv_se=btv_se,
               chi2=chi2, chi2_p=p, score_mse=mse, score_mse_se=mse_se)
    with open(args.out, "w") as fh:
        fh.write(",".join(EVAL_COLUMNS) + "\n")
        fh.write(",".join(f"{row[k]:.10g}" if isinstance(row[k], float) else str(row[k]) for k in EVAL_COLUMNS) + "\n")
    print(f"tv {tv:.4f} +- {tv_se:.4f}  uniform baseline {btv:.4f}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    from .oracle_check import run_all

    results = run_all(fast=args.fast)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_ORACLE


def cmd_sweep(args) -> int:
    from .evaluation import median_tv_by_n, sweep

    cfg = _config(args)
    cfg.eps = None  # the sweep always uses the eps schedule
    cells = [(n, a, s) for n in args.ns for a in args.alphas for s in args.seeds]
    if not cells:
        raise UsageError("empty sweep grid")
    rows, slope = sweep(cells, cfg, oracle_drift=args.oracle_drift, csv_path=args.out, threads=cfg.threads)
    for n, m in median_tv_by_n(rows).items():
        print(f"n={n} median tv {m:.4f}")
    print(f"log-log slope {slope:.3f}")
    return EXIT_OK


def cmd_simulate_exit(args) -> int:
    from .paths import SimConfig, simulate_stopped_bm, stopped_bm_batch

    cfg = _config(args)
    z0 = np.asarray(cfg.z0)
    sim = SimConfig(dt=cfg.dt, dt_boundary_scale=cfg.kappa, t_max=cfg.t_max, threads=cfg.threads)
    if args.dump:
        path = simulate_stopped_bm(z0, args.R, sim, substream(cfg.seed, "dump"))
        with open(args.dump, "w") as fh:
            path.dump(fh)
    b = stopped_bm_batch(z0, args.R, args.n, sim, substream(cfg.seed, "exit"))
    ok = b.ok
    if args.out:
        np.savetxt(args.out, np.column_stack([b.times[ok], b.points[ok]]), fmt="%.17g")
    t = b.times[ok]
    print(f"mean exit time {t.mean():.5f} +- {t.std(ddof=1) / np.sqrt(t.size):.5f}  timeouts {b.n_timeouts}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker threads (default: FHDM_THREADS or CPU count)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="fhdm", description="First-hitting diffusion models on the sphere.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", parents=[common], help="sample a target density")
    p.add_argument("--target", help="uniform | y10 | vmf:kappa:axis | coefficient file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", parents=[common], help="fit the drift network")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--bridges", dest="bridges_per_point", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--z0", type=_floats)
    p.add_argument("--out", default="model.ckpt")
    p.add_argument("--log", default="train_log.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[common], help="generate samples from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--eps", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--z0", type=_floats)
    p.add_argument("--out", default="samples.txt")
    p.add_argument("--diag")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", parents=[common], help="binned TV and score metrics")
    p.add_argument("--samples", required=True)
    p.add_argument("--target")
    p.add_argument("--checkpoint", help="also report explicit score MSE")
    p.add_argument("--eps", type=float)
    p.add_argument("--out", default="metrics.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-check", parents=[common], help="closed-form validation battery")
    p.add_argument("--fast", action="store_true", help="reduced path counts")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("sweep", parents=[common], help="sample-size sweep")
    p.add_argument("--ns", type=_ints, default=(250, 1000, 4000))
    p.add_argument("--alphas", type=_floats, default=(2.0,))
    p.add_argument("--seeds", type=_ints, default=(0, 1, 2))
    p.add_argument("--target")
    p.add_argument("--epochs", type=int)
    p.add_argument("--oracle-drift", action="store_true", help="use the exact score instead of training")
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate-exit", parents=[common], help="stopped Brownian motion exits")
    p.add_argument("--z0", type=_floats)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--dt", type=float)
    p.add_argument("--out", help="write 't x1 .. xd' per path")
    p.add_argument("--dump", help="write one full path, one 't x1 .. xd' record per step")
    p.set_defaults(func=cmd_simulate_exit)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"fhdm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FHDMError, ValueError, RuntimeError, OSError) as exc:
        print(f"fhdm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
