"""Command-line interface.

Verbs:
  sweep-sigma       train plain models across mismatch levels and measure
  distill-grid      teachers + baseline/distilled students over (sigma, sigma_t)
  train-teacher     train one teacher and save params, operator and train log
  eval              evaluate saved params under a saved operator
  plot-data         aggregate results.csv into per-figure plot files
  verify-gradients  finite-difference check of the training gradients

Exit codes: 0 success, 2 configuration/usage errors, 3 training or numerical
failures, 4 I/O errors.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .admm_net import load_admm, save_admm
from .config import EXPERIMENTS, SCALES, config_hash, load_config
from .detnet import load_detnet, save_detnet
from .distill import train_teacher, write_train_log
from .errors import (ConfigError, DimensionError, EmptyResultsError,
                     FormatError, ParameterError, SymbolError, TrainingError)
from .experiments import (FIGURES, build_mimo_task, build_spc_task,
                          emit_plot_data, evaluate_mimo, evaluate_spc,
                          run_distill_grid, run_sigma_sweep, training_config,
                          write_results, _mimo_rows, _spc_rows)
from .sensing import SensingOperator, load_operator, save_operator
from .seeding import derive_seed
from .distill import verify_gradients

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_IO = 4

# verify-gradients pass thresholds on the max relative error
GRAD_TOLERANCES = {"admm": 1e-4, "detnet": 1e-4, "linear": 1e-8}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML config file")
    common.add_argument("--out", metavar="DIR", help="output directory override")
    common.add_argument("--seed", type=int, help="base seed override")
    common.add_argument("--scale", choices=SCALES, help="preset scale override")
    common.add_argument("--threads", type=int, help="torch CPU thread count")
    common.add_argument("--data-dir", dest="data_dir", metavar="DIR",
                        help="image dataset directory (else $UNROLL_DATA_DIR)")
    common.add_argument("--experiment", choices=EXPERIMENTS,
                        help="experiment preset override")

    parser = argparse.ArgumentParser(
        prog="unrollkd",
        description="Distilling unrolled recovery networks under inexact "
                    "sensing operators.")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    sub.add_parser("sweep-sigma", parents=[common],
                   help="train plain models across mismatch levels")
    sub.add_parser("distill-grid", parents=[common],
                   help="run the (sigma, sigma_t) distillation grid")

    tt = sub.add_parser("train-teacher", parents=[common],
                        help="train and save a single teacher")
    tt.add_argument("--sigma-t", dest="sigma_t", type=float,
                    help="teacher mismatch level (default: first configured)")

    ev = sub.add_parser("eval", parents=[common],
                        help="evaluate saved parameters under a saved operator")
    ev.add_argument("--params", required=True, metavar="PATH",
                    help="ADM1 or DET1 parameter container")
    ev.add_argument("--operator", required=True, metavar="PATH",
                    help="SOP1 sensing operator container")

    pd = sub.add_parser("plot-data", parents=[common],
                        help="aggregate results into per-figure plot files")
    pd.add_argument("--figure", required=True, choices=sorted(FIGURES),
                    help="figure identifier")
    pd.add_argument("--results", metavar="PATH",
                    help="results CSV (default: <out>/results.csv)")

    vg = sub.add_parser("verify-gradients", parents=[common],
                        help="finite-difference gradient check")
    vg.add_argument("--network", choices=("admm", "detnet", "linear", "all"),
                    default="all")
    vg.add_argument("--loss", choices=("composite", "recon"), default="composite")
    return parser


def _overrides(args) -> dict:
    return {"seed": args.seed, "out_dir": args.out, "scale": args.scale,
            "threads": args.threads, "data_dir": args.data_dir,
            "experiment": args.experiment}


def _load(args, default_experiment) -> dict:
    cfg = load_config(args.config, default_experiment, _overrides(args))
    torch.set_num_threads(cfg["threads"])
    return cfg


def _cmd_sweep(args) -> int:
    cfg = _load(args, "spc_sweep")
    rows = run_sigma_sweep(cfg)
    csv_path, manifest_path = write_results(rows, cfg, verb="sweep-sigma")
    print(f"wrote {len(rows)} rows to {csv_path}")
    print(f"manifest: {manifest_path}")
    return EXIT_OK


def _cmd_grid(args) -> int:
    cfg = _load(args, "spc_distill")
    rows = run_distill_grid(cfg)
    csv_path, manifest_path = write_results(rows, cfg, verb="distill-grid")
    print(f"wrote {len(rows)} rows to {csv_path}")
    print(f"manifest: {manifest_path}")
    return EXIT_OK


def _cmd_train_teacher(args) -> int:
    cfg = _load(args, "spc_distill")
    if args.sigma_t is not None:
        sigma_t = float(args.sigma_t)
    elif cfg["sigma_t"]:
        sigma_t = float(cfg["sigma_t"][0])
    else:
        raise ConfigError("no sigma_t configured; pass --sigma-t")
    is_spc = cfg["experiment"].startswith("spc")
    task = build_spc_task(cfg) if is_spc else build_mimo_task(cfg)
    seed = derive_seed(cfg["seed"], "teacher", sigma_t)
    sigma_ref = max(max(float(s) for s in cfg["sigma"]), sigma_t)
    tcfg = training_config(cfg, sigma_ref, sigma_t, seed, distill=False)
    snap = train_teacher(tcfg, task)

    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    stem = f"teacher-{snap.kind}-st{sigma_t:g}"
    params_path = out / f"{stem}.params"
    if snap.kind == "admm":
        save_admm(snap.net, params_path)
        known = task.known
    else:
        save_detnet(snap.net, params_path)
        known = np.zeros((task.m, task.n))
    op = SensingOperator(known=known, unknown=snap.unknown, sigma=sigma_t,
                         seed=seed)
    op_path = out / f"{stem}.op"
    save_operator(op, op_path)
    log_path = out / f"{stem}-train-log.csv"
    write_train_log(snap.log, log_path)
    final = snap.log[-1]["composite"] if snap.log else float("nan")
    print(f"teacher sigma_t={sigma_t:g} final loss {final:.6f}")
    for path in (params_path, op_path, log_path):
        print(f"wrote {path}")
    return EXIT_OK


def _sniff_magic(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read(4)


def _cmd_eval(args) -> int:
    magic = _sniff_magic(args.params)
    if magic == b"ADM1":
        default_exp = "spc_distill"
    elif magic == b"DET1":
        default_exp = "mimo_distill"
    else:
        raise FormatError(f"{args.params}: unrecognized parameter container "
                          f"(magic {magic!r})")
    cfg = _load(args, default_exp)
    op = load_operator(args.operator)
    chash = config_hash(cfg)
    eval_seed = derive_seed(cfg["seed"], "eval")
    ev = cfg["evaluation"]
    dtype = (torch.float64 if cfg["training"]["dtype"] == "float64"
             else torch.float32)
    if magic == b"ADM1":
        net = load_admm(args.params, dtype=dtype)
        task = build_spc_task(cfg)
        if (op.m, op.n) != task.known.shape:
            raise ConfigError(
                f"operator is {op.m}x{op.n} but the configured task expects "
                f"{task.known.shape[0]}x{task.known.shape[1]}")
        metrics = evaluate_spc(net, task, op.unknown, known=op.known,
                               images=task.test if ev["images"] is None
                               else task.test[:ev["images"]],
                               seed=eval_seed)
        print(f"psnr {metrics['psnr']:.4f} dB")
        print(f"ssim {metrics['ssim']:.6f}")
        rows = _spc_rows(chash, cfg["experiment"], "eval", op.sigma, None, 0,
                         eval_seed, metrics, 0.0)
    else:
        net = load_detnet(args.params, dtype=dtype)
        task = build_mimo_task(cfg)
        if (op.m, op.n) != (task.m, task.n):
            raise ConfigError(
                f"operator is {op.m}x{op.n} but the configured task expects "
                f"{task.m}x{task.n}")
        bers = evaluate_mimo(net, task, op.unknown, eval_seed,
                             symbols=ev["symbols"], batch=ev["batch"])
        for snr, val in sorted(bers.items()):
            print(f"snr {snr:g} dB  ber {val:.6f}")
        rows = _mimo_rows(chash, cfg["experiment"], "eval", op.sigma, None, 0,
                          eval_seed, bers, 0.0)
    csv_path, _ = write_results(rows, cfg, verb="eval")
    print(f"appended {len(rows)} rows to {csv_path}")
    return EXIT_OK


def _cmd_plot_data(args) -> int:
    cfg = None
    if args.config is not None or args.experiment is not None:
        cfg = load_config(args.config, args.experiment, _overrides(args))
    out_dir = args.out or (cfg["out_dir"] if cfg else "results")
    results = args.results or str(Path(out_dir) / "results.csv")
    paths = emit_plot_data(results, args.figure, out_dir, cfg)
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_verify_gradients(args) -> int:
    if args.threads:
        torch.set_num_threads(args.threads)
    networks = (("admm", "detnet", "linear") if args.network == "all"
                else (args.network,))
    failed = []
    for network in networks:
        report = verify_gradients(network=network, loss=args.loss)
        tol = GRAD_TOLERANCES[network]
        ok = report["max_rel_err"] <= tol
        status = "PASS" if ok else "FAIL"
        print(f"{status} {network:7s} loss={report['loss']:9s} "
              f"params={report['param_count']:5d} "
              f"max_rel_err={report['max_rel_err']:.3e} (tol {tol:.0e}) "
              f"mean={report['mean_rel_err']:.3e} "
              f"elapsed={report['elapsed_s']:.1f}s")
        if not ok:
            failed.append(network)
    if failed:
        print(f"gradient verification failed for: {', '.join(failed)}",
              file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


_DISPATCH = {
    "sweep-sigma": _cmd_sweep,
    "distill-grid": _cmd_grid,
    "train-teacher": _cmd_train_teacher,
    "eval": _cmd_eval,
    "plot-data": _cmd_plot_data,
    "verify-gradients": _cmd_verify_gradients,
}


def main(argv=None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return _DISPATCH[args.verb](args)
    except (ConfigError, ParameterError, DimensionError, SymbolError,
            EmptyResultsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except FormatError as exc:
        print(f"file format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
