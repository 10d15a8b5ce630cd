"""Experiment drivers: mismatch sweeps, distillation grids, result files.

A run produces a list of flat result rows (one metric value per row), appends
them to ``results.csv`` under the configured output directory, and writes a
JSON manifest capturing the exact config, its hash, and the code revision.
``emit_plot_data`` turns accumulated rows into per-figure CSV + gnuplot data
files with a sidecar schema description.
"""

import csv
import json
import logging
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__ as _pkg_version
from .config import canonical_json, config_hash
from .data import gen_bpsk_batch, load_image_dataset
from .detnet import hard_decision
from .distill import (DistillationConfig, MimoTask, SpcTask, train_baseline,
                      train_student, train_teacher)
from .errors import ConfigError, EmptyResultsError
from .metrics import ber, psnr, ssim
from .seeding import derive_seed
from .sensing import sample_unknown

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["config_hash", "experiment", "variant", "sigma", "sigma_t",
                  "snr_db", "repetition", "seed", "metric", "value", "wall_ms"]
# columns holding wall-clock timings; excluded from determinism comparisons
TIMING_COLUMNS = ("wall_ms",)

VARIANT_PLAIN = "plain"
VARIANT_TEACHER = "teacher"
VARIANT_BASELINE = "student_baseline"
VARIANT_DISTILLED = "student_distilled"


# ---------------------------------------------------------------------------
# Task and training-config construction from a resolved config dict
# ---------------------------------------------------------------------------

def resolve_data_dir(cfg: dict):
    """Dataset directory: config value, else UNROLL_DATA_DIR, else None."""
    if cfg["dataset"]["data_dir"]:
        return cfg["dataset"]["data_dir"]
    return os.environ.get("UNROLL_DATA_DIR") or None


def build_spc_task(cfg: dict) -> SpcTask:
    ds = cfg["dataset"]
    side = cfg["geometry"]["image_side"]
    data = load_image_dataset(resolve_data_dir(cfg), ds["train"], ds["val"],
                              ds["test"], seed=derive_seed(cfg["seed"], "data"),
                              source=ds["source"])
    m = cfg["geometry"]["snapshots"] or (side * side) // 4
    return SpcTask(train=data.train, val=data.val, test=data.test, m=m,
                   noise_snr_db=cfg["training"]["noise_snr_db"])


def build_mimo_task(cfg: dict) -> MimoTask:
    geo = cfg["geometry"]
    lo, hi = cfg["measurement"]["snr_train"]
    return MimoTask(tx=geo["tx"], rx=geo["rx"],
                    complex_antennas=geo["complex_antennas"],
                    snr_train=(float(lo), float(hi)),
                    test_snrs=tuple(float(s) for s in cfg["measurement"]["snr_test"]))


def training_config(cfg: dict, sigma: float, sigma_t: float, seed: int,
                    distill: bool) -> DistillationConfig:
    """Map the experiment config onto one training run's knobs."""
    tr = cfg["training"]
    net = cfg["network"]
    kind = "admm" if cfg["experiment"].startswith("spc") else "detnet"
    return DistillationConfig(
        network=kind, sigma=sigma, sigma_t=sigma_t,
        lambda_grad=tr["lambda_grad"] if distill else 0.0,
        lambda_o=tr["lambda_o"] if distill else 0.0,
        stages=net["stages"], seed=seed, dtype=tr["dtype"], lr=tr["lr"],
        lr_decay_factor=tr["lr_decay_factor"], lr_decay_every=tr["lr_decay_every"],
        batch_size=tr["batch_size"], epochs=tr["epochs"],
        iterations=tr["iterations"], channels=net["channels"],
        hidden=net["hidden"], aux=net["aux"], soft_sign_t=net["soft_sign_t"],
        share_noise=tr["share_noise"], kd_weight_offset=tr["kd_weight_offset"],
        recon_weight_offset=tr["recon_weight_offset"])


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate_spc(net, task: SpcTask, unknown: np.ndarray, images=None,
                 batch: int = 100, seed: int = 0, known=None) -> dict:
    """Mean per-image PSNR and SSIM of reconstructions on held-out images.

    Measurements use the composite operator (known + unknown); the network
    only ever sees the known part. ``images`` defaults to the task test set.
    """
    if images is None:
        images = task.test
    if known is None:
        known = task.known
    dtype = next(net.parameters()).dtype
    side = images.shape[-1]
    flat = torch.as_tensor(images.reshape(images.shape[0], -1), dtype=dtype)
    # operators loaded from containers arrive as read-only arrays
    A_known = torch.as_tensor(np.array(known, dtype=np.float64), dtype=dtype)
    A_comp = torch.as_tensor(known + unknown, dtype=dtype)
    psnrs, ssims = [], []
    net.eval()
    with torch.no_grad():
        for start in range(0, flat.shape[0], batch):
            x = flat[start:start + batch]
            y = x @ A_comp.T
            if task.noise_snr_db is not None:
                rng = np.random.default_rng(derive_seed(seed, "eval-noise", start))
                normal = torch.as_tensor(rng.standard_normal(tuple(y.shape)),
                                         dtype=dtype)
                power = (y ** 2).mean(dim=1, keepdim=True)
                var = power / (10.0 ** (task.noise_snr_db / 10.0))
                y = y + normal * torch.sqrt(var)
            x_hat, _ = net(y, A_known)
            ref = x.numpy().reshape(-1, side, side)
            rec = x_hat.numpy().reshape(-1, side, side)
            for i in range(ref.shape[0]):
                psnrs.append(psnr(ref[i], rec[i]))
                ssims.append(ssim(ref[i], rec[i]))
    return {"psnr": float(np.mean(psnrs)), "ssim": float(np.mean(ssims))}


def evaluate_mimo(net, task: MimoTask, unknown: np.ndarray, seed: int,
                  symbols: int = 10000, batch: int = 500, snrs=None) -> dict:
    """Bit error rate per test SNR over freshly drawn symbols and channels.

    The same ``seed`` reproduces the exact evaluation draws, so competing
    models can be compared on common random numbers.
    """
    if snrs is None:
        snrs = task.test_snrs
    dtype = next(net.parameters()).dtype
    unknown_t = torch.as_tensor(np.array(unknown, dtype=np.float64), dtype=dtype)
    out = {}
    net.eval()
    with torch.no_grad():
        for snr in snrs:
            errors, total = 0, 0
            n_batches = math.ceil(symbols / batch)
            for i in range(n_batches):
                b = min(batch, symbols - i * batch)
                x = gen_bpsk_batch(task.n, b, derive_seed(seed, "eval-sym", float(snr), i))
                A_k = torch.as_tensor(
                    task.channel_batch(b, derive_seed(seed, "eval-chan", float(snr), i)),
                    dtype=dtype)
                xt = torch.as_tensor(x, dtype=dtype)
                clean = torch.einsum("bmn,bn->bm", A_k + unknown_t, xt)
                rng = np.random.default_rng(derive_seed(seed, "eval-noise", float(snr), i))
                normal = torch.as_tensor(rng.standard_normal(tuple(clean.shape)),
                                         dtype=dtype)
                power = (clean ** 2).mean(dim=1, keepdim=True)
                var = power / (10.0 ** (float(snr) / 10.0))
                y = clean + normal * torch.sqrt(var)
                x_hat, _ = net(y, A_k)
                decided = hard_decision(x_hat)
                errors += int(np.sum(decided != x))
                total += x.size
            out[float(snr)] = errors / total
    return out


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------

def _row(cfg_hash, experiment, variant, sigma, sigma_t, snr_db, repetition,
         seed, metric, value, wall_ms):
    return {"config_hash": cfg_hash, "experiment": experiment,
            "variant": variant, "sigma": sigma, "sigma_t": sigma_t,
            "snr_db": snr_db, "repetition": repetition, "seed": seed,
            "metric": metric, "value": value, "wall_ms": wall_ms}


def _spc_rows(chash, experiment, variant, sigma, sigma_t, rep, seed, metrics,
              wall_ms):
    return [_row(chash, experiment, variant, sigma, sigma_t, None, rep, seed,
                 name, metrics[name], wall_ms) for name in ("psnr", "ssim")]


def _mimo_rows(chash, experiment, variant, sigma, sigma_t, rep, seed, bers,
               wall_ms):
    return [_row(chash, experiment, variant, sigma, sigma_t, snr, rep, seed,
                 "ber", val, wall_ms) for snr, val in sorted(bers.items())]


def run_sigma_sweep(cfg: dict) -> list:
    """Train a plain model per (sigma, repetition) and measure recovery."""
    if not cfg["experiment"].endswith("_sweep"):
        raise ConfigError(
            f"sweep-sigma needs a *_sweep experiment, got {cfg['experiment']!r}")
    chash = config_hash(cfg)
    is_spc = cfg["experiment"].startswith("spc")
    task = build_spc_task(cfg) if is_spc else build_mimo_task(cfg)
    ev = cfg["evaluation"]
    rows = []
    for rep in range(cfg["repetitions"]):
        # one seed per repetition, shared across sigma: the unknown parts then
        # form a nested family (same direction, growing magnitude), which
        # isolates the effect of the mismatch level
        rep_seed = derive_seed(cfg["seed"], "rep", rep)
        eval_seed = derive_seed(rep_seed, "eval")
        for sigma in cfg["sigma"]:
            t0 = time.perf_counter()
            tcfg = training_config(cfg, float(sigma), 0.0, rep_seed, distill=False)
            result = train_baseline(tcfg, task)
            if is_spc:
                metrics = evaluate_spc(result.net, task, result.unknown,
                                       images=_eval_images(task, ev),
                                       seed=eval_seed)
                wall = (time.perf_counter() - t0) * 1e3
                rows += _spc_rows(chash, cfg["experiment"], VARIANT_PLAIN,
                                  float(sigma), None, rep, rep_seed, metrics, wall)
                logger.info("sweep sigma=%.2f rep=%d psnr=%.2f ssim=%.4f",
                            sigma, rep, metrics["psnr"], metrics["ssim"])
            else:
                bers = evaluate_mimo(result.net, task, result.unknown, eval_seed,
                                     symbols=ev["symbols"], batch=ev["batch"])
                wall = (time.perf_counter() - t0) * 1e3
                rows += _mimo_rows(chash, cfg["experiment"], VARIANT_PLAIN,
                                   float(sigma), None, rep, rep_seed, bers, wall)
                logger.info("sweep sigma=%.2f rep=%d ber=%s", sigma, rep,
                            {k: round(v, 5) for k, v in bers.items()})
    return rows


def _eval_images(task: SpcTask, ev: dict):
    if ev["images"] is None:
        return task.test
    return task.test[:ev["images"]]


def run_distill_grid(cfg: dict) -> list:
    """Teachers per sigma_t, then baseline + distilled students per sigma.

    Students within one repetition share their seed (identical init, data
    order and unknown part), so the teacher is the only varied factor.
    Pairs with sigma_t >= sigma are skipped with a warning.
    """
    if not cfg["experiment"].endswith("_distill"):
        raise ConfigError(
            f"distill-grid needs a *_distill experiment, got {cfg['experiment']!r}")
    chash = config_hash(cfg)
    is_spc = cfg["experiment"].startswith("spc")
    task = build_spc_task(cfg) if is_spc else build_mimo_task(cfg)
    ev = cfg["evaluation"]
    rows = []

    def measure(net, unknown, eval_seed):
        if is_spc:
            return evaluate_spc(net, task, unknown,
                                images=_eval_images(task, ev), seed=eval_seed)
        return evaluate_mimo(net, task, unknown, eval_seed,
                             symbols=ev["symbols"], batch=ev["batch"])

    def emit(variant, sigma, sigma_t, rep, seed, metrics, wall):
        maker = _spc_rows if is_spc else _mimo_rows
        return maker(chash, cfg["experiment"], variant, sigma, sigma_t, rep,
                     seed, metrics, wall)

    for rep in range(cfg["repetitions"]):
        rep_seed = derive_seed(cfg["seed"], "rep", rep)
        eval_seed = derive_seed(rep_seed, "eval")
        teachers = {}
        for sigma_t in cfg["sigma_t"]:
            t0 = time.perf_counter()
            tseed = derive_seed(rep_seed, "teacher", float(sigma_t))
            tcfg = training_config(cfg, max(cfg["sigma"]), float(sigma_t),
                                   tseed, distill=False)
            teachers[float(sigma_t)] = train_teacher(tcfg, task)
            metrics = measure(teachers[float(sigma_t)].net,
                              teachers[float(sigma_t)].unknown, eval_seed)
            wall = (time.perf_counter() - t0) * 1e3
            rows += emit(VARIANT_TEACHER, float(sigma_t), float(sigma_t), rep,
                         tseed, metrics, wall)
            logger.info("teacher sigma_t=%.2f rep=%d trained", sigma_t, rep)
        for sigma in cfg["sigma"]:
            sseed = derive_seed(rep_seed, "student", float(sigma))
            t0 = time.perf_counter()
            bcfg = training_config(cfg, float(sigma), 0.0, sseed, distill=False)
            base = train_baseline(bcfg, task)
            metrics = measure(base.net, base.unknown, eval_seed)
            wall = (time.perf_counter() - t0) * 1e3
            rows += emit(VARIANT_BASELINE, float(sigma), None, rep, sseed,
                         metrics, wall)
            logger.info("baseline sigma=%.2f rep=%d done", sigma, rep)
            for sigma_t in cfg["sigma_t"]:
                if float(sigma_t) >= float(sigma):
                    logger.warning(
                        "skipping teacher sigma_t=%.2f for sigma=%.2f: "
                        "teacher mismatch must be strictly smaller", sigma_t, sigma)
                    continue
                t0 = time.perf_counter()
                scfg = training_config(cfg, float(sigma), float(sigma_t),
                                       sseed, distill=True)
                student = train_student(scfg, teachers[float(sigma_t)], task)
                metrics = measure(student.net, student.unknown, eval_seed)
                wall = (time.perf_counter() - t0) * 1e3
                rows += emit(VARIANT_DISTILLED, float(sigma), float(sigma_t),
                             rep, sseed, metrics, wall)
                logger.info("distilled sigma=%.2f sigma_t=%.2f rep=%d done",
                            sigma, sigma_t, rep)
    return rows


# ---------------------------------------------------------------------------
# Results persistence
# ---------------------------------------------------------------------------

def _fmt_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results(rows: list, cfg: dict, verb: str = "run"):
    """Append rows to <out_dir>/results.csv and write the run manifest.

    Returns (csv_path, manifest_path). The CSV is append-only so successive
    runs accumulate; the manifest is keyed by config hash and overwritten
    deterministically when the same config is rerun.
    """
    if not rows:
        raise EmptyResultsError("run produced no result rows")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    new_file = not csv_path.exists()
    with open(csv_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([_fmt_cell(row[c]) if c != "wall_ms"
                             else f"{row[c]:.3f}" for c in RESULT_COLUMNS])
    chash = config_hash(cfg)
    manifest = {
        "verb": verb,
        "config_hash": chash,
        "config": json.loads(canonical_json(cfg)),
        "git_revision": _git_revision(),
        "seed": cfg["seed"],
        "repetition_seeds": [derive_seed(cfg["seed"], "rep", r)
                             for r in range(cfg["repetitions"])],
        "rows_written": len(rows),
        "package_version": _pkg_version,
        "python": sys.version.split()[0],
        "torch": torch.__version__,
        "numpy": np.__version__,
        "created_unix": time.time(),
    }
    manifest_path = out / f"manifest-{chash[:12]}.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, manifest_path


def _git_revision() -> str:
    try:
        proc = subprocess.run(["git", "rev-parse", "HEAD"],
                              cwd=Path(__file__).resolve().parent,
                              capture_output=True, text=True, timeout=10)
        if proc.returncode == 0:
            return proc.stdout.strip()
    except OSError:
        pass
    return "unknown"


def read_results(path) -> list:
    """Load a results CSV back into typed row dicts."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in RESULT_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise EmptyResultsError(
                f"{path}: not a results table (missing columns {missing})")
        for raw in reader:
            row = dict(raw)
            for key in ("sigma", "sigma_t", "snr_db", "value", "wall_ms"):
                row[key] = float(raw[key]) if raw[key] != "" else None
            row["repetition"] = int(raw["repetition"])
            row["seed"] = int(raw["seed"])
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------

# figure id -> (experiment, metric, x-axis column)
FIGURES = {
    "sweep-psnr": ("spc_sweep", "psnr", "sigma"),
    "sweep-ssim": ("spc_sweep", "ssim", "sigma"),
    "sweep-ber": ("mimo_sweep", "ber", "sigma"),
    "distill-psnr": ("spc_distill", "psnr", "sigma"),
    "distill-ssim": ("spc_distill", "ssim", "sigma"),
    "distill-ber": ("mimo_distill", "ber", "snr_db"),
}


def _series_name(figure: str, row: dict) -> str:
    variant = row["variant"]
    if figure.startswith("sweep-"):
        if figure == "sweep-ber":
            return f"snr={row['snr_db']:g}"
        return variant
    if figure == "distill-ber":
        name = f"sigma={row['sigma']:g} {variant}"
        if variant in (VARIANT_DISTILLED, VARIANT_TEACHER):
            name += f" sigma_t={row['sigma_t']:g}"
        return name
    if variant == VARIANT_BASELINE:
        return variant
    return f"{variant} sigma_t={row['sigma_t']:g}"


def _expected_cells(figure: str, cfg: dict):
    """(sigma, sigma_t) pairs a complete run of ``cfg`` would cover."""
    sigmas = [float(s) for s in cfg["sigma"]]
    if figure.startswith("sweep-"):
        return {(s, None) for s in sigmas}
    cells = {(s, None) for s in sigmas}
    for t in cfg["sigma_t"]:
        cells.add((float(t), float(t)))  # the teacher's own row
        cells.update((s, float(t)) for s in sigmas if s > float(t))
    return cells


def emit_plot_data(results_path, figure: str, out_dir, cfg: dict | None = None):
    """Aggregate rows into per-figure plot files.

    Writes ``<figure>.csv`` (series,x,mean,std,n), ``<figure>.dat`` (gnuplot
    blocks, one index per series) and ``<figure>.schema.txt``. Raises
    EmptyResultsError (writing nothing) if no rows match; logs a warning
    listing absent (sigma, sigma_t) cells when ``cfg`` promises more than
    the table holds.
    """
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure {figure!r}; choose from "
                          f"{sorted(FIGURES)}")
    experiment, metric, x_col = FIGURES[figure]
    wanted_variants = ((VARIANT_PLAIN,) if figure.startswith("sweep-") else
                       (VARIANT_TEACHER, VARIANT_BASELINE, VARIANT_DISTILLED))
    rows = [r for r in read_results(results_path)
            if r["experiment"] == experiment and r["metric"] == metric
            and r["variant"] in wanted_variants]
    if not rows:
        raise EmptyResultsError(
            f"no rows for figure {figure!r} (experiment={experiment}, "
            f"metric={metric}) in {results_path}")

    if cfg is not None:
        present = {(r["sigma"], r["sigma_t"]) for r in rows}
        absent = sorted(_expected_cells(figure, cfg) - present,
                        key=lambda c: (c[0], -1.0 if c[1] is None else c[1]))
        if absent:
            logger.warning("partial data for figure %s: missing cells %s",
                           figure, ["(sigma=%g, sigma_t=%s)" %
                                    (s, "-" if t is None else "%g" % t)
                                    for s, t in absent])

    groups = {}
    for r in rows:
        key = (_series_name(figure, r), r[x_col])
        groups.setdefault(key, []).append(r["value"])
    table = sorted(
        (series, x, float(np.mean(vals)), float(np.std(vals)), len(vals))
        for (series, x), vals in groups.items())

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{figure}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "x", "mean", "std", "n"])
        for series, x, mean, std, n in table:
            writer.writerow([series, repr(float(x)), repr(mean), repr(std), n])

    dat_path = out / f"{figure}.dat"
    with open(dat_path, "w") as fh:
        fh.write(f"# figure: {figure}\n# metric: {metric}; x: {x_col}\n")
        last_series = None
        for series, x, mean, std, n in table:
            if series != last_series:
                if last_series is not None:
                    fh.write("\n\n")
                fh.write(f"# series: {series}\n# x mean std n\n")
                last_series = series
            fh.write(f"{x:g} {mean:.10g} {std:.10g} {n}\n")

    schema_path = out / f"{figure}.schema.txt"
    with open(schema_path, "w") as fh:
        fh.write(
            f"figure: {figure}\n"
            f"source metric: {metric}\n"
            f"x axis: {x_col}\n"
            "csv columns:\n"
            "  series  series label, one line per (x, series) cell\n"
            f"  x       {x_col} value\n"
            "  mean    mean metric value over repetitions\n"
            "  std     population standard deviation over repetitions\n"
            "  n       number of repetitions aggregated\n"
            "dat file: gnuplot blocks, one index per series, columns x mean std n\n")
        if metric == "ber":
            fh.write("plot hint: use a logarithmic y axis (BER spans decades)\n")
        else:
            fh.write("plot hint: linear axes\n")
    return [csv_path, dat_path, schema_path]
