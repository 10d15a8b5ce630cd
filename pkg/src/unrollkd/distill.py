"""Stage-wise distillation losses, trainers and the gradient verifier.

A teacher is trained under a milder operator mismatch (sigma_t < sigma) and
then frozen. The student trains under the full mismatch with a composite
objective

    loss = recon + lambda_grad * l_grad + lambda_o * l_o

where l_grad sums log(i)-weighted batch-mean L2 distances between the
per-stage fidelity gradients of student and teacher, and l_o does the same
for the per-stage estimates. The log(1) = 0 weight drops the first stage.

The reconstruction term is a plain MSE for the image network, and the
stage-weighted normalized squared error (relative to the zero-forcing
solution) for the detection network.
"""

import copy
import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .admm_net import AdmmNet
from .data import gen_bpsk_batch, gen_channel_batch, synthetic_images
from .detnet import DetNet
from .errors import ConfigError, DimensionError, TrainingError
from .seeding import derive_seed
from .sensing import build_hadamard_cake_cutting, lift_complex_to_real, sample_unknown
from .trace import StageTrace

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def stage_weights(num_stages: int, offset: int = 0) -> list[float]:
    """log(i + offset) for stages i = 1..L."""
    if num_stages < 1:
        raise DimensionError(f"num_stages={num_stages} must be >= 1")
    return [math.log(i + offset) for i in range(1, num_stages + 1)]


def _stagewise_distance(a_list, b_list, offset: int) -> torch.Tensor:
    if len(a_list) != len(b_list):
        raise ConfigError(
            f"trace length mismatch: {len(a_list)} vs {len(b_list)}")
    if not a_list:
        raise ConfigError("empty trace")
    weights = stage_weights(len(a_list), offset)
    total = None
    for w, a, b in zip(weights, a_list, b_list):
        a = torch.as_tensor(a)
        b = torch.as_tensor(b)
        if a.shape != b.shape:
            raise DimensionError(f"stage shape mismatch: {a.shape} vs {b.shape}")
        if total is None:
            total = a.new_zeros(())
        if w == 0.0:
            continue
        total = total + w * torch.linalg.vector_norm(a - b, dim=-1).mean()
    return total


def loss_grad(student_gradients, teacher_gradients, offset: int = 0) -> torch.Tensor:
    """Stage-weighted batch-mean L2 distance between fidelity gradients.

    Weights are log(i + offset); the default offset 0 gives log(1) = 0 for
    the first stage.
    """
    return _stagewise_distance(student_gradients, teacher_gradients, offset)


def loss_output(student_estimates, teacher_estimates, offset: int = 0) -> torch.Tensor:
    """Stage-weighted batch-mean L2 distance between stage estimates."""
    return _stagewise_distance(student_estimates, teacher_estimates, offset)


def recon_loss_mse(x_hat: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all entries."""
    x_hat = torch.as_tensor(x_hat)
    x = torch.as_tensor(x)
    if x_hat.shape != x.shape:
        raise DimensionError(f"shape mismatch: {x_hat.shape} vs {x.shape}")
    return (x_hat - x).pow(2).mean()


def zero_forcing(A_k: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """(A_k^T A_k)^-1 A_k^T y, with a pseudo-inverse fallback when singular."""
    if A_k.dim() == 2:
        gram = A_k.T @ A_k
        aty = y @ A_k
    else:
        gram = A_k.transpose(-1, -2) @ A_k
        aty = torch.einsum("bmn,bm->bn", A_k, y)
    try:
        return torch.linalg.solve(gram, aty.unsqueeze(-1)).squeeze(-1)
    except torch.linalg.LinAlgError:
        logger.warning("singular normal equations; falling back to the pseudo-inverse")
        return (torch.linalg.pinv(gram) @ aty.unsqueeze(-1)).squeeze(-1)


def recon_loss_detnet(trace: StageTrace, x: torch.Tensor, y: torch.Tensor,
                      A_k: torch.Tensor, offset: int = 1) -> torch.Tensor:
    """Sum_l log(l + offset) * mean_b ||x - x_l||^2 / ||x - x_zf||^2.

    The default offset 1 keeps the first stage supervised (log 2 > 0).
    """
    if len(trace) < 1:
        raise DimensionError("empty trace")
    zf = zero_forcing(A_k, y)
    den = (x - zf).pow(2).sum(dim=-1)
    total = x.new_zeros(())
    for w, est in zip(stage_weights(len(trace), offset), trace.estimates):
        num = (x - est).pow(2).sum(dim=-1)
        total = total + w * (num / den).mean()
    return total


def composite_student_loss(student_trace: StageTrace, teacher_trace, x, config,
                           y=None, A_k=None) -> torch.Tensor:
    """recon + lambda_grad * l_grad + lambda_o * l_o.

    teacher_trace=None yields the pure reconstruction loss (baseline).
    config.network selects the reconstruction term; the detnet variant needs
    y and A_k for the zero-forcing reference.
    """
    loss, _ = _composite_parts(student_trace, teacher_trace, x, config, y, A_k)
    return loss


def _composite_parts(student_trace, teacher_trace, x, config, y=None, A_k=None):
    if config.network == "admm":
        recon = recon_loss_mse(student_trace.estimates[-1], x)
    elif config.network == "detnet":
        if y is None or A_k is None:
            raise ConfigError("detnet reconstruction loss needs y and A_k")
        recon = recon_loss_detnet(student_trace, x, y, A_k,
                                  offset=config.recon_weight_offset)
    else:
        raise ConfigError(f"unknown network kind {config.network!r}")
    if teacher_trace is None:
        return recon, {"recon": float(recon.detach()), "grad": None, "output": None}
    if config.sigma_t >= config.sigma:
        raise ConfigError(
            f"teacher mismatch sigma_t={config.sigma_t} must be < sigma={config.sigma}")
    lg = loss_grad(student_trace.gradients, teacher_trace.gradients,
                   offset=config.kd_weight_offset)
    lo = loss_output(student_trace.estimates, teacher_trace.estimates,
                     offset=config.kd_weight_offset)
    total = recon + config.lambda_grad * lg + config.lambda_o * lo
    return total, {"recon": float(recon.detach()), "grad": float(lg.detach()),
                   "output": float(lo.detach())}


# ---------------------------------------------------------------------------
# Configs and tasks
# ---------------------------------------------------------------------------

@dataclass
class DistillationConfig:
    """Knobs for one training run (teacher, student or baseline)."""

    network: str = "admm"          # admm | detnet
    sigma: float = 0.0             # mismatch level of this model's measurements
    sigma_t: float = 0.0           # teacher mismatch (students only)
    lambda_grad: float = 0.0
    lambda_o: float = 0.0
    stages: int = 10
    seed: int = 0
    dtype: str = "float32"         # float32 | float64
    lr: float = 5e-4
    lr_decay_factor: float = 1.0   # 1.0 disables the schedule
    lr_decay_every: int = 50
    batch_size: int = 100
    epochs: int = 10               # image task: passes over the dataset
    iterations: int = 300          # symbol task: fresh batch per iteration
    channels: int = 16             # admm denoiser width
    hidden: int | None = None      # detnet hidden width (default 4n)
    aux: int | None = None         # detnet carry state width (default n)
    soft_sign_t: float = 0.5
    share_noise: bool = True
    kd_weight_offset: int = 0      # log(i): first stage unweighted, as printed
    recon_weight_offset: int = 1   # log(l+1): every stage supervised

    def __post_init__(self):
        if self.network not in ("admm", "detnet"):
            raise ConfigError(f"unknown network kind {self.network!r}")
        if self.sigma < 0 or self.sigma_t < 0:
            raise ConfigError("sigma and sigma_t must be >= 0")
        if self.sigma_t > self.sigma:
            raise ConfigError(
                f"sigma_t={self.sigma_t} must not exceed sigma={self.sigma}")
        if self.lambda_grad < 0 or self.lambda_o < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.stages < 1:
            raise ConfigError(f"stages={self.stages} must be >= 1")
        if self.batch_size < 1 or self.epochs < 1 or self.iterations < 1:
            raise ConfigError("batch_size, epochs and iterations must be >= 1")
        if self.lr <= 0 or self.lr_decay_factor <= 0 or self.lr_decay_every < 1:
            raise ConfigError("learning-rate settings must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.soft_sign_t <= 0:
            raise ConfigError(f"soft_sign_t={self.soft_sign_t} must be > 0")

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32


@dataclass
class SpcTask:
    """Single-pixel-camera task: image dataset plus Hadamard known part."""

    train: np.ndarray              # (N, side, side) in [0, 1]
    val: np.ndarray
    test: np.ndarray
    m: int
    noise_snr_db: float | None = None
    known: np.ndarray = field(init=False)

    def __post_init__(self):
        side = self.train.shape[-1]
        self.side = side
        self.n = side * side
        self.unknown_scale = 1.0 / math.sqrt(self.n)
        self.known = build_hadamard_cake_cutting(self.n, self.m) * self.unknown_scale

    @classmethod
    def synthetic(cls, n_train=200, n_val=50, n_test=50, side=32, m=None, seed=0,
                  noise_snr_db=None):
        pool = synthetic_images(n_train + n_val + n_test, seed, side=side)
        if m is None:
            m = (side * side) // 4
        return cls(train=pool[:n_train], val=pool[n_train:n_train + n_val],
                   test=pool[n_train + n_val:], m=m, noise_snr_db=noise_snr_db)


@dataclass
class MimoTask:
    """MIMO detection task: random channels, BPSK symbols, SNR ranges."""

    tx: int = 8
    rx: int = 16
    complex_antennas: bool = True
    snr_train: tuple = (7.0, 13.0)
    test_snrs: tuple = (7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0)

    def __post_init__(self):
        lift = 2 if self.complex_antennas else 1
        self.n = lift * self.tx
        self.m = lift * self.rx
        # known entries have std 1/sqrt(m) per real component in both modes
        self.unknown_scale = 1.0 / math.sqrt(self.m)

    def channel_batch(self, batch: int, seed: int) -> np.ndarray:
        """(batch, m, n) real-lifted known operators."""
        if self.complex_antennas:
            ch = gen_channel_batch(self.rx, self.tx, batch, seed)
            A, _, _ = lift_complex_to_real(ch)
            return A
        rng = np.random.default_rng(seed)
        return rng.standard_normal((batch, self.m, self.n)) / math.sqrt(self.m)


@dataclass
class TeacherSnapshot:
    """A frozen teacher with the unknown part it was trained under."""

    kind: str
    net: torch.nn.Module
    sigma_t: float
    seed: int
    unknown: np.ndarray
    log: list = field(default_factory=list)


@dataclass
class TrainResult:
    net: torch.nn.Module
    kind: str
    sigma: float
    unknown: np.ndarray
    log: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.log[-1]["composite"] if self.log else math.nan


TRAIN_LOG_COLUMNS = ["step", "epoch", "recon_loss", "loss_grad", "loss_output",
                     "composite", "lr", "wall_ms"]


def write_train_log(rows: list, path) -> None:
    """Write per-step training rows as CSV with the fixed column set."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAIN_LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in TRAIN_LOG_COLUMNS})


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

def _noise_for(clean: torch.Tensor, snr_db, normal: torch.Tensor) -> torch.Tensor:
    """Scale a standard-normal draw to hit the per-sample SNR (dB)."""
    power = clean.pow(2).sum(dim=-1, keepdim=True)
    snr = torch.as_tensor(snr_db, dtype=clean.dtype).reshape(-1, 1)
    var = power / (clean.shape[-1] * torch.pow(10.0, snr / 10.0))
    return normal * var.sqrt()


def _check_finite(loss, step, last_good):
    if not torch.isfinite(loss):
        raise TrainingError(
            f"non-finite loss at step {step}", checkpoint=last_good, step=step)


def _warn_single_stage(cfg):
    if cfg.stages == 1 and (cfg.lambda_grad > 0 or cfg.lambda_o > 0):
        logger.warning(
            "stage-weighted distillation losses are identically zero for a "
            "single stage; training reduces to the baseline")


def _train_spc(task: SpcTask, cfg: DistillationConfig, teacher=None) -> TrainResult:
    dtype = cfg.torch_dtype
    unknown = sample_unknown(task.m, task.n, cfg.sigma,
                             derive_seed(cfg.seed, "unknown")) * task.unknown_scale
    A_known = torch.as_tensor(task.known, dtype=dtype)
    A_comp = torch.as_tensor(task.known + unknown, dtype=dtype)
    if teacher is not None:
        A_teach = torch.as_tensor(task.known + teacher.unknown, dtype=dtype)
    net = AdmmNet(task.n, stages=cfg.stages, channels=cfg.channels,
                  dtype=dtype, seed=derive_seed(cfg.seed, "init"))
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=ADAM_BETAS, eps=ADAM_EPS)
    sched = None
    if cfg.lr_decay_factor != 1.0:
        sched = torch.optim.lr_scheduler.StepLR(
            opt, step_size=cfg.lr_decay_every, gamma=cfg.lr_decay_factor)
    _warn_single_stage(cfg)

    images = torch.as_tensor(
        task.train.reshape(task.train.shape[0], task.n), dtype=dtype)
    count = images.shape[0]
    steps_per_epoch = max(1, count // cfg.batch_size)
    rows, step = [], 0
    last_good = copy.deepcopy(net.state_dict())
    for epoch in range(cfg.epochs):
        perm = np.random.default_rng(
            derive_seed(cfg.seed, "shuffle", epoch)).permutation(count)
        for b in range(steps_per_epoch):
            t0 = time.perf_counter()
            idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            x = images[idx]
            clean = x @ A_comp.T
            if task.noise_snr_db is None:
                y = clean
                y_t = x @ A_teach.T if teacher is not None else None
            else:
                nrng = np.random.default_rng(derive_seed(cfg.seed, "noise", step))
                normal = torch.as_tensor(
                    nrng.standard_normal(clean.shape), dtype=dtype)
                omega = _noise_for(clean, task.noise_snr_db, normal)
                y = clean + omega
                if teacher is not None:
                    t_clean = x @ A_teach.T
                    if cfg.share_noise:
                        y_t = t_clean + omega
                    else:
                        normal_t = torch.as_tensor(
                            nrng.standard_normal(clean.shape), dtype=dtype)
                        y_t = t_clean + _noise_for(t_clean, task.noise_snr_db, normal_t)
            _, trace = net(y, A_known)
            teacher_trace = None
            if teacher is not None:
                with torch.no_grad():
                    _, teacher_trace = teacher.net(y_t, A_known)
            loss, parts = _composite_parts(trace, teacher_trace, x, cfg)
            _check_finite(loss, step, last_good)
            opt.zero_grad()
            loss.backward()
            opt.step()
            if sched is not None:
                sched.step()
            last_good = copy.deepcopy(net.state_dict())
            rows.append({
                "step": step, "epoch": epoch,
                "recon_loss": float(parts["recon"]),
                "loss_grad": float(parts["grad"]) if parts["grad"] is not None else 0.0,
                "loss_output": float(parts["output"]) if parts["output"] is not None else 0.0,
                "composite": float(loss.detach()),
                "lr": opt.param_groups[0]["lr"],
                "wall_ms": (time.perf_counter() - t0) * 1e3,
            })
            step += 1
    return TrainResult(net=net, kind="admm", sigma=cfg.sigma, unknown=unknown, log=rows)


def _train_mimo(task: MimoTask, cfg: DistillationConfig, teacher=None) -> TrainResult:
    dtype = cfg.torch_dtype
    unknown = sample_unknown(task.m, task.n, cfg.sigma,
                             derive_seed(cfg.seed, "unknown")) * task.unknown_scale
    unknown_t = torch.as_tensor(unknown, dtype=dtype)
    if teacher is not None:
        unknown_teach = torch.as_tensor(teacher.unknown, dtype=dtype)
    net = DetNet(task.n, stages=cfg.stages, hidden=cfg.hidden, aux=cfg.aux,
                 t=cfg.soft_sign_t, dtype=dtype, seed=derive_seed(cfg.seed, "init"))
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=ADAM_BETAS, eps=ADAM_EPS)
    sched = None
    if cfg.lr_decay_factor != 1.0:
        sched = torch.optim.lr_scheduler.StepLR(
            opt, step_size=cfg.lr_decay_every, gamma=cfg.lr_decay_factor)
    _warn_single_stage(cfg)

    rows = []
    last_good = copy.deepcopy(net.state_dict())
    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        x = torch.as_tensor(gen_bpsk_batch(task.n, cfg.batch_size,
                                           derive_seed(cfg.seed, "symbols", it)),
                            dtype=dtype)
        A_k = torch.as_tensor(task.channel_batch(cfg.batch_size,
                                                 derive_seed(cfg.seed, "channels", it)),
                              dtype=dtype)
        snr_rng = np.random.default_rng(derive_seed(cfg.seed, "snr", it))
        snr = snr_rng.uniform(task.snr_train[0], task.snr_train[1], cfg.batch_size)
        clean = torch.einsum("bmn,bn->bm", A_k + unknown_t, x)
        normal = torch.as_tensor(
            np.random.default_rng(derive_seed(cfg.seed, "noise", it))
            .standard_normal(tuple(clean.shape)), dtype=dtype)
        omega = _noise_for(clean, snr, normal)
        y = clean + omega
        _, trace = net(y, A_k)
        teacher_trace = None
        if teacher is not None:
            t_clean = torch.einsum("bmn,bn->bm", A_k + unknown_teach, x)
            if cfg.share_noise:
                y_t = t_clean + omega
            else:
                normal_t = torch.as_tensor(
                    np.random.default_rng(derive_seed(cfg.seed, "noise_t", it))
                    .standard_normal(tuple(clean.shape)), dtype=dtype)
                y_t = t_clean + _noise_for(t_clean, snr, normal_t)
            with torch.no_grad():
                _, teacher_trace = teacher.net(y_t, A_k)
        loss, parts = _composite_parts(trace, teacher_trace, x, cfg, y=y, A_k=A_k)
        _check_finite(loss, it, last_good)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if sched is not None:
            sched.step()
        last_good = copy.deepcopy(net.state_dict())
        rows.append({
            "step": it, "epoch": 0,
            "recon_loss": float(parts["recon"]),
            "loss_grad": float(parts["grad"]) if parts["grad"] is not None else 0.0,
            "loss_output": float(parts["output"]) if parts["output"] is not None else 0.0,
            "composite": float(loss.detach()),
            "lr": opt.param_groups[0]["lr"],
            "wall_ms": (time.perf_counter() - t0) * 1e3,
        })
    return TrainResult(net=net, kind="detnet", sigma=cfg.sigma, unknown=unknown, log=rows)


def _train(task, cfg: DistillationConfig, teacher=None) -> TrainResult:
    if isinstance(task, SpcTask):
        if cfg.network != "admm":
            raise ConfigError("image task requires network='admm'")
        return _train_spc(task, cfg, teacher)
    if isinstance(task, MimoTask):
        if cfg.network != "detnet":
            raise ConfigError("symbol task requires network='detnet'")
        return _train_mimo(task, cfg, teacher)
    raise ConfigError(f"unknown task type {type(task).__name__}")


def train_baseline(cfg: DistillationConfig, task) -> TrainResult:
    """Train without a teacher at the configured mismatch sigma."""
    return _train(task, cfg, teacher=None)


def train_teacher(cfg: DistillationConfig, task) -> TeacherSnapshot:
    """Train at mismatch sigma_t and freeze the result."""
    teacher_cfg = replace(cfg, sigma=cfg.sigma_t, lambda_grad=0.0, lambda_o=0.0)
    result = _train(task, teacher_cfg, teacher=None)
    result.net.eval()
    for p in result.net.parameters():
        p.requires_grad_(False)
    return TeacherSnapshot(kind=result.kind, net=result.net, sigma_t=cfg.sigma_t,
                           seed=cfg.seed, unknown=result.unknown, log=result.log)


def train_student(cfg: DistillationConfig, teacher: TeacherSnapshot, task) -> TrainResult:
    """Train under full mismatch, regularized toward the frozen teacher."""
    if teacher.sigma_t >= cfg.sigma:
        raise ConfigError(
            f"teacher sigma_t={teacher.sigma_t} must be < student sigma={cfg.sigma}")
    cfg = replace(cfg, sigma_t=teacher.sigma_t)
    return _train(task, cfg, teacher=teacher)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def _fd_gradient(loss_fn, params, eps_base: float) -> np.ndarray:
    """Fourth-order central differences over every parameter entry."""
    grads = []
    with torch.no_grad():
        for p in params:
            flat = p.reshape(-1)
            g = np.zeros(flat.numel())
            for i in range(flat.numel()):
                orig = flat[i].item()
                eps = eps_base * max(1.0, abs(orig))
                vals = []
                for delta in (-2 * eps, -eps, eps, 2 * eps):
                    flat[i] = orig + delta
                    vals.append(loss_fn().item())
                flat[i] = orig
                g[i] = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * eps)
            grads.append(g)
    return np.concatenate(grads)


def _randomize(net: AdmmNet, seed: int, scale: float = 0.3) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            p.add_(torch.empty_like(p).uniform_(-scale, scale, generator=gen))


def _admm_instance(seed: int, composite: bool, linear: bool = False):
    n, m, L, C, B = 16, 8, 2, 4, 3
    if linear:
        L = 1
    rng = np.random.default_rng(seed)
    A_k = torch.as_tensor(rng.standard_normal((m, n)) / math.sqrt(n), dtype=torch.float64)
    x = torch.as_tensor(rng.uniform(0, 1, (B, n)), dtype=torch.float64)
    net = AdmmNet(n, stages=L, channels=C, dtype=torch.float64, seed=seed)
    if not linear:
        _randomize(net, seed + 1)
    unknown = torch.as_tensor(
        sample_unknown(m, n, 0.5, seed) / math.sqrt(n), dtype=torch.float64)
    y = x @ (A_k + unknown).T
    cfg = DistillationConfig(network="admm", sigma=0.5, sigma_t=0.1,
                             lambda_grad=1e-2, lambda_o=1e-2, stages=L,
                             channels=C, dtype="float64")
    teacher_trace = None
    if composite:
        teacher = AdmmNet(n, stages=L, channels=C, dtype=torch.float64, seed=seed + 7)
        _randomize(teacher, seed + 8)
        unknown_t = torch.as_tensor(
            sample_unknown(m, n, 0.1, seed + 9) / math.sqrt(n), dtype=torch.float64)
        y_t = x @ (A_k + unknown_t).T
        with torch.no_grad():
            _, teacher_trace = teacher(y_t, A_k)

    def loss_fn():
        _, trace = net(y, A_k)
        return composite_student_loss(trace, teacher_trace, x, cfg)

    return net, loss_fn


def _detnet_instance(seed: int, composite: bool):
    n, m, L, h, v, B = 4, 8, 2, 8, 4, 3
    rng = np.random.default_rng(seed)
    A_k = torch.as_tensor(rng.standard_normal((B, m, n)) / math.sqrt(m),
                          dtype=torch.float64)
    x = torch.as_tensor(np.sign(rng.standard_normal((B, n))), dtype=torch.float64)
    net = DetNet(n, stages=L, hidden=h, aux=v, dtype=torch.float64, seed=seed)
    unknown = torch.as_tensor(
        sample_unknown(m, n, 0.5, seed) / math.sqrt(m), dtype=torch.float64)
    y = torch.einsum("bmn,bn->bm", A_k + unknown, x)
    cfg = DistillationConfig(network="detnet", sigma=0.5, sigma_t=0.1,
                             lambda_grad=1e-2, lambda_o=1e-2, stages=L,
                             hidden=h, aux=v, dtype="float64")
    teacher_trace = None
    if composite:
        teacher = DetNet(n, stages=L, hidden=h, aux=v, dtype=torch.float64, seed=seed + 7)
        unknown_t = torch.as_tensor(
            sample_unknown(m, n, 0.1, seed + 9) / math.sqrt(m), dtype=torch.float64)
        y_t = torch.einsum("bmn,bn->bm", A_k + unknown_t, x)
        with torch.no_grad():
            _, teacher_trace = teacher(y_t, A_k)

    def loss_fn():
        _, trace = net(y, A_k)
        return composite_student_loss(trace, teacher_trace, x, cfg, y=y, A_k=A_k)

    return net, loss_fn


def verify_gradients(network: str = "admm", loss: str = "composite",
                     eps: float | None = None, seed: int = 3) -> dict:
    """Compare autograd against finite differences on a tiny instance.

    network: "admm", "detnet" or "linear" (single ADMM stage with the
    identity denoiser, where central differences are exact up to roundoff,
    so a large step is used there). Returns a dict with the max relative
    error over every parameter entry.
    """
    t0 = time.perf_counter()
    composite = loss == "composite"
    if network == "admm":
        net, loss_fn = _admm_instance(seed, composite)
    elif network == "detnet":
        net, loss_fn = _detnet_instance(seed, composite)
    elif network == "linear":
        net, loss_fn = _admm_instance(seed, composite=False, linear=True)
    else:
        raise ConfigError(f"unknown network kind {network!r}")
    if eps is None:
        eps = 0.25 if network == "linear" else 1e-4
    params = [p for p in net.parameters()]

    value = loss_fn()
    for p in params:
        p.grad = None
    value.backward()
    analytic = np.concatenate(
        [p.grad.reshape(-1).numpy().copy() if p.grad is not None
         else np.zeros(p.numel()) for p in params])
    fd = _fd_gradient(loss_fn, params, eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-6)
    rel = np.abs(analytic - fd) / denom
    return {
        "network": network,
        "loss": loss,
        "param_count": int(analytic.size),
        "max_rel_err": float(rel.max()),
        "mean_rel_err": float(rel.mean()),
        "elapsed_s": time.perf_counter() - t0,
    }
