"""DetNet-style unrolled network for BPSK symbol detection.

Each stage concatenates q = [A^T y; x; A^T A x; v], pushes it through a
one-hidden-layer MLP and squashes the symbol branch with a soft sign:

    z  = relu(W1 q + b1)
    x+ = psi_t(W2 z + b2)
    v+ = W3 z + b3

psi_t(v) = -1 + relu(v + t)/t - relu(v - t)/t is piecewise linear, odd, and
saturates at +/-1 for |v| >= t. The operator A may be shared (m, n) or
per-sample (B, m, n); the network starts from x0 = 0, v0 = 0.
"""

import math
import struct

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DimensionError, FormatError, ParameterError
from .trace import StageTrace

_DET_MAGIC = b"DET1"
DEFAULT_SOFT_SIGN_T = 0.5


def psi_t(v, t: float):
    """Piecewise-linear soft sign with threshold t > 0."""
    if t <= 0:
        raise ParameterError(f"t={t} must be > 0")
    v = torch.as_tensor(v)
    return -1.0 + torch.relu(v + t) / t - torch.relu(v - t) / t


def hard_decision(x_hat) -> np.ndarray:
    """Map estimates to +/-1 symbols; ties at exactly 0 go to +1."""
    if torch.is_tensor(x_hat):
        x_hat = x_hat.detach().cpu().numpy()
    x_hat = np.asarray(x_hat)
    return np.where(x_hat >= 0, 1.0, -1.0)


def _matvec(A: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    if A.dim() == 2:
        return x @ A.T
    return torch.einsum("bmn,bn->bm", A, x)


def _rmatvec(A: torch.Tensor, r: torch.Tensor) -> torch.Tensor:
    if A.dim() == 2:
        return r @ A
    return torch.einsum("bmn,bm->bn", A, r)


class DetNetStage(nn.Module):
    """One DetNet stage: MLP over [A^T y; x; A^T A x; v]."""

    def __init__(self, n: int, hidden: int, aux: int, dtype=torch.float64,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.lin1 = nn.Linear(3 * n + aux, hidden, dtype=dtype)
        self.lin2 = nn.Linear(hidden, n, dtype=dtype)
        self.lin3 = nn.Linear(hidden, aux, dtype=dtype)
        if generator is None:
            generator = torch.Generator().manual_seed(0)
        for lin in (self.lin1, self.lin2, self.lin3):
            bound = 1.0 / math.sqrt(lin.in_features)
            with torch.no_grad():
                lin.weight.uniform_(-bound, bound, generator=generator)
                lin.bias.zero_()

    def forward(self, x, v, ATy, ATAx, t):
        q = torch.cat([ATy, x, ATAx, v], dim=-1)
        z = torch.relu(self.lin1(q))
        x_new = psi_t(self.lin2(z), t)
        v_new = self.lin3(z)
        return x_new, v_new


def detnet_stage(x, v, A_k, y, stage: DetNetStage, t: float = DEFAULT_SOFT_SIGN_T):
    """Functional form of one stage; returns (x_new, v_new, gradient entry)."""
    ATy = _rmatvec(A_k, y)
    ATAx = _rmatvec(A_k, _matvec(A_k, x))
    x_new, v_new = stage(x, v, ATy, ATAx, t)
    return x_new, v_new, ATAx - ATy


def detnet_forward(y: torch.Tensor, A: torch.Tensor, stages,
                   t: float = DEFAULT_SOFT_SIGN_T) -> tuple[torch.Tensor, StageTrace]:
    """Run a sequence of DetNetStage modules; returns (x_hat, trace)."""
    stages = list(stages)
    if not stages:
        raise ConfigError("at least one stage is required")
    n = A.shape[-1]
    batch_shape = y.shape[:-1]
    ATy = _rmatvec(A, y)
    x = torch.zeros(*batch_shape, n, dtype=y.dtype)
    v = torch.zeros(*batch_shape, stages[0].lin3.out_features, dtype=y.dtype)
    estimates, gradients = [], []
    for stage in stages:
        ATAx = _rmatvec(A, _matvec(A, x))
        gradients.append(ATAx - ATy)
        x, v = stage(x, v, ATy, ATAx, t)
        estimates.append(x)
    return x, StageTrace(estimates=estimates, gradients=gradients)


class DetNet(nn.Module):
    """L-stage detection network; hidden defaults to 4n, aux state to n."""

    def __init__(self, n: int, stages: int, hidden: int | None = None,
                 aux: int | None = None, t: float = DEFAULT_SOFT_SIGN_T,
                 dtype=torch.float64, seed: int = 0):
        super().__init__()
        if stages < 1:
            raise ConfigError(f"stages={stages} must be >= 1")
        if t <= 0:
            raise ParameterError(f"t={t} must be > 0")
        self.n = n
        self.hidden = 4 * n if hidden is None else hidden
        self.aux = n if aux is None else aux
        self.t = float(t)
        self.dtype = dtype
        generator = torch.Generator().manual_seed(seed & 0x7FFF_FFFF_FFFF_FFFF)
        self.stages = nn.ModuleList([
            DetNetStage(n, self.hidden, self.aux, dtype=dtype, generator=generator)
            for _ in range(stages)
        ])

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    def forward(self, y, A):
        y = torch.as_tensor(y, dtype=self.dtype)
        A = torch.as_tensor(A, dtype=self.dtype)
        if A.shape[-1] != self.n:
            raise DimensionError(f"operator n={A.shape[-1]} does not match net n={self.n}")
        if y.shape[-1] != A.shape[-2]:
            raise DimensionError(
                f"measurement dim {tuple(y.shape)} does not match operator "
                f"{tuple(A.shape)}")
        return detnet_forward(y, A, self.stages, self.t)


# ---------------------------------------------------------------------------
# Serialization (DET1)
# ---------------------------------------------------------------------------

def save_detnet(net: DetNet, path) -> None:
    """Write stage parameters to the DET1 container (little-endian f64)."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIIId", _DET_MAGIC, net.num_stages, net.n,
                             net.hidden, net.aux, net.t))
        for stage in net.stages:
            for lin in (stage.lin1, stage.lin2, stage.lin3):
                for t_ in (lin.weight, lin.bias):
                    fh.write(t_.detach().to(torch.float64).contiguous()
                             .numpy().astype("<f8").tobytes())


def load_detnet(path, dtype=torch.float64) -> DetNet:
    """Read a DET1 container back into a DetNet."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head = struct.calcsize("<4sIIIId")
    if len(blob) < head:
        raise FormatError(f"{path}: too short for a DET1 header")
    magic, L, n, hidden, aux, t = struct.unpack_from("<4sIIIId", blob)
    if magic != _DET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {_DET_MAGIC!r}")
    q = 3 * n + aux
    per_stage = hidden * q + hidden + n * hidden + n + aux * hidden + aux
    expected = head + L * per_stage * 8
    if len(blob) != expected:
        raise FormatError(f"{path}: {len(blob)} bytes, expected {expected}")
    vals = torch.from_numpy(np.frombuffer(blob, dtype="<f8", offset=head).copy())
    net = DetNet(n, stages=L, hidden=hidden, aux=aux, t=t, dtype=dtype, seed=0)
    pos = 0

    def take(count):
        nonlocal pos
        out = vals[pos: pos + count]
        pos += count
        return out

    with torch.no_grad():
        for stage in net.stages:
            for lin in (stage.lin1, stage.lin2, stage.lin3):
                rows, cols = lin.weight.shape
                lin.weight.copy_(take(rows * cols).reshape(rows, cols).to(dtype))
                lin.bias.copy_(take(rows).to(dtype))
    return net
