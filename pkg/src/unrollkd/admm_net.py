"""ADMM-inspired unrolled network for image recovery.

Each of the L stages carries its own scalar step size alpha, coupling weight
rho and a small residual convolutional denoiser. One stage performs

    z+ = D(x + u)
    g  = A_k^T (A_k x - y)
    x+ = x - alpha * (g - rho * (x - z+ + u))
    u+ = u + x+ - z+

starting from x0 = A_k^T y, z0 = x0, u0 = 0. The forward pass returns the
final estimate together with a per-stage trace of estimates (x+ of each
stage) and fidelity gradients (g at each stage input).
"""

import math
import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DimensionError, FormatError
from .trace import StageTrace

_ADM_MAGIC = b"ADM1"


@dataclass
class AdmmState:
    """Primal estimate, auxiliary variable and scaled dual, all (…, n)."""

    x_est: torch.Tensor
    z: torch.Tensor
    u: torch.Tensor


def _uniform_(tensor: torch.Tensor, bound: float, generator: torch.Generator) -> None:
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=generator)


class DenoiserBlock(nn.Module):
    """Residual two-layer conv denoiser acting on flattened square images.

    The closing conv is zero-initialized, so a freshly built block is the
    identity map; the opening conv uses fan-in scaled uniform weights.
    """

    def __init__(self, n: int, channels: int = 16, dtype=torch.float64,
                 generator: torch.Generator | None = None):
        super().__init__()
        side = math.isqrt(n)
        if side * side != n:
            raise DimensionError(f"signal length {n} is not a perfect square")
        if channels < 1:
            raise ConfigError(f"channels={channels} must be >= 1")
        self.side = side
        self.conv1 = nn.Conv2d(1, channels, 3, padding=1, dtype=dtype)
        self.conv2 = nn.Conv2d(channels, 1, 3, padding=1, dtype=dtype)
        if generator is None:
            generator = torch.Generator().manual_seed(0)
        bound = 1.0 / math.sqrt(9.0)  # fan_in of conv1 = 1 * 3 * 3
        _uniform_(self.conv1.weight, bound, generator)
        _uniform_(self.conv1.bias, bound, generator)
        with torch.no_grad():
            self.conv2.weight.zero_()
            self.conv2.bias.zero_()

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        img = v.reshape(-1, 1, self.side, self.side)
        out = self.conv2(torch.relu(self.conv1(img)))
        return v + out.reshape(v.shape)


class AdmmStage(nn.Module):
    """One unrolled stage with learnable alpha, rho and a denoiser."""

    def __init__(self, n: int, channels: int = 16, alpha0: float = 0.01,
                 rho0: float = 0.1, dtype=torch.float64,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.alpha = nn.Parameter(torch.tensor(alpha0, dtype=dtype))
        self.rho = nn.Parameter(torch.tensor(rho0, dtype=dtype))
        self.denoiser = DenoiserBlock(n, channels, dtype=dtype, generator=generator)

    def forward(self, state: AdmmState, A_k, y, ATy=None):
        """Apply the stage; returns (new state, x entry, gradient entry)."""
        if ATy is None:
            ATy = y @ A_k
        x, u = state.x_est, state.u
        z_new = self.denoiser(x + u)
        g = (x @ A_k.T) @ A_k - ATy
        x_new = x - self.alpha * (g - self.rho * (x - z_new + u))
        u_new = u + x_new - z_new
        return AdmmState(x_est=x_new, z=z_new, u=u_new), x_new, g


def admm_stage(state: AdmmState, stage: AdmmStage, A_k, y):
    """Functional form of one stage update."""
    return stage(state, A_k, y)


def init_state(y: torch.Tensor, A_k: torch.Tensor) -> AdmmState:
    """Initial state: x = A_k^T y, z a copy of it, u = 0."""
    if y.shape[-1] != A_k.shape[0]:
        raise DimensionError(
            f"measurement dim {tuple(y.shape)} does not match operator "
            f"{tuple(A_k.shape)}")
    x0 = y @ A_k
    return AdmmState(x_est=x0, z=x0.clone(), u=torch.zeros_like(x0))


def admm_forward(y: torch.Tensor, A_k: torch.Tensor, stages) -> tuple[torch.Tensor, StageTrace]:
    """Run a sequence of AdmmStage modules; returns (x_hat, trace)."""
    stages = list(stages)
    if not stages:
        raise ConfigError("at least one stage is required")
    state = init_state(y, A_k)
    ATy = y @ A_k
    estimates, gradients = [], []
    for stage in stages:
        state, x_entry, g_entry = stage(state, A_k, y, ATy=ATy)
        estimates.append(x_entry)
        gradients.append(g_entry)
    return state.x_est, StageTrace(estimates=estimates, gradients=gradients)


class AdmmNet(nn.Module):
    """L-stage unrolled recovery network."""

    def __init__(self, n: int, stages: int = 10, channels: int = 16,
                 alpha0: float = 0.01, rho0: float = 0.1,
                 dtype=torch.float64, seed: int = 0):
        super().__init__()
        if stages < 1:
            raise ConfigError(f"stages={stages} must be >= 1")
        self.n = n
        self.channels = channels
        self.dtype = dtype
        generator = torch.Generator().manual_seed(seed & 0x7FFF_FFFF_FFFF_FFFF)
        self.stages = nn.ModuleList([
            AdmmStage(n, channels, alpha0, rho0, dtype=dtype, generator=generator)
            for _ in range(stages)
        ])

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    def forward(self, y, A_k):
        y = torch.as_tensor(y, dtype=self.dtype)
        A_k = torch.as_tensor(A_k, dtype=self.dtype)
        if A_k.dim() != 2 or y.shape[-1] != A_k.shape[0]:
            raise DimensionError(
                f"measurement dim {tuple(y.shape)} does not match operator "
                f"{tuple(A_k.shape)}")
        return admm_forward(y, A_k, self.stages)


# ---------------------------------------------------------------------------
# Serialization (ADM1)
# ---------------------------------------------------------------------------

def _tensor_bytes(t: torch.Tensor) -> bytes:
    return t.detach().to(torch.float64).contiguous().numpy().astype("<f8").tobytes()


def save_admm(net: AdmmNet, path) -> None:
    """Write stage parameters to the ADM1 container (little-endian f64)."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", _ADM_MAGIC, net.num_stages, net.n, net.channels))
        for stage in net.stages:
            fh.write(struct.pack("<dd", float(stage.alpha.detach()),
                             float(stage.rho.detach())))
            d = stage.denoiser
            for t in (d.conv1.weight, d.conv1.bias, d.conv2.weight, d.conv2.bias):
                fh.write(_tensor_bytes(t))


def load_admm(path, dtype=torch.float64) -> AdmmNet:
    """Read an ADM1 container back into an AdmmNet."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head = struct.calcsize("<4sIII")
    if len(blob) < head:
        raise FormatError(f"{path}: too short for an ADM1 header")
    magic, L, n, channels = struct.unpack_from("<4sIII", blob)
    if magic != _ADM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {_ADM_MAGIC!r}")
    per_stage = 2 + channels * 9 + channels + channels * 9 + 1
    expected = head + L * per_stage * 8
    if len(blob) != expected:
        raise FormatError(f"{path}: {len(blob)} bytes, expected {expected}")
    vals = torch.from_numpy(np.frombuffer(blob, dtype="<f8", offset=head).copy())
    net = AdmmNet(n, stages=L, channels=channels, dtype=dtype, seed=0)
    pos = 0

    def take(count):
        nonlocal pos
        out = vals[pos: pos + count]
        pos += count
        return out

    with torch.no_grad():
        for stage in net.stages:
            stage.alpha.copy_(take(1)[0].to(dtype))
            stage.rho.copy_(take(1)[0].to(dtype))
            d = stage.denoiser
            d.conv1.weight.copy_(take(channels * 9).reshape(channels, 1, 3, 3).to(dtype))
            d.conv1.bias.copy_(take(channels).to(dtype))
            d.conv2.weight.copy_(take(channels * 9).reshape(1, channels, 3, 3).to(dtype))
            d.conv2.bias.copy_(take(1).to(dtype))
    return net
