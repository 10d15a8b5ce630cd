"""Sensing operators with an inexact (known + unknown) decomposition.

The measurement model throughout the package is

    y = (A_k + A_u) x + noise

where only A_k is available to the recovery network. A_u is a zero-mean
Gaussian perturbation whose entry scale is sigma relative to the entry scale
of A_k, so sigma^2 is the per-column power ratio between the unknown and
known parts.

Known-part constructions:
  * single-pixel camera: rows of a Sylvester Hadamard matrix in cake-cutting
    order (ascending count of 4-connected constant-sign blocks of the row
    reshaped to a sqrt(n) x sqrt(n) image), scaled by 1/sqrt(n),
  * MIMO detection: complex Gaussian channels lifted to real form.

The unknown part is sampled with a counter-based generator (splitmix64-style
hashing plus Box-Muller), so entry (i, j) depends only on (seed, i, j) and
never on the matrix shape or evaluation order.
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import hadamard
from scipy.ndimage import label

from .errors import DimensionError, FormatError, ParameterError

_SOP_MAGIC = b"SOP1"


# ---------------------------------------------------------------------------
# Hadamard known part (single-pixel camera)
# ---------------------------------------------------------------------------

def count_sign_blocks(patch: np.ndarray) -> int:
    """Number of 4-connected constant-sign regions of a 2-D +/-1 patch."""
    patch = np.asarray(patch)
    if patch.ndim != 2:
        raise DimensionError(f"expected a 2-D patch, got shape {patch.shape}")
    # default structure of scipy.ndimage.label is 4-connectivity
    _, n_pos = label(patch > 0)
    _, n_neg = label(patch < 0)
    return int(n_pos + n_neg)


def cake_cutting_order(H: np.ndarray) -> np.ndarray:
    """Stable ordering of Hadamard rows by ascending sign-block count."""
    n = H.shape[1]
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise DimensionError(f"row length {n} is not a perfect square")
    counts = np.array([count_sign_blocks(row.reshape(side, side)) for row in H])
    return np.argsort(counts, kind="stable")


def _is_power_of_four(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0 and n.bit_length() % 2 == 1


def build_hadamard_cake_cutting(n: int, m: int) -> np.ndarray:
    """First m rows of the n x n Sylvester Hadamard matrix in cake-cutting order.

    Entries are exactly +/-1 (unscaled); any row subset R satisfies
    R R^T = n I because reordering rows preserves orthogonality.
    """
    if not _is_power_of_four(n):
        raise DimensionError(f"n={n} must be a power of four")
    if not (1 <= m <= n):
        raise ParameterError(f"snapshot count m={m} must satisfy 1 <= m <= n={n}")
    H = hadamard(n).astype(np.float64)
    order = cake_cutting_order(H)
    return np.ascontiguousarray(H[order[:m]])


# ---------------------------------------------------------------------------
# Counter-based Gaussian sampling for the unknown part
# ---------------------------------------------------------------------------

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * _MIX1
    x = (x ^ (x >> np.uint64(27))) * _MIX2
    return x ^ (x >> np.uint64(31))


def _entry_hash(seed: int, rows: np.ndarray, cols: np.ndarray, lane: int) -> np.ndarray:
    h = _splitmix(np.uint64(seed) + _GOLD)
    h = _splitmix(h + _GOLD * rows.astype(np.uint64) + np.uint64(1))
    h = _splitmix(h + _GOLD * cols.astype(np.uint64) + np.uint64(2))
    return _splitmix(h + _GOLD * np.uint64(lane) + np.uint64(3))


def sample_unknown(m: int, n: int, sigma: float, seed: int) -> np.ndarray:
    """Sample the unknown perturbation, N(0, sigma^2) i.i.d. entries.

    Counter-based: entry (i, j) is a pure function of (seed, i, j), so the
    same entry comes out regardless of the requested shape. sigma scales a
    unit draw, hence for a fixed seed the matrices for two sigmas are exact
    scalar multiples of each other.
    """
    if sigma < 0:
        raise ParameterError(f"sigma={sigma} must be >= 0")
    if m < 1 or n < 1:
        raise DimensionError(f"shape ({m}, {n}) must be positive")
    if sigma == 0.0:
        return np.zeros((m, n), dtype=np.float64)
    rows, cols = np.meshgrid(np.arange(m, dtype=np.uint64),
                             np.arange(n, dtype=np.uint64), indexing="ij")
    with np.errstate(over="ignore"):
        h1 = _entry_hash(seed, rows, cols, 0)
        h2 = _entry_hash(seed, rows, cols, 1)
    # 53-bit uniforms; u1 in (0, 1] keeps the log finite
    u1 = ((h1 >> np.uint64(11)).astype(np.float64) + 1.0) / 9007199254740992.0
    u2 = (h2 >> np.uint64(11)).astype(np.float64) / 9007199254740992.0
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return sigma * z


# ---------------------------------------------------------------------------
# Operator container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensingOperator:
    """Immutable (known, unknown) pair with the mismatch level sigma."""

    known: np.ndarray
    unknown: np.ndarray
    sigma: float
    seed: int

    def __post_init__(self):
        known = np.ascontiguousarray(np.asarray(self.known, dtype=np.float64))
        unknown = np.ascontiguousarray(np.asarray(self.unknown, dtype=np.float64))
        if known.ndim != 2 or unknown.shape != known.shape:
            raise DimensionError(
                f"known {known.shape} and unknown {unknown.shape} must be equal 2-D shapes")
        if self.sigma < 0:
            raise ParameterError(f"sigma={self.sigma} must be >= 0")
        if self.sigma == 0 and np.any(unknown != 0):
            raise ParameterError("sigma=0 requires a zero unknown part")
        known.setflags(write=False)
        unknown.setflags(write=False)
        object.__setattr__(self, "known", known)
        object.__setattr__(self, "unknown", unknown)

    @property
    def m(self) -> int:
        return self.known.shape[0]

    @property
    def n(self) -> int:
        return self.known.shape[1]

    def composite(self) -> np.ndarray:
        """A_k + A_u as a fresh array."""
        return self.known + self.unknown


def spc_operator(n: int, m: int, sigma: float, seed: int) -> SensingOperator:
    """Single-pixel-camera operator: scaled cake-cutting rows plus mismatch.

    Both parts carry a global 1/sqrt(n) scale, so A_k has unit-norm rows
    (A_k A_k^T = I) and sigma keeps its meaning as the entry-scale ratio
    between unknown and known parts.
    """
    scale = 1.0 / np.sqrt(n)
    known = build_hadamard_cake_cutting(n, m) * scale
    unknown = sample_unknown(m, n, sigma, seed) * scale
    return SensingOperator(known=known, unknown=unknown, sigma=sigma, seed=seed)


# ---------------------------------------------------------------------------
# Complex-to-real lifting (MIMO)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComplexChannel:
    """Complex channel H = real + 1j * imag, optionally batched (leading dims)."""

    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        real = np.asarray(self.real, dtype=np.float64)
        imag = np.asarray(self.imag, dtype=np.float64)
        if real.shape != imag.shape or real.ndim < 2:
            raise DimensionError(
                f"real {real.shape} and imag {imag.shape} must match and be >= 2-D")
        object.__setattr__(self, "real", real)
        object.__setattr__(self, "imag", imag)

    @property
    def rx(self) -> int:
        return self.real.shape[-2]

    @property
    def tx(self) -> int:
        return self.real.shape[-1]


def lift_complex_to_real(channel: ComplexChannel, x=None, w=None):
    """Lift a complex system to its real block form.

    A = [[Re H, -Im H], [Im H, Re H]], x -> [Re x; Im x], w -> [Re w; Im w].
    Returns (A, x_lifted, w_lifted); the vector slots are None when the
    corresponding input is None.
    """
    re, im = channel.real, channel.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    A = np.concatenate([top, bot], axis=-2)

    def lift_vec(v, expected, name):
        if v is None:
            return None
        v = np.asarray(v)
        if v.shape[-1] != expected:
            raise DimensionError(
                f"{name} last dim {v.shape[-1]} does not match channel ({expected})")
        return np.concatenate([np.real(v), np.imag(v)], axis=-1).astype(np.float64)

    return A, lift_vec(x, channel.tx, "x"), lift_vec(w, channel.rx, "w")


# ---------------------------------------------------------------------------
# Measurement
# ---------------------------------------------------------------------------

@dataclass
class MeasurementBatch:
    """Signals with their (possibly teacher-side) measurements."""

    signals: np.ndarray            # (B, n)
    measurements: np.ndarray       # (B, m)
    teacher_measurements: np.ndarray | None = None
    snr_db: float | np.ndarray | None = None

    def __post_init__(self):
        if self.signals.ndim != 2 or self.measurements.ndim != 2:
            raise DimensionError("signals and measurements must be 2-D (batch, dim)")
        if self.signals.shape[0] != self.measurements.shape[0]:
            raise DimensionError(
                f"batch mismatch: {self.signals.shape[0]} signals vs "
                f"{self.measurements.shape[0]} measurements")
        if (self.teacher_measurements is not None
                and self.teacher_measurements.shape != self.measurements.shape):
            raise DimensionError("teacher measurements must match measurements shape")


def add_measurement_noise(clean: np.ndarray, snr_db, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise at a per-sample SNR (dB).

    SNR is defined as 10 log10(||A x||^2 / E||w||^2), so the per-component
    noise variance is ||clean||^2 / (m * 10^(snr/10)). snr_db=None means
    noiseless.
    """
    if snr_db is None:
        return clean
    clean = np.asarray(clean, dtype=np.float64)
    single = clean.ndim == 1
    batch = clean[None, :] if single else clean
    snr = np.broadcast_to(np.asarray(snr_db, dtype=np.float64), (batch.shape[0],))
    power = np.sum(batch ** 2, axis=-1)
    var = power / (batch.shape[-1] * 10.0 ** (snr / 10.0))
    noise = rng.standard_normal(batch.shape) * np.sqrt(var)[:, None]
    out = batch + noise
    return out[0] if single else out


def forward_measure(op: SensingOperator, x: np.ndarray, snr_db=None, seed: int = 0) -> np.ndarray:
    """y = (A_k + A_u) x + noise for a single signal (n,) or a batch (B, n)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != op.n:
        raise DimensionError(f"signal dim {x.shape[-1]} does not match operator n={op.n}")
    clean = x @ op.composite().T
    if snr_db is None:
        return clean
    return add_measurement_noise(clean, snr_db, np.random.default_rng(seed))


def fidelity_gradient(A_k: np.ndarray, x_tilde: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of 0.5 ||A_k x - y||^2 at x_tilde: A_k^T (A_k x_tilde - y).

    Accepts a shared (m, n) operator with single or batched vectors, or a
    batched (B, m, n) operator with (B, n) / (B, m) vectors.
    """
    A_k = np.asarray(A_k, dtype=np.float64)
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if A_k.ndim == 2:
        if x_tilde.shape[-1] != A_k.shape[1] or y.shape[-1] != A_k.shape[0]:
            raise DimensionError(
                f"shapes x{x_tilde.shape}, y{y.shape} do not match operator {A_k.shape}")
        return (x_tilde @ A_k.T - y) @ A_k
    if A_k.ndim == 3:
        resid = np.einsum("bmn,bn->bm", A_k, x_tilde) - y
        return np.einsum("bmn,bm->bn", A_k, resid)
    raise DimensionError(f"operator must be 2-D or 3-D, got {A_k.ndim}-D")


# ---------------------------------------------------------------------------
# Serialization (SOP1)
# ---------------------------------------------------------------------------

def save_operator(op: SensingOperator, path) -> None:
    """Write the operator to the SOP1 binary container (little-endian)."""
    header = struct.pack("<4sIIdQ", _SOP_MAGIC, op.m, op.n, float(op.sigma), op.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(op.known, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(op.unknown, dtype="<f8").tobytes())


def load_operator(path) -> SensingOperator:
    """Read an operator written by save_operator. Raises FormatError on damage."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head_size = struct.calcsize("<4sIIdQ")
    if len(blob) < head_size:
        raise FormatError(f"{path}: too short for an SOP1 header")
    magic, m, n, sigma, seed = struct.unpack_from("<4sIIdQ", blob)
    if magic != _SOP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {_SOP_MAGIC!r}")
    expected = head_size + 2 * m * n * 8
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload is {len(blob)} bytes, expected {expected} for m={m} n={n}")
    body = np.frombuffer(blob, dtype="<f8", offset=head_size)
    known = body[: m * n].reshape(m, n).copy()
    unknown = body[m * n:].reshape(m, n).copy()
    return SensingOperator(known=known, unknown=unknown, sigma=sigma, seed=int(seed))
