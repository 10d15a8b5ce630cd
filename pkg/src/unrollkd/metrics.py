"""Evaluation metrics: PSNR, SSIM and bit error rate.

PSNR assumes a peak signal value of 1. SSIM follows the standard formulation
with an 11x11 Gaussian window (std 1.5), constants C1 = 0.01^2, C2 = 0.03^2,
and averages the map over valid (fully inside) window positions only.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .errors import DimensionError, SymbolError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def psnr(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for peak value 1.

    Returns +inf when the inputs are identical (zero MSE).
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Mean structural similarity over valid window positions.

    Both images must be 2-D, equal shape, and at least as large as the
    11x11 window.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.ndim != 2 or x.shape != x_hat.shape:
        raise DimensionError(f"expected equal 2-D shapes, got {x.shape} vs {x_hat.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise DimensionError(
            f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = _gaussian_window()
    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(x_hat, win, mode="valid")
    xx = convolve2d(x * x, win, mode="valid")
    yy = convolve2d(x_hat * x_hat, win, mode="valid")
    xy = convolve2d(x * x_hat, win, mode="valid")
    var_x = xx - mu_x ** 2
    var_y = yy - mu_y ** 2
    cov = xy - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def ber(sent: np.ndarray, decided: np.ndarray) -> float:
    """Bit error rate between two +/-1 symbol arrays of equal shape."""
    sent = np.asarray(sent)
    decided = np.asarray(decided)
    if sent.shape != decided.shape:
        raise DimensionError(f"shape mismatch: {sent.shape} vs {decided.shape}")
    for name, arr in (("sent", sent), ("decided", decided)):
        if not np.all(np.isin(arr, (-1, 1))):
            raise SymbolError(f"{name} symbols must all be -1 or +1")
    return float(np.mean(sent != decided))


@dataclass
class MetricRecord:
    """One metric value with the context it was measured in."""

    metric: str
    value: float
    context: dict = field(default_factory=dict)
