"""Metric tests: PSNR/SSIM/BER examples, symmetry properties and the naive
sliding-window SSIM oracle."""

import math

import numpy as np
import pytest

from unrollkd import DimensionError, MetricRecord, SymbolError, ber, psnr, ssim
from unrollkd.metrics import SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW


def naive_ssim(x, x_hat):
    """Direct sliding-window SSIM, no convolution tricks."""
    half = (SSIM_WINDOW - 1) / 2.0
    coords = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(coords ** 2) / (2.0 * SSIM_SIGMA ** 2))
    win = np.outer(g, g)
    win /= win.sum()
    rows = x.shape[0] - SSIM_WINDOW + 1
    cols = x.shape[1] - SSIM_WINDOW + 1
    vals = []
    for r in range(rows):
        for c in range(cols):
            a = x[r:r + SSIM_WINDOW, c:c + SSIM_WINDOW]
            b = x_hat[r:r + SSIM_WINDOW, c:c + SSIM_WINDOW]
            mu_a = np.sum(win * a)
            mu_b = np.sum(win * b)
            var_a = np.sum(win * a * a) - mu_a ** 2
            var_b = np.sum(win * b * b) - mu_b ** 2
            cov = np.sum(win * a * b) - mu_a * mu_b
            num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
            den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
            vals.append(num / den)
    return float(np.mean(vals))


class TestPsnr:
    def test_identical_is_infinite(self):
        x = np.random.default_rng(0).random((8, 8))
        assert psnr(x, x) == math.inf

    def test_mse_001_is_20db(self):
        x = np.zeros(4)
        x_hat = np.full(4, 0.1)  # MSE 0.01
        assert abs(psnr(x, x_hat) - 20.0) < 1e-12

    def test_mse_one_is_0db(self):
        x = np.zeros(5)
        x_hat = np.ones(5)  # MSE 1
        assert abs(psnr(x, x_hat)) < 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((2, 16, 16))
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            psnr(np.zeros(3), np.zeros(4))


class TestSsim:
    def test_self_similarity_is_one(self):
        x = np.random.default_rng(2).random((32, 32))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_constant_pair_is_one(self):
        x = np.full((16, 16), 0.5)
        assert ssim(x, x.copy()) == pytest.approx(1.0, abs=1e-12)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.random((32, 32))
        x_hat = np.clip(x + 0.1 * rng.standard_normal((32, 32)), 0, 1)
        assert abs(ssim(x, x_hat) - naive_ssim(x, x_hat)) <= 1e-6

    def test_matches_naive_oracle_structured(self):
        yy, xx = np.meshgrid(np.linspace(0, 1, 32), np.linspace(0, 1, 32))
        x = 0.5 + 0.5 * np.sin(6 * xx) * np.cos(4 * yy)
        x_hat = np.clip(x * 0.8 + 0.1, 0, 1)
        assert abs(ssim(x, x_hat) - naive_ssim(x, x_hat)) <= 1e-6

    def test_symmetric(self):
        rng = np.random.default_rng(4)
        a = rng.random((20, 20))
        b = rng.random((20, 20))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)

    def test_degrades_with_noise(self):
        rng = np.random.default_rng(5)
        x = rng.random((32, 32))
        mild = np.clip(x + 0.05 * rng.standard_normal(x.shape), 0, 1)
        harsh = np.clip(x + 0.5 * rng.standard_normal(x.shape), 0, 1)
        assert ssim(x, harsh) < ssim(x, mild) < 1.0

    def test_rejects_small_images(self):
        with pytest.raises(DimensionError):
            ssim(np.zeros((10, 10)), np.zeros((10, 10)))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))


class TestBer:
    def test_identical_is_zero(self):
        s = np.array([1, -1, 1, 1])
        assert ber(s, s) == 0.0

    def test_all_flipped_is_one(self):
        s = np.array([1, -1, 1, 1])
        assert ber(s, -s) == 1.0

    def test_one_flip_in_four(self):
        s = np.array([1, -1, 1, 1])
        d = np.array([1, -1, -1, 1])
        assert ber(s, d) == 0.25

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        s = rng.choice([-1, 1], size=100)
        d = rng.choice([-1, 1], size=100)
        perm = rng.permutation(100)
        assert ber(s, d) == ber(s[perm], d[perm])

    def test_rejects_non_symbols(self):
        with pytest.raises(SymbolError):
            ber(np.array([1, 0]), np.array([1, 1]))
        with pytest.raises(SymbolError):
            ber(np.array([1, -1]), np.array([1, 0.5]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ber(np.ones(3), np.ones(4))

    def test_batched_symbols(self):
        s = np.ones((2, 4))
        d = s.copy()
        d[0, 0] = -1
        assert ber(s, d) == 0.125


class TestMetricRecord:
    def test_carries_context(self):
        rec = MetricRecord(metric="psnr", value=28.5,
                           context={"sigma": 0.3, "repetition": 1})
        assert rec.metric == "psnr"
        assert rec.context["sigma"] == 0.3
