import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pilot.metrics import gaussian_window, psnr, ssim


def naive_ssim(x, y, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Per-window weighted statistics, one window at a time."""
    w = gaussian_window(size, sigma)
    L = y.max() - y.min()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            a, b = x[i : i + size, j : j + size], y[i : i + size, j : j + size]
            ma, mb = np.sum(w * a), np.sum(w * b)
            va, vb = np.sum(w * (a - ma) ** 2), np.sum(w * (b - mb) ** 2)
            cab = np.sum(w * (a - ma) * (b - mb))
            vals.append((2 * ma * mb + c1) * (2 * cab + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return np.mean(vals)


def test_psnr_identical_is_inf(rng):
    x = rng.normal(size=(8, 8))
    assert psnr(x, x) == float("inf")


def test_psnr_formula():
    t = np.zeros((10, 10))
    t[0, 0] = 1.0
    p = t + 0.1
    assert psnr(p, t) == pytest.approx(20.0, abs=1e-12)


def test_psnr_constant_offset_exact(rng):
    t = rng.uniform(0, 3, size=(16, 16))
    c = 0.37
    expected = 20 * np.log10((t.max() - t.min()) / c)
    assert abs(psnr(t + c, t) - expected) < 1e-9


def test_psnr_vs_two_line_computation(rng):
    t, p = rng.normal(size=(20, 20)), rng.normal(size=(20, 20))
    mse = np.mean((p - t) ** 2)
    assert psnr(p, t) == pytest.approx(10 * np.log10((t.max() - t.min()) ** 2 / mse), rel=1e-12)


def test_psnr_monotone_along_segment(rng):
    t, p = rng.normal(size=(12, 12)), rng.normal(size=(12, 12))
    vals = [psnr(t + a * (p - t), t) for a in np.linspace(1, 0.05, 10)]
    assert np.all(np.diff(vals) > 0)


def test_ssim_identity(rng):
    x = rng.uniform(size=(32, 32))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_offset_below_one(rng):
    x = rng.uniform(size=(32, 32))
    assert ssim(x + 5.0, x) < 0.5


def test_ssim_matches_naive(rng):
    x, y = rng.uniform(size=(20, 20)), rng.uniform(size=(20, 20))
    y = 0.6 * x + 0.4 * y
    assert ssim(x, y) == pytest.approx(naive_ssim(x, y), rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_ssim_range(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(16, 16)), rng.normal(size=(16, 16))
    assert -1 <= ssim(x, y) <= 1
