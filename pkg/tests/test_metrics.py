import numpy as np
import pytest

from curvesplat.metrics import PSNR_SENTINEL, MetricError, dyn_psnr, mean_dyn_psnr, psnr, ssim


def test_psnr_examples():
    a = np.random.default_rng(0).uniform(0.2, 0.8, (8, 8, 3))
    assert psnr(a + 0.1, a) == pytest.approx(20.0, abs=1e-9)
    assert psnr(a, a.copy()) == PSNR_SENTINEL
    b = a + np.random.default_rng(1).normal(0, 0.05, a.shape)
    assert psnr(a, b, np.ones((8, 8))) == psnr(a, b)


def test_psnr_symmetric_and_errors():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(MetricError):
        psnr(a, b, np.zeros((8, 8)))
    with pytest.raises(MetricError):
        psnr(a, b[:4])


def test_dyn_psnr_examples():
    rng = np.random.default_rng(3)
    a = rng.uniform(0.2, 0.8, (8, 8, 3))
    b = a + rng.normal(0, 0.05, a.shape)
    assert dyn_psnr(a, b, np.ones((8, 8))) == psnr(a, b)
    m = np.zeros((8, 8), bool)
    m[2:4, 1:6] = True
    c = a.copy()
    c[m] += 0.1
    c[~m] += rng.normal(0, 0.3, c[~m].shape)
    assert dyn_psnr(c, a, m) == pytest.approx(20.0, abs=1e-9)
    assert dyn_psnr(a, a, m) == PSNR_SENTINEL
    assert dyn_psnr(a, b, np.zeros((8, 8))) is None


def test_dyn_psnr_aggregation_skips_empty_frames():
    assert mean_dyn_psnr([20.0, None, 30.0]) == 25.0
    assert mean_dyn_psnr([None, None]) is None


def test_ssim_symmetric_and_identity():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
