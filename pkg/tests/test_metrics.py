import math

import numpy as np
import pytest

from refliter.autodiff import ArgumentError, DimensionError
from refliter.metrics import PSNR_CAP, SSIM_C1, psnr, ssim

from oracles import direct_psnr, direct_ssim


def _rand(seed, shape=(3, 16, 16)):
    return np.random.default_rng(seed).random(shape)


def test_psnr_examples():
    a = np.full((3, 8, 8), 0.3)
    assert psnr(a, a) == PSNR_CAP == 100.0
    assert psnr(np.zeros((3, 4, 4)), np.ones((3, 4, 4))) == 0.0
    assert psnr(a, a + 0.1) == pytest.approx(10 * math.log10(1 / 0.01), abs=1e-9)
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_tiny_error_capped():
    a = np.zeros((3, 4, 4))
    b = a.copy()
    b[0, 0, 0] = 1e-9
    assert psnr(a, b) == PSNR_CAP


def test_psnr_matches_direct_and_symmetric():
    for s in range(10):
        a, b = _rand(2 * s), _rand(2 * s + 1)
        assert psnr(a, b) == pytest.approx(direct_psnr(a, b), abs=1e-9)
        assert psnr(a, b) == psnr(b, a)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))
    with pytest.raises(DimensionError):
        ssim(np.zeros((3, 12, 12)), np.zeros((3, 12, 13)))


def test_ssim_identical_is_exactly_one():
    for s in range(5):
        a = _rand(s, (3, 13, 17))
        assert ssim(a, a) == 1.0


def test_ssim_constant_closed_form():
    a, b = np.full((3, 16, 16), 0.2), np.full((3, 16, 16), 0.4)
    expected = (2 * 0.2 * 0.4 + SSIM_C1) / (0.2 ** 2 + 0.4 ** 2 + SSIM_C1)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-12)


def test_ssim_matches_direct_loops_and_symmetric():
    for s in range(3):
        a, b = _rand(10 + s, (3, 14, 15)), _rand(20 + s, (3, 14, 15))
        assert ssim(a, b) == pytest.approx(direct_ssim(a, b), abs=1e-10)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)
        assert -1 <= ssim(a, b) <= 1


def test_ssim_window_too_large():
    with pytest.raises(ArgumentError):
        ssim(np.zeros((3, 10, 20)), np.zeros((3, 10, 20)))
