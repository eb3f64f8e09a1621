import numpy as np
import pytest

from salience_align.spectral import LUMA_WEIGHTS, SpectralParams, spectral_residual, to_luminance

from conftest import defect_contrast, grating_with_defect


def test_constant_image_is_flat():
    for v in (0.0, 17.0, 255.0):
        hm = spectral_residual(np.full((40, 50), v))
        assert hm.values.max() - hm.values.min() <= 1.0


def test_impulse_is_found():
    rng = np.random.default_rng(0)
    for _ in range(10):
        img = np.zeros((64, 64))
        y, x = rng.integers(4, 60, 2)
        img[y, x] = 255
        hm = spectral_residual(img)
        py, px = np.unravel_index(np.argmax(hm.values), hm.shape)
        assert np.hypot(py - y, px - x) <= 3


def test_grating_defect_pops_out():
    rng = np.random.default_rng(1)
    for _ in range(10):
        img, block = grating_with_defect(rng)
        assert defect_contrast(spectral_residual(img), block) >= 2


def test_brightness_invariance():
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 255, (48, 80, 3))
    base = spectral_residual(img)
    for k in (0.01, 0.5, 3.0):
        np.testing.assert_allclose(spectral_residual(img * k).values, base.values, atol=1e-6)


def test_output_range_and_shape():
    img = np.random.default_rng(3).uniform(0, 255, (30, 70))
    hm = spectral_residual(img)
    assert hm.shape == (30, 70)
    assert hm.values.min() >= 0 and hm.values.max() == 255


def test_rgb_uses_fixed_luma_weights():
    rgb = np.random.default_rng(4).uniform(0, 255, (20, 20, 3))
    gray = rgb @ np.array([0.299, 0.587, 0.114])
    np.testing.assert_allclose(to_luminance(rgb), gray)
    np.testing.assert_array_equal(LUMA_WEIGHTS, [0.299, 0.587, 0.114])
    np.testing.assert_allclose(spectral_residual(rgb).values, spectral_residual(gray).values)
    np.testing.assert_allclose(to_luminance(gray[:, :, None]), gray)


def test_deterministic():
    img = np.random.default_rng(5).uniform(0, 255, (33, 41))
    assert np.array_equal(spectral_residual(img).values, spectral_residual(img).values)


@pytest.mark.parametrize("kwargs", [{"internal_size": 4}, {"avg_kernel": 4}, {"avg_kernel": 1},
                                    {"blur_sigma": 0.0}])
def test_param_validation(kwargs):
    with pytest.raises(ValueError):
        SpectralParams(**kwargs)


def test_degenerate_input():
    with pytest.raises(ValueError):
        spectral_residual(np.zeros((0, 5)))
    with pytest.raises(ValueError):
        spectral_residual(np.zeros((4, 4, 2)))
