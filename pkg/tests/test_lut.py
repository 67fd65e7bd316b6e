import numpy as np

from swiftchannel.fixed import fx_from_real, fx_to_real
from swiftchannel.lut import LUT_SIZE, attention_fixed, build_sigma_lut, sigma_a


def test_sigma_a_values():
    assert sigma_a(0.0) == 0.0
    x = np.linspace(-8, 8, 101)
    assert np.allclose(sigma_a(-x), -sigma_a(x), atol=0)
    # 1/(1+e^-3) - 0.5 = 0.45257412682243...
    assert abs(sigma_a(3.0) - (1 / (1 + np.exp(-3.0)) - 0.5)) < 1e-15
    assert abs(sigma_a(3.0) - 0.452574) <= 1e-6


def test_lut_shape_and_monotone():
    lut = build_sigma_lut()
    assert lut.entries.shape == (LUT_SIZE,)
    assert np.all(np.diff(lut.entries) > 0)
    mid = LUT_SIZE // 2
    assert lut.entries[mid - 1] < 0 < lut.entries[mid]


def test_lut_error_bound():
    lut = build_sigma_lut()
    v = np.linspace(-2.999, 2.999, 20001)
    err = np.abs(fx_to_real(lut.lookup(fx_from_real(v))) - sigma_a(v))
    assert err.max() <= 0.25 * 6 / 512


def test_lut_clamps():
    lut = build_sigma_lut()
    assert lut.lookup(fx_from_real(10.0)) == fx_from_real(sigma_a(3.0))
    assert lut.lookup(fx_from_real(-10.0)) == fx_from_real(sigma_a(-3.0))
    assert lut.index(fx_from_real(0.0)) == LUT_SIZE // 2


def test_attention_fixed_near_float():
    lut = build_sigma_lut()
    rng = np.random.default_rng(3)
    v, b = rng.uniform(-2.99, 2.99, 1000), rng.uniform(-4, 4, 1000)
    got = fx_to_real(attention_fixed(fx_from_real(v), fx_from_real(b), lut))
    ref = sigma_a(v) * (v + b)
    bound = 0.25 * 6 / 512 * np.abs(v + b) + 2.0**-22
    assert np.all(np.abs(got - ref) <= bound)
