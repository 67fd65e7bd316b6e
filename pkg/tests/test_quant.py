import numpy as np
import pytest
from conftest import small_case, small_qmodel

from swiftchannel.fixed import ActQuant, QuantTensor
from swiftchannel.graph import build_model
from swiftchannel.ls import ls_estimate_fixed_raw
from swiftchannel.quant import (
    act_quant_from_range,
    calibrate,
    derive_requant,
    fixed_to_codes,
    forward_direct,
    infer_direct,
    qconv_direct_oracle,
    quantize_conv,
    quantize_model,
    quantize_tensor,
    quantize_weights,
    requantize,
)
from swiftchannel.refnet import ConvSpec


def test_act_quant_examples():
    s = 0.0625
    q = act_quant_from_range(0.0, 255 * s)
    assert q.scale == s and q.zero_point == 0
    assert act_quant_from_range(-1.0, 1.0).zero_point == 128
    assert act_quant_from_range(-3.5, 3.5).zero_point == 128
    assert act_quant_from_range(0.0, 0.0).scale == pytest.approx(1e-6)


def test_quantize_tensor_examples():
    assert quantize_tensor(np.zeros((1, 1, 1)), ActQuant(0.1, 128)).data[0, 0, 0] == 128
    assert quantize_tensor(np.ones((1, 1, 1)), ActQuant(0.5, 10)).data[0, 0, 0] == 12
    assert quantize_tensor(np.full((1, 1, 1), 1e6), ActQuant(0.001, 0)).data[0, 0, 0] == 255


def test_roundtrip_bound(rng):
    x = rng.uniform(-2, 3, (10, 10, 3))
    q = act_quant_from_range(x.min(), x.max())
    err = np.abs(quantize_tensor(x, q).dequantize() - x)
    assert err.max() <= q.scale / 2 + 1e-12


def test_derive_requant_examples():
    assert derive_requant(0.5, 1.0, 1.0) == (2**30, 31)
    assert derive_requant(1.0, 1.0, 1.0) == (2**30, 30)
    m, s = derive_requant(0.1, 0.1, 1.0)
    assert 2**30 <= m < 2**31
    with pytest.raises(ValueError):
        derive_requant(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        derive_requant(1.0, -1.0, 1.0)


def test_requantize_examples():
    m, s = derive_requant(0.01, 1.0, 1.0)
    assert requantize(0, m, s, 77) == 77
    # integer oracle: (1000*m + 2^(s-1)) >> s
    assert requantize(1000, m, s, 0) == (1000 * m + (1 << (s - 1))) >> s == 10
    assert requantize(-(10**9), m, s, 200) == 0
    assert requantize(10**12, m, s, 0) == 255  # saturated accumulator


def test_weight_quant_examples():
    w = np.zeros((2, 1, 1, 1))
    w[0, 0, 0, 0] = 1.27
    q, wq = quantize_weights(ConvSpec(1, 1, 2, w, [0, 0]))
    assert q[0, 0, 0, 0] == 127 and abs(wq.scales[0] - 0.01) < 1e-9
    assert q[1, 0, 0, 0] == 0 and wq.scales[1] == pytest.approx(1e-6)


def test_weights_within_range(rng):
    spec = ConvSpec(3, 4, 5, rng.normal(size=(5, 4, 3, 3)), rng.normal(size=5))
    q, _ = quantize_weights(spec)
    assert q.min() >= -127 and q.max() <= 127


def scalar_conv_oracle(x, layer):
    """Independent nested-loop integer convolution with Python ints."""
    h, w, _ = x.data.shape
    p = layer.k // 2
    zp = layer.in_q.zero_point
    out = np.zeros((h, w, layer.f_out), np.uint8)
    for y in range(h):
        for xx in range(w):
            for o in range(layer.f_out):
                acc = int(layer.q_bias[o])
                for i in range(layer.f_in):
                    for ky in range(layer.k):
                        for kx in range(layer.k):
                            yy, xc = y + ky - p, xx + kx - p
                            if 0 <= yy < h and 0 <= xc < w:
                                acc += (int(x.data[yy, xc, i]) - zp) * int(layer.q_weights[o, i, ky, kx])
                acc = max(-(2**31), min(2**31 - 1, acc))
                m, s = int(layer.mantissa[o]), int(layer.shift[o])
                v = ((acc * m + (1 << (s - 1))) >> s) + layer.out_q.zero_point
                out[y, xx, o] = min(255, max(0, v))
    return out


def _layer(rng, k, f_in, f_out):
    spec = ConvSpec(k, f_in, f_out, rng.normal(size=(f_out, f_in, k, k)), rng.normal(size=f_out))
    return quantize_conv("t", spec, ActQuant(0.04, int(rng.integers(0, 256))), ActQuant(0.3, 120))


def test_direct_oracle_vs_scalar(rng):
    for k in (1, 3):
        layer = _layer(rng, k, 3, 4)
        x = QuantTensor(rng.integers(0, 256, (4, 5, 3), dtype=np.uint8), layer.in_q)
        assert np.array_equal(qconv_direct_oracle(x, layer).data, scalar_conv_oracle(x, layer))


def test_direct_oracle_zero_point_input(rng):
    layer = _layer(rng, 3, 3, 4)
    x = QuantTensor(np.full((3, 3, 3), layer.in_q.zero_point, np.uint8), layer.in_q)
    out = qconv_direct_oracle(x, layer).data
    assert np.all(out == layer.requantize(layer.q_bias)[None, None, :])


def test_direct_oracle_single_tap(rng):
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 0.5
    layer = quantize_conv("t", ConvSpec(3, 1, 1, w, [0.0]), ActQuant(0.1, 100), ActQuant(0.1, 100))
    x = QuantTensor(np.array([[[140]]], np.uint8), layer.in_q)
    acc = (140 - 100) * int(layer.q_weights[0, 0, 1, 1])
    assert qconv_direct_oracle(x, layer).data[0, 0, 0] == layer.requantize(np.array([acc]))[0]
    with pytest.raises(ValueError):
        qconv_direct_oracle(QuantTensor(x.data, ActQuant(0.2, 100)), layer)


def test_fixed_to_codes_matches_quantize(rng):
    from swiftchannel.fixed import fx_from_real
    q = ActQuant(0.02, 100)
    x = rng.uniform(-1.9, 3.0, 2000)
    got = fixed_to_codes(fx_from_real(x), q)
    ref = quantize_tensor(x.reshape(1, 1, -1), q).data.ravel()
    assert np.abs(got.astype(int) - ref.astype(int)).max() <= 1


def test_calibration_boundaries():
    g, qm = small_qmodel()
    assert set(qm.layers) == {n.name for n in g.convs()}
    for name, l in qm.layers.items():
        assert l.q_weights.dtype == np.int8 and l.q_bias.dtype == np.int32
    # ReLU shares its input's quantizer
    assert qm.boundary("spab1.relu") == qm.boundary("spab1.conv1")


def test_calibrate_errors():
    g = build_model("student")
    with pytest.raises(ValueError):
        calibrate(g, [])
    with pytest.raises(ValueError):
        quantize_model(build_model("teacher"), {})
    with pytest.raises(ValueError, match="uncalibrated"):
        quantize_model(g, {})


def test_quant_close_to_float():
    from swiftchannel.graph import forward
    from swiftchannel.ls import ls_estimate
    g, qm = small_qmodel(calib_seeds=(0, 1, 2))
    _, obs, cache = small_case(1)
    f = forward(g, ls_estimate(obs, cache))[0]
    q = infer_direct(ls_estimate_fixed_raw(obs, cache), qm).dequantize()
    assert np.abs(f - q).max() <= 10 * qm.output_q.scale


def test_forward_direct_rejects_wrong_input():
    _, qm = small_qmodel()
    with pytest.raises(ValueError):
        forward_direct(qm, QuantTensor(np.zeros((2, 2, 2), np.uint8), ActQuant(0.123, 3)))
