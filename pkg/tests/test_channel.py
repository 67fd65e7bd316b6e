import math
from dataclasses import replace

import numpy as np
import pytest

from swiftchannel.channel import (
    ScenarioConfig,
    SamplingMasks,
    channel_from_paths,
    channel_to_tensor,
    draw_paths,
    observe_pilot,
    sampled_channel,
    synthesize_channel,
)


def test_single_flat_path_is_constant():
    cfg = ScenarioConfig(n_paths=1)
    h = channel_from_paths(cfg, [[1, 1]], [0.0], [0.0])
    assert np.array_equal(h.h_full, np.ones((432, 64, 2), complex))


def test_default_shapes():
    cfg = ScenarioConfig()
    h = synthesize_channel(cfg)
    assert h.h_full.shape == (432, 64, 2)
    obs = observe_pilot(h, cfg)
    assert obs.y.shape == (108, 16, 2)
    assert obs.srs.shape == (108, 2)
    assert np.allclose(np.abs(obs.srs), 1.0)


def test_comb_masks():
    m = SamplingMasks.comb(ScenarioConfig())
    assert list(m.antenna_idx) == list(range(0, 64, 4))
    assert list(m.subcarrier_idx) == list(range(0, 432, 4))


def test_determinism():
    cfg = ScenarioConfig(seed=7)
    a, b = synthesize_channel(cfg), synthesize_channel(cfg)
    assert np.array_equal(a.h_full, b.h_full)
    oa, ob = observe_pilot(a, cfg), observe_pilot(b, cfg)
    assert np.array_equal(oa.y, ob.y) and np.array_equal(oa.srs, ob.srs)
    c = synthesize_channel(replace(cfg, seed=8))
    assert not np.array_equal(a.h_full, c.h_full)


def test_noiseless_identity_pilot():
    cfg = ScenarioConfig(snr_db=math.inf)
    h = synthesize_channel(cfg)
    obs = observe_pilot(h, cfg, srs=np.ones((108, 2)))
    assert np.array_equal(obs.y, sampled_channel(h, obs.masks))


def test_noiseless_energy():
    cfg = ScenarioConfig()
    h = synthesize_channel(cfg)
    obs = observe_pilot(h, cfg, noiseless=True)
    assert np.allclose(np.abs(obs.y), np.abs(sampled_channel(h, obs.masks)), rtol=1e-12)


@pytest.mark.parametrize("snr", [0.0, 10.0, 25.0])
def test_empirical_snr(snr):
    # 128*64*2 = 16384 entries per draw; 8 draws > 1e5 samples
    cfg = ScenarioConfig(n_c=512, n_bs=256, snr_db=snr)
    p_sig = p_noise = 0.0
    for seed in range(8):
        c = replace(cfg, seed=seed)
        h = synthesize_channel(c)
        clean = observe_pilot(h, c, noiseless=True).y
        noisy = observe_pilot(h, c).y
        p_sig += np.sum(np.abs(clean) ** 2)
        p_noise += np.sum(np.abs(noisy - clean) ** 2)
    assert abs(10 * math.log10(p_sig / p_noise) - snr) <= 0.5


def test_delays_within_window():
    cfg = ScenarioConfig(n_paths=64)
    _, delays, angles = draw_paths(cfg)
    assert np.all(delays >= 0) and np.all(delays <= 1 / (2 * 120e3 * 4))
    assert np.all(np.abs(angles) <= np.pi / 2)


def test_config_errors():
    with pytest.raises(ValueError, match="divisible"):
        ScenarioConfig(n_bs=63)
    with pytest.raises(ValueError):
        synthesize_channel(ScenarioConfig(n_paths=0))


def test_channel_to_tensor_order():
    h = np.arange(2 * 3 * 2).reshape(2, 3, 2) * (1 + 2j)
    t = channel_to_tensor(h)
    assert t.shape == (2, 6, 2)
    # width index b * n_ue + u
    assert t[1, 2 * 2 + 1, 0] == h[1, 2, 1].real
    assert t[1, 2 * 2 + 1, 1] == h[1, 2, 1].imag
