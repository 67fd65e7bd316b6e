import numpy as np
import pytest

from swiftchannel.channel import ScenarioConfig, observe_pilot, synthesize_channel
from swiftchannel.graph import build_model
from swiftchannel.ls import build_srs_cache, ls_estimate
from swiftchannel.quant import calibrate, quantize_model

SMALL = dict(n_c=32, n_bs=16, n_ue=2)  # LS grid 8 x 8


def small_case(seed=0, snr_db=10.0, **kw):
    cfg = ScenarioConfig(**{**SMALL, **kw}, snr_db=snr_db, seed=seed)
    obs = observe_pilot(synthesize_channel(cfg), cfg)
    return cfg, obs, build_srs_cache(obs.srs)


def small_qmodel(seed=0, calib_seeds=(0,)):
    g = build_model("student", seed=seed)
    xs = []
    for s in calib_seeds:
        _, obs, cache = small_case(s)
        xs.append(ls_estimate(obs, cache))
    return g, quantize_model(g, calibrate(g, xs))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
