"""Shared fixtures: tiny models and inputs sized for fast checks."""

import numpy as np
import pytest

from mixerlab.mixer import MixerConfig, MixerModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_CFG = dict(image_side=8, channels_in=1, patch_size=4, hidden_dim=8,
                n_layers=3, token_mlp_dim=5, channel_mlp_dim=7, n_classes=4)


@pytest.fixture
def tiny_cfg():
    return MixerConfig(**TINY_CFG)


@pytest.fixture
def tiny_model(tiny_cfg):
    return MixerModel(tiny_cfg, seed=11)


@pytest.fixture
def tiny_batch(tiny_cfg, rng):
    x = rng.uniform(0.0, 1.0, size=(3, 1, tiny_cfg.image_side, tiny_cfg.image_side))
    y = rng.integers(0, tiny_cfg.n_classes, size=3)
    return x.astype(np.float32), y.astype(np.int64)


# Acceptance-criterion results collected by tests/test_acceptance.py; the
# terminal summary prints one line per criterion at the end of the session.
ACCEPTANCE_RESULTS = {}


def record_criterion(number, title, passed, detail=""):
    ACCEPTANCE_RESULTS[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number}: {status} - {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
