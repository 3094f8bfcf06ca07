import sys

import numpy as np
import pytest

from hypercolor.config import TrainConfig


def tiny_config(**overrides):
    """Miniature config: latent 4, target [3, 8, 3]."""
    base = dict(seed=0, latent_dim=4, encoder_point_widths=[8, 16], encoder_head_widths=[16],
                hyper_widths=[16], target_widths=[3, 8, 3], color_widths=[3, 8, 3],
                recon_points=32, steps=5)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny():
    return tiny_config


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.report_lines():
        terminalreporter.write_line(line)
