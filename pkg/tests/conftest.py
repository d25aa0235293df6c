import numpy as np
import pytest
import torch

from sotlab.aed import AedConfig, build_model

WORDS = ("a", "b", "c", "d")


def tiny_model(seed=0, dtype=torch.float64, **kw):
    base = dict(words=WORDS, input_dim=6, model_dim=8, encoder_layers=2, shared_encoder_layers=1,
                decoder_layers=2, att_dim=8, att_conv_filters=2, att_conv_width=3, init_range=0.5)
    base.update(kw)
    return build_model(AedConfig(**base), seed=seed).to(dtype)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
