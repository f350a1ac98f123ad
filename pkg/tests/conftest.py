import numpy as np
import pytest

from neuroswap.encoders import EncoderConfig
from neuroswap.synthdata import WorldConfig, generate_world


def tiny_encoder(**kw) -> EncoderConfig:
    base = dict(image_size=(16, 16), input_pool=2, frame_channels=(4,), frame_fc=(16,),
                neural_temporal_channels=(16, 16), behavior_channels=(16, 16), attention_dim=4,
                embedding_dim=128, projection_dim=32)
    base.update(kw)
    return EncoderConfig(**base)


def micro_world_config(**kw) -> WorldConfig:
    base = dict(image_size=(16, 16), n_trials=4, trial_seconds=20.0)
    base.update(kw)
    return WorldConfig(**base)


@pytest.fixture(scope="session")
def micro_world():
    return generate_world(micro_world_config(), seed=0)


@pytest.fixture(scope="session")
def micro_prepared(micro_world):
    from neuroswap.harness import prepare

    return prepare(micro_world, with_raw=True)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# criterion number -> (passed, detail line); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
