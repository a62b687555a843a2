import numpy as np
import pytest

from leadq import config as configmod

TINY = {
    "data.n_classes": 4,
    "data.dim": 6,
    "data.per_class": 400,
    "data.test_size": 200,
    "held_out_size": 100,
    "clients": 3,
    "rounds": 12,
    "fl.iterations": 4,
    "fl.lr": 0.1,
    "leadq.warmup_steps": 4,
    "leadq.episode_length": 4,
    "leadq.batch_size": 4,
    "leadq.max_update_steps": 3,
    "leadq.agent_hidden": 8,
    "leadq.mixer_hidden": 4,
    "checkpoint_every": 5,
}


def tiny_config(**overrides):
    flat = dict(TINY)
    flat.update({k.replace("__", "."): v for k, v in overrides.items()})
    return configmod.from_flat(flat)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg(tmp_path):
    return tiny_config(out=str(tmp_path / "run"))


def pytest_terminal_summary(terminalreporter):
    from _util import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
