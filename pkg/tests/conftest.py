import numpy as np
import pytest

from kktgp import gp, mining, scenarios, synth

# Filled by tests/test_acceptance.py; printed once at the end of the run.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def cup():
    return scenarios.cup_scenario()


@pytest.fixture(scope="session")
def cup_certified(cup):
    return synth.cup_demos(cup, 4)


@pytest.fixture(scope="session")
def cup_dataset(cup_certified):
    return mining.build_dataset([c.demo for c in cup_certified])


@pytest.fixture(scope="session")
def cup_model(cup_dataset):
    """Cup model with hand-set hyperparameters close to the trained ones (no training)."""
    h = gp.Hyperparams(1.6, [1.5, 1.5], 1e-6, 1e-6)
    return gp.DerivGPModel(h, cup_dataset)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def geodesic_corpus():
    """Certified disc-wrapping demos over two scenarios and both entry styles (722 timesteps)."""
    out = []
    for sc in (scenarios.annulus_path_scenario(), scenarios.discs_scenario()):
        for entry in ("tangent", "secant"):
            out += [(sc, cd) for cd in synth.synth_geodesic_demos(sc, 10, seed=1, entry=entry,
                                                                  max_horizon=30)]
    return out
