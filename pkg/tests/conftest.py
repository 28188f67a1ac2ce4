import numpy as np
import pytest

from mpr_estimation import scenarios
from mpr_estimation.channel import ChannelParams, Receiver


def random_spd(rng, n, scale=1.0):
    G = rng.standard_normal((n, n))
    return scale * (G @ G.T / n + 0.05 * np.eye(n))


def random_block_cov(rng, model, lo=-1.0, hi=1.5):
    """Block-diagonal SPD matrix with log-uniform block scales."""
    P = np.zeros((model.n, model.n))
    for i in range(model.n_sensors):
        sl = model.block_slice(i)
        k = sl.stop - sl.start
        P[sl, sl] = random_spd(rng, k, 10 ** rng.uniform(lo, hi))
    return P


def two_level(channel, receiver=None):
    return ChannelParams(channel.s, tuple((0.0, pm) for pm in channel.p_max),
                         channel.sigma2, channel.alpha,
                         receiver or channel.receiver)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def drones():
    return scenarios.two_drones()


@pytest.fixture(scope="session")
def pendulums():
    return scenarios.two_pendulums()


@pytest.fixture(scope="session")
def drone_channel():
    return scenarios.preset_channel()


@pytest.fixture(scope="session")
def drone_channel_2lvl():
    return scenarios.preset_channel(M=2)


@pytest.fixture(scope="session")
def simple_channel_2lvl():
    return scenarios.preset_channel(M=2, receiver=Receiver.SIMPLE)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
