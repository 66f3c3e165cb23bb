import numpy as np
import pytest

from risflow.channel import ChannelStats, Scenario
from risflow.config import load_config
from risflow.phase_opt import optimize


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk():
    cfg = load_config(profile="desk")
    stats = cfg.stats()
    sol = optimize(stats, rng=np.random.default_rng(cfg.seed))
    return cfg, stats, sol


def single_queue(mu_target=None):
    """K = 1 scenario with identity correlation; returns (scenario, stats, eta, mu).

    ``mu`` is the service rate in files/slot.
    """
    import math

    from risflow.sinr import sinr_vector

    st = ChannelStats.from_matrices([1.0], [1.0] * 4, np.eye(8), np.eye(8))
    sc = Scenario([[0.5, 0.5]], [[0.2, 0.2]], 8, 1.0, 1.0, 0.0, 1e6)
    s = sinr_vector(st, 8.0, [0], 1.0, 1.0)[0]
    mu = sc.bandwidth_hz * sc.slot_s * math.log2(1 + s) / 1e6
    return sc, st, 8.0, mu
