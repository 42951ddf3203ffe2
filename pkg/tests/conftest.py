from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crossimpact import IntradayLiquidity, LiquidityModel, MixtureProfile

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


def random_model(rng, n, k, fund_scale=1.0):
    psi_id = rng.uniform(0.5, 3.0, n)
    W = rng.normal(size=(n, k))
    psi_f = fund_scale * rng.uniform(0.5, 3.0, k)
    return LiquidityModel(psi_id, psi_f, W)


def random_intraday(rng, periods, n, k):
    W = rng.normal(size=(n, k))
    psi_id = rng.uniform(0.2, 2.0, (periods, n))
    psi_f = rng.uniform(0.2, 2.0, (periods, k))
    return IntradayLiquidity(psi_id, psi_f, W)


def random_profile(rng, periods, theta=None, floor=0.02):
    a = rng.uniform(floor, 1.0, periods)
    b = rng.uniform(floor, 1.0, periods)
    th = rng.uniform(0.05, 0.95) if theta is None else theta
    return MixtureProfile(th, a / a.sum(), b / b.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def two_asset_model():
    # Psi_id = I, psi_f = 1, w = (1, 1)
    return LiquidityModel([1.0, 1.0], [1.0], [[1.0], [1.0]])


@pytest.fixture
def half_profile():
    return MixtureProfile(0.5, [0.5, 0.5], [0.0, 1.0])
