import numpy as np
import pytest

from acrobench import acrobot
from acrobench.models import DensityModel
from acrobench.trace import Trace


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_linear_system(seed=0, n=1500, d_y=3, noise=0.01):
    """Synthetic linear next-step data: targets = C @ A + noise."""
    rng = np.random.default_rng(seed)
    cond = np.column_stack([rng.normal(size=(n, 4)), rng.integers(-1, 2, size=n)])
    a = 0.5 * rng.normal(size=(cond.shape[1], d_y))
    targets = cond @ a + noise * rng.normal(size=(n, d_y))
    return cond, targets, a


@pytest.fixture(scope="session")
def linear_system():
    return make_linear_system()


def random_trace(variant="raw", episodes=4, episode_len=60, seed=0):
    from acrobench import harness

    return harness.gen_random_data(variant, episodes, episode_len, seed=seed)


@pytest.fixture(scope="session")
def small_raw_trace():
    return random_trace()


class StubGaussianModel(DensityModel):
    """Fixed per-dimension Gaussians around a prescribed mean function.

    ``mean_fn(cond)`` returns (m, d_y) means; sigma is shared. Handy for
    hand-computable metric tests.
    """

    kind = "stub"

    def __init__(self, mean_fn, sigma, d_y):
        super().__init__()
        self.mean_fn = mean_fn
        self.sigma = sigma
        self.d_y = d_y
        self.cond_dim = None

    def fit(self, cond, targets):
        return self

    def mixture_for_dim(self, j, cond, yprefix):
        cond = np.atleast_2d(cond)
        mu = np.atleast_2d(self.mean_fn(cond))[:, j : j + 1]
        return np.ones_like(mu), mu, np.full_like(mu, self.sigma)


def constant_stub(mu, sigma):
    mu = np.asarray(mu, dtype=float)
    return StubGaussianModel(lambda c: np.tile(mu, (len(np.atleast_2d(c)), 1)), sigma, len(mu))


def trace_from_arrays(obs, act, variant="raw"):
    obs = np.asarray(obs, dtype=float)
    rew = acrobot.reward_batch(obs, variant)
    return Trace.from_episodes([(obs, np.asarray(act, float), rew)], variant)
