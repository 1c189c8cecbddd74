import numpy as np
import pytest

from ivcox.dataset import Dataset


def random_censored(rng, n, levels=2, ties=False):
    """Small exogenous dataset; ``ties`` rounds durations to create tied times."""
    w = rng.integers(0, levels, n)
    z = w.copy()
    x = rng.uniform(-1, 1, n)
    t = rng.exponential(1.0, n)
    c = rng.exponential(2.0, n)
    y = np.minimum(t, c)
    if ties:
        y = np.round(y, 1) + 0.1
    return Dataset(y, (t <= c).astype(int), z, x, w)


def three_level_compliance(seed=0, scale=1.0):
    """Three-level design with the zero pattern of the job-training application.

    Instrument 0 only holds control units; instrument 1 holds control and the
    first treatment; instrument 2 holds control and the second treatment.
    """
    counts = {(0, 0): 527, (0, 1): 104, (0, 2): 176, (1, 1): 408, (2, 2): 328}
    rng = np.random.default_rng(seed)
    z, w = [], []
    for (zl, wl), c in counts.items():
        m = int(round(c * scale))
        z += [zl] * m
        w += [wl] * m
    z, w = np.array(z), np.array(w)
    n = z.size
    x = rng.uniform(0, 1, n)
    u = rng.uniform(size=n)
    eta = 0.9 * (z == 1) + 0.9 * (z == 2) + 0.3 * x
    t = -np.log1p(-u) / np.exp(eta)
    c = rng.exponential(2.5, n)
    return Dataset(np.minimum(t, c), (t <= c).astype(int), z, x, w)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
