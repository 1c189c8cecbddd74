"""Simulation designs and Monte Carlo comparison of the estimators."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import EstimatorConfig
from .dataset import Dataset
from .errors import ConfigError, FailureBudget, IVCoxError
from .pipeline import estimate_naive, estimate_proposed

THREADS_ENV = "IVCOX_THREADS"


@dataclass(frozen=True)
class SimDesign:
    """Binary instrument, one-sided noncompliance unless ``z_rule`` says otherwise.

    ``Z = I(W=1) I(0.5 U - W + c0 + c1 X + 0.5 eps >= 0)`` with ``U`` the rank
    that also drives the durations ``T = -log(1-U) / exp(z b_z + x b_x)``.
    """

    name: str
    x_law: str
    c0: float
    c1: float
    beta: tuple
    censoring_rates: dict
    z_rule: str = "threshold"

    def rate(self, censoring: int) -> float:
        try:
            return self.censoring_rates[int(censoring)]
        except KeyError:
            raise ConfigError(f"design {self.name} has no {censoring}% censoring level") from None

    def draw_x(self, rng, n):
        if self.x_law == "beta(2,5)":
            return rng.beta(2.0, 5.0, n)
        if self.x_law == "uniform(-0.5,0.5)":
            return rng.uniform(-0.5, 0.5, n)
        if self.x_law == "bernoulli(0.5)":
            return rng.binomial(1, 0.5, n).astype(float)
        raise ConfigError(f"unknown covariate law {self.x_law!r}")


DESIGNS = {
    "continuous-beta": SimDesign("continuous-beta", "beta(2,5)", 0.45, 1.0, (0.7, 0.3),
                                 {20: 0.33, 40: 0.87}),
    "continuous-uniform": SimDesign("continuous-uniform", "uniform(-0.5,0.5)", 0.8, 1.0, (0.7, 0.3),
                                    {20: 0.30, 40: 0.82}),
    "discrete-bernoulli": SimDesign("discrete-bernoulli", "bernoulli(0.5)", 0.65, 0.3, (0.7, 0.7),
                                    {20: 0.43, 40: 1.15}),
    # treatment equals the instrument: no confounding, a sanity design
    "exogenous-bernoulli": SimDesign("exogenous-bernoulli", "bernoulli(0.5)", 0.0, 0.0, (0.7, 0.7),
                                     {20: 0.43, 40: 1.15}, z_rule="equal"),
}


def get_design(name: str) -> SimDesign:
    try:
        return DESIGNS[name]
    except KeyError:
        raise ConfigError(f"unknown design {name!r}; choose from {sorted(DESIGNS)}") from None


def generate_design(design: SimDesign | str, n: int, seed, censoring: int = 20) -> Dataset:
    if isinstance(design, str):
        design = get_design(design)
    if n < 1:
        raise ConfigError("n must be positive")
    rng = np.random.default_rng(seed)
    w = rng.binomial(1, 0.5, n)
    x = design.draw_x(rng, n)
    u = rng.uniform(size=n)
    eps = rng.standard_normal(n)
    if design.z_rule == "equal":
        z = w.copy()
    else:
        z = ((w == 1) & (0.5 * u - w + design.c0 + design.c1 * x + 0.5 * eps >= 0)).astype(np.int64)
    bz, bx = design.beta
    t = -np.log1p(-u) / np.exp(bz * z + bx * x)
    c = rng.exponential(1.0 / design.rate(censoring), n)
    y = np.minimum(t, c)
    delta = (t <= c).astype(np.int8)
    return Dataset(y, delta, z, x, w, source=f"{design.name}:{censoring}:{n}")


def true_phi(design: SimDesign | str, z, x, u):
    """``phi(z, x, u) = -log(1 - u) / exp(z b_z + x b_x)`` under ``Lambda_0(s) = s``."""
    if isinstance(design, str):
        design = get_design(design)
    bz, bx = design.beta
    return -np.log1p(-np.asarray(u, dtype=float)) / np.exp(bz * np.asarray(z) + bx * np.asarray(x))


# -- metrics ------------------------------------------------------------------

def rmse(estimates, beta0) -> float:
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    if est.size == 0:
        raise ValueError("rmse needs at least one estimate")
    diff = est - np.asarray(beta0, dtype=float)
    return float(np.sqrt(np.mean(np.sum(diff ** 2, axis=1))))


@dataclass
class SimReport:
    estimator: str
    design: str
    censoring: int
    n: int
    beta0: np.ndarray
    estimates: np.ndarray
    bias: np.ndarray
    sd: np.ndarray
    mse: np.ndarray
    rmse: float
    cp95: np.ndarray | None = None
    sd_defined: bool = True
    failed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def replications(self) -> int:
        return self.estimates.shape[0]


def summarize(estimator, design, censoring, n, estimates, beta0, failed=0, cp95=None) -> SimReport:
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    beta0 = np.asarray(beta0, dtype=float)
    N = est.shape[0]
    bias = est.mean(axis=0) - beta0
    sd = est.std(axis=0, ddof=1) if N > 1 else np.zeros(beta0.size)
    mse = np.mean((est - beta0) ** 2, axis=0)
    return SimReport(estimator, design, int(censoring), int(n), beta0, est, bias, sd, mse,
                     rmse(est, beta0), cp95, N > 1, int(failed))


# -- Monte Carlo ----------------------------------------------------------------

def replication_streams(seed, r):
    """Independent (data, proposed proxies, bootstrap) seeds for replication ``r``."""
    return np.random.SeedSequence([int(seed), int(r)]).spawn(3)


def _one_replication(args):
    design, n, censoring, cfg, seed, r, estimators, warp = args
    s_data, s_proxy, s_boot = replication_streams(seed, r)
    data = generate_design(design, n, s_data, censoring)
    out = {}
    for name in estimators:
        try:
            if name == "proposed":
                out[name] = estimate_proposed(data, cfg, seed=s_proxy).beta
            elif name == "naive":
                out[name] = estimate_naive(data, cfg).beta
            else:
                raise ConfigError(f"unknown estimator {name!r}")
        except ConfigError:
            raise
        except IVCoxError as exc:
            out[name] = exc
    if warp and isinstance(out.get("proposed"), np.ndarray):
        s_idx, s_prox = s_boot.spawn(2)
        idx = np.random.default_rng(s_idx).integers(0, n, n)
        try:
            out["warp"] = estimate_proposed(data.take(idx), cfg, seed=s_prox).beta
        except IVCoxError as exc:
            out["warp"] = exc
    return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_monte_carlo(design: SimDesign | str, n: int, N: int, estimators=("proposed", "naive"),
                    cfg: EstimatorConfig | None = None, seed: int = 0, censoring: int = 20,
                    warp_speed: bool = False, level: float = 0.95,
                    failure_budget: float = 0.10) -> dict:
    """Replicate ``N`` times; every estimator sees the same dataset per replication."""
    if isinstance(design, str):
        design = get_design(design)
    if N < 1:
        raise ConfigError("N must be at least 1")
    cfg = cfg or EstimatorConfig()
    jobs = [(design, n, censoring, cfg, seed, r, tuple(estimators), warp_speed) for r in range(N)]
    workers = _threads()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_replication, jobs))
    else:
        results = [_one_replication(job) for job in jobs]
    reports = {}
    for name in estimators:
        good = [res[name] for res in results if isinstance(res[name], np.ndarray)]
        failed = N - len(good)
        if failed > failure_budget * N:
            raise FailureBudget(f"{failed} of {N} replications of {name} failed")
        if not good:
            raise FailureBudget(f"every replication of {name} failed")
        cp = None
        if warp_speed and name == "proposed":
            pairs = [(res["proposed"], res["warp"]) for res in results
                     if isinstance(res.get("proposed"), np.ndarray)
                     and isinstance(res.get("warp"), np.ndarray)]
            if len(pairs) < 2:
                raise FailureBudget("too few successful warp-speed bootstrap draws")
            from .inference import warp_speed_sd, coverage
            est = np.array([p[0] for p in pairs])
            sd = warp_speed_sd(est, np.array([p[1] for p in pairs]))
            cp = coverage(est, sd, design.beta, level)
        reports[name] = summarize(name, design.name, censoring, n, good, design.beta, failed, cp)
    return reports
