"""Bootstrap standard errors and normal confidence intervals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .config import EstimatorConfig
from .errors import ConfigError, DegenerateSd, FailureBudget, IVCoxError
from .pipeline import estimate_proposed
from .proxy import seed_sequence


@dataclass(frozen=True, eq=False)
class CiReport:
    beta_hat: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    draws: int = 0
    failed: int = 0


def _quantile(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ConfigError("confidence level must lie in (0, 1)")
    return float(norm.ppf(0.5 + level / 2))


def normal_ci(beta_hat, sd, level: float = 0.95) -> CiReport:
    """``beta_hat -/+ z_{(1+level)/2} sd`` componentwise."""
    beta_hat = np.atleast_1d(np.asarray(beta_hat, dtype=float))
    sd = np.atleast_1d(np.asarray(sd, dtype=float))
    if np.any(~np.isfinite(sd)) or np.any(sd <= 0):
        raise DegenerateSd("bootstrap standard deviation is zero or not finite")
    q = _quantile(level)
    return CiReport(beta_hat, sd, beta_hat - q * sd, beta_hat + q * sd, level)


def bootstrap_sd(data, cfg: EstimatorConfig | None = None, B: int = 200, seed=0,
                 failure_budget: float = 0.10):
    """Nonparametric bootstrap: resample rows, rebuild the quantile map and proxies.

    Returns ``(sd, draws, failed)`` where ``draws`` holds the successful
    bootstrap estimates.  Failed resamples are skipped and counted.
    """
    if B < 2:
        raise ConfigError("the bootstrap needs B >= 2")
    cfg = cfg or EstimatorConfig()
    draws, failed = [], 0
    for stream in seed_sequence(seed).spawn(B):
        s_idx, s_proxy = stream.spawn(2)
        idx = np.random.default_rng(s_idx).integers(0, data.n, data.n)
        try:
            draws.append(estimate_proposed(data.take(idx), cfg, seed=s_proxy).beta)
        except ConfigError:
            raise
        except IVCoxError:
            failed += 1
    if failed > failure_budget * B or len(draws) < 2:
        raise FailureBudget(f"{failed} of {B} bootstrap resamples failed")
    draws = np.array(draws)
    return draws.std(axis=0, ddof=1), draws, failed


def bootstrap_ci(data, cfg: EstimatorConfig | None = None, B: int = 200, level: float = 0.95,
                 seed=0, beta_hat=None, failure_budget: float = 0.10) -> CiReport:
    cfg = cfg or EstimatorConfig()
    _quantile(level)
    s_fit, s_boot = seed_sequence(seed).spawn(2)
    if beta_hat is None:
        beta_hat = estimate_proposed(data, cfg, seed=s_fit).beta
    sd, draws, failed = bootstrap_sd(data, cfg, B, seed=s_boot, failure_budget=failure_budget)
    ci = normal_ci(beta_hat, sd, level)
    return CiReport(ci.beta_hat, ci.sd, ci.lower, ci.upper, level, draws.shape[0], failed)


def warp_speed_sd(estimates, boot_estimates) -> np.ndarray:
    """Spread of the one-draw-per-replication bootstrap deviations ``beta* - beta_hat``."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    boot = np.atleast_2d(np.asarray(boot_estimates, dtype=float))
    if est.shape != boot.shape or est.shape[0] < 2:
        raise ConfigError("warp-speed needs matched estimates from at least two replications")
    return (boot - est).std(axis=0, ddof=1)


def coverage(estimates, sd, beta0, level: float = 0.95) -> np.ndarray:
    """Fraction of replications whose normal interval contains ``beta0``."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    q = _quantile(level)
    half = q * np.asarray(sd, dtype=float)
    return np.mean(np.abs(est - np.asarray(beta0, dtype=float)) <= half, axis=0)


def warp_speed_coverage(design, n: int, N: int, level: float = 0.95, seed: int = 0,
                        cfg: EstimatorConfig | None = None, censoring: int = 20) -> np.ndarray:
    """Coverage of the proposed estimator's interval, one bootstrap draw per replication."""
    from .simharness import run_monte_carlo

    report = run_monte_carlo(design, n, N, estimators=("proposed",), cfg=cfg, seed=seed,
                             censoring=censoring, warp_speed=True, level=level)["proposed"]
    return report.cp95
