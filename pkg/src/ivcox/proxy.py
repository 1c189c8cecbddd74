"""Generated observations on which the treatment is exogenous.

Each row gets an independent uniform rank ``U_g`` and a generated censoring
rank ``U_c`` supported on ``[u_bar - tau, u_bar]`` (a point mass at ``u_bar``
when ``tau = 0``).  The proxy duration is ``phi_hat(z, x, min(U_g, U_c))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SaturationBudgetExceeded


@dataclass(frozen=True)
class ProxyConfig:
    u_bar: float = 0.9
    tau: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.u_bar < 1.0:
            raise ConfigError("u_bar must lie in (0, 1)")
        if not 0.0 <= self.tau <= self.u_bar:
            raise ConfigError("tau must lie in [0, u_bar]")


@dataclass(frozen=True, eq=False)
class ProxyDataset:
    y: np.ndarray
    delta: np.ndarray
    v: np.ndarray
    rows: np.ndarray
    dropped: int = 0
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.y.size


def seed_sequence(seed) -> np.random.SeedSequence:
    """Accept an int, a sequence of ints, or an existing SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def proxy_rng(seed) -> np.random.Generator:
    """Counter-based stream: row ``i`` always receives the ``i``-th draws."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed)))


def draw_u_tilde(cfg: ProxyConfig, rng=None, size=None):
    """Draw ``(U~, Delta)`` with ``U~ = min(U_g, U_c)`` and ``Delta = I(U_g <= U_c)``."""
    rng = rng if rng is not None else proxy_rng(cfg.seed)
    u_g = np.asarray(rng.random(size), dtype=float)
    if cfg.tau == 0:
        u_c = np.full(u_g.shape, cfg.u_bar)
    else:
        u_c = cfg.u_bar - cfg.tau + cfg.tau * np.asarray(rng.random(size), dtype=float)
    delta = (u_g <= u_c).astype(np.int8)
    u_tilde = np.minimum(u_g, u_c)
    if size is None:
        return float(u_tilde), int(delta)
    return u_tilde, delta


def u_tilde_cdf(u: float, cfg: ProxyConfig):
    """``(P(U~ <= u), P(U~ <= u, Delta = 1))`` in closed form."""
    ub, tau = cfg.u_bar, cfg.tau
    if u < 0:
        return 0.0, 0.0
    if tau == 0:
        if u < ub:
            return float(u), float(u)
        return 1.0, float(ub)
    lo = ub - tau
    if u < lo:
        return float(u), float(u)
    if u < ub:
        total = (1 - ub / tau) + u * (1 / tau + ub / tau) - u ** 2 / tau
        events = -u ** 2 / (2 * tau) + u * ub / tau - lo ** 2 / (2 * tau)
        return float(total), float(events)
    return 1.0, float((ub ** 2 - lo ** 2) / (2 * tau))


def make_proxies(data, qmap, cfg: ProxyConfig, rng=None, saturation: str = "drop",
                 cap: float = 0.05) -> ProxyDataset:
    """One proxy row per observation; saturated rows are dropped, clamped or fatal."""
    rng = rng if rng is not None else proxy_rng(cfg.seed)
    if abs(cfg.u_bar - qmap.u_bar) > 1e-12:
        raise ConfigError("proxy u_bar differs from the quantile map's u_bar")
    u_tilde, delta = draw_u_tilde(cfg, rng, size=data.n)
    y_g, sat = qmap.lookup(data.z, data.x, u_tilde)
    v = data.design_matrix()
    rows = np.arange(data.n)
    n_sat = int(sat.sum())
    if n_sat and saturation == "error":
        raise SaturationBudgetExceeded(f"{n_sat} proxy rows hit the estimable range limit")
    if saturation == "drop" and n_sat:
        if n_sat > cap * data.n:
            raise SaturationBudgetExceeded(
                f"{n_sat} of {data.n} proxy rows saturated, above the {cap:.1%} budget")
        keep = ~sat
        y_g, delta, v, rows = y_g[keep], delta[keep], v[keep], rows[keep]
    provenance = {"source": data.source, "seed": cfg.seed, "tau": cfg.tau, "u_bar": cfg.u_bar,
                  "saturated": n_sat, "policy": saturation}
    return ProxyDataset(np.clip(y_g, 0.0, qmap.t_bar), delta, v, rows,
                        dropped=n_sat if saturation == "drop" else 0, provenance=provenance)
