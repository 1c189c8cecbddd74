"""The three-step estimator: quantile map, proxies, partial likelihood."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import EstimatorConfig
from .coxph import CoxFit, fit_cox, naive_cox
from .phi_solver import QuantileMap
from .proxy import ProxyConfig, ProxyDataset, make_proxies, proxy_rng, seed_sequence


@dataclass(frozen=True, eq=False)
class PresmoothingFit:
    beta: np.ndarray
    cox: CoxFit
    quantile_map: QuantileMap
    proxies: ProxyDataset
    replicate_betas: np.ndarray
    audit: dict


def estimate_proposed(data, cfg: EstimatorConfig | None = None, seed=0,
                      qmap: QuantileMap | None = None) -> PresmoothingFit:
    """Fit ``beta`` from proxies generated through the estimated quantile map.

    With ``cfg.replicates > 1`` the coefficient is averaged over independent
    proxy draws; the returned proxies and Cox fit are those of the first draw.
    """
    cfg = cfg or EstimatorConfig()
    qmap = qmap or QuantileMap(data, cfg)
    pcfg = ProxyConfig(u_bar=cfg.u_bar, tau=cfg.tau, seed=seed)
    streams = seed_sequence(seed).spawn(cfg.replicates)
    betas, first = [], None
    dropped = 0
    for stream in streams:
        proxies = make_proxies(data, qmap, pcfg, rng=proxy_rng(stream), saturation=cfg.saturation,
                               cap=cfg.saturation_cap)
        fit = fit_cox(proxies, tol=cfg.cox_tol, max_iter=cfg.cox_max_iter)
        betas.append(fit.beta)
        dropped += proxies.dropped
        if first is None:
            first = (fit, proxies)
    betas = np.array(betas)
    fit, proxies = first
    audit = {
        "solver": qmap.mode,
        "order": None if qmap.order is None else
        {"z": list(qmap.order.z_order), "w": list(qmap.order.w_order)},
        "t_bar": qmap.t_bar,
        "u_bar": cfg.u_bar,
        "h_instrument": {int(k): float(h) for k, h in qmap.factory.h_group.items()},
        "h_cell": {f"{l},{k}": float(h) for (l, k), h in qmap.factory.h_cell.items()},
        "bandwidth_expansions": qmap.factory.expansions,
        "saturated_dropped": dropped,
        "seed": int(seed) if not isinstance(seed, np.random.SeedSequence) else str(seed.entropy),
    }
    return PresmoothingFit(betas.mean(axis=0), fit, qmap, proxies, betas, audit)


def estimate_naive(data, cfg: EstimatorConfig | None = None) -> CoxFit:
    cfg = cfg or EstimatorConfig()
    return naive_cox(data, tol=cfg.cox_tol, max_iter=cfg.cox_max_iter)
