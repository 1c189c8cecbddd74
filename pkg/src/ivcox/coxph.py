"""Cox partial likelihood with Breslow ties, fitted by Newton-Raphson."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Collinear, NoConvergence, NoEvents


@dataclass(frozen=True, eq=False)
class CoxFit:
    beta: np.ndarray
    score_norm: float
    observed_information: np.ndarray
    iterations: int
    converged: bool
    n_events: int
    loglik: float


def _arrays(data):
    """Accept a ProxyDataset, a Dataset (raw triple), or a ``(y, delta, v)`` tuple."""
    if isinstance(data, tuple):
        y, delta, v = data
    elif hasattr(data, "v"):
        y, delta, v = data.y, data.delta, data.v
    else:
        y, delta, v = data.y, data.delta, data.design_matrix()
    y = np.asarray(y, dtype=float)
    delta = np.asarray(delta).astype(bool)
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    return y, delta, v


class _RiskSets:
    """Sorted layout so every risk-set sum is a prefix sum."""

    def __init__(self, y, delta, v):
        if not delta.any():
            raise NoEvents("no uncensored observations")
        order = np.argsort(-y, kind="stable")
        self.v = v[order]
        self.events = delta[order]
        neg = -y[order]
        # index of the last row whose time is >= this row's time
        self.end = np.searchsorted(neg, neg, side="right") - 1

    def terms(self, beta, second=True):
        eta = self.v @ beta
        shift = eta.max()
        r = np.exp(eta - shift)
        s0 = np.cumsum(r)[self.end]
        s1 = np.cumsum(r[:, None] * self.v, axis=0)[self.end]
        ev = self.events
        loglik = float(np.sum(eta[ev] - shift - np.log(s0[ev])))
        mean = s1[ev] / s0[ev, None]
        score = (self.v[ev] - mean).sum(axis=0)
        if not second:
            return loglik, score, None
        vv = self.v[:, :, None] * self.v[:, None, :]
        s2 = np.cumsum(r[:, None, None] * vv, axis=0)[self.end]
        info = (s2[ev] / s0[ev, None, None]).sum(axis=0) - mean.T @ mean
        return loglik, score, 0.5 * (info + info.T)


def log_partial_likelihood(data, beta) -> float:
    y, delta, v = _arrays(data)
    return _RiskSets(y, delta, v).terms(np.asarray(beta, dtype=float), second=False)[0]


def score(data, beta) -> np.ndarray:
    """Gradient of the log partial likelihood; zero at the estimate."""
    y, delta, v = _arrays(data)
    return _RiskSets(y, delta, v).terms(np.asarray(beta, dtype=float), second=False)[1]


def information(data, beta) -> np.ndarray:
    y, delta, v = _arrays(data)
    return _RiskSets(y, delta, v).terms(np.asarray(beta, dtype=float))[2]


def _check_rank(info):
    eig = np.linalg.eigvalsh(info)
    top = max(float(np.abs(eig).max()), 1e-300)
    if eig.min() <= 1e-10 * top or top <= 1e-12:
        raise Collinear("observed information is singular; the design is collinear")
    return eig


def fit_cox(data, init=None, tol: float = 1e-8, max_iter: int = 100) -> CoxFit:
    y, delta, v = _arrays(data)
    risk = _RiskSets(y, delta, v)
    d = v.shape[1]
    beta = np.zeros(d) if init is None else np.asarray(init, dtype=float).copy()
    loglik, grad, info = risk.terms(beta)
    _check_rank(info)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) <= tol:
            return CoxFit(beta, float(np.max(np.abs(grad))), info, it - 1, True, int(delta.sum()), loglik)
        try:
            direction = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise Collinear("observed information is singular") from None
        step = 1.0
        for _ in range(50):
            cand = beta + step * direction
            ll_c, g_c, i_c = risk.terms(cand)
            if np.isfinite(ll_c) and ll_c >= loglik - 1e-12 * abs(loglik):
                break
            step *= 0.5
        else:
            raise NoConvergence("step halving failed to increase the partial likelihood")
        if np.linalg.eigvalsh(i_c).min() < -1e-8 * max(1.0, np.abs(i_c).max()):
            raise NoConvergence("observed information lost positive semi-definiteness")
        change = abs(ll_c - loglik) / max(abs(loglik), 1e-300)
        beta, loglik, grad, info = cand, ll_c, g_c, i_c
        if change <= 1e-12 and np.max(np.abs(grad)) <= tol:
            break
    norm = float(np.max(np.abs(grad)))
    converged = norm <= tol
    if not converged:
        raise NoConvergence(f"Newton-Raphson stopped with score norm {norm:.3g}")
    return CoxFit(beta, norm, info, it, converged, int(delta.sum()), loglik)


def naive_cox(data, init=None, tol: float = 1e-8, max_iter: int = 100) -> CoxFit:
    """Partial likelihood on the raw ``(Y, delta, V)`` triple, ignoring endogeneity."""
    return fit_cox((data.y, data.delta, data.design_matrix()), init=init, tol=tol, max_iter=max_iter)
