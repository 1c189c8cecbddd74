"""Conditional (sub-)distribution estimation under right censoring.

The Beran product-limit estimator with Nadaraya-Watson weights estimates
``F(t | z, x, w)``; multiplying by the kernel estimate of ``P(Z=z | X=x, W=w)``
gives the joint sub-distribution ``F(t, z | x, w)``.  Optional time smoothing
convolves the step estimate with an integrated kernel.

Tie convention: within a cell observations are processed in nondecreasing
``y`` order with events before censorings at equal times, and the at-risk
weight of an observation is the weight of itself and everything after it.
With uniform weights this is exactly the Kaplan-Meier estimator, ties
included.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ZeroMass
from .kernels import KernelSpec, epanechnikov, eval_kernel, integrated_kernel

# slack used when comparing a CDF value against a probability level
LEVEL_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class StepCdf:
    """Right-continuous nondecreasing step function, 0 before the first jump."""

    jump_times: np.ndarray
    values: np.ndarray
    upper_limit: float

    def __post_init__(self):
        times = np.asarray(self.jump_times, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if times.shape != vals.shape:
            raise ValueError("jump_times and values differ in length")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("jump times must be strictly increasing")
        if vals.size > 1 and np.any(np.diff(vals) < -1e-12):
            raise ValueError("step CDF values must be nondecreasing")
        if vals.size and (vals[-1] > 1 + 1e-12 or vals[0] < -1e-12):
            raise ValueError("step CDF values must lie in [0, 1]")
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "upper_limit", float(self.upper_limit))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.values.size == 0:
            out = np.zeros_like(t)
        else:
            idx = np.searchsorted(self.jump_times, t, side="right") - 1
            out = np.where(idx >= 0, self.values[np.maximum(idx, 0)], 0.0)
        return out if out.ndim else float(out)

    @property
    def jump_sizes(self) -> np.ndarray:
        return np.diff(self.values, prepend=0.0)

    @property
    def total_mass(self) -> float:
        return float(self.values[-1]) if self.values.size else 0.0


@dataclass(frozen=True, eq=False)
class SmoothSubCdf:
    """``t -> scale * int H((t - s) / epsilon) dF(s)``; epsilon 0 means no smoothing."""

    base: StepCdf
    epsilon: float = 0.0
    kernel_tilde: KernelSpec = None
    scale: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not 0.0 <= self.scale <= 1.0 + 1e-12:
            raise ValueError("scale must be a probability")
        if self.kernel_tilde is None:
            object.__setattr__(self, "kernel_tilde", epanechnikov())

    @property
    def upper_limit(self) -> float:
        return self.base.upper_limit

    @property
    def monotone(self) -> bool:
        return self.epsilon == 0 or self.kernel_tilde.order == 2

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.epsilon == 0 or self.base.jump_times.size == 0:
            out = self.scale * np.asarray(self.base(t))
        else:
            arg = (t[..., None] - self.base.jump_times) / self.epsilon
            out = self.scale * (integrated_kernel(self.kernel_tilde, arg) @ self.base.jump_sizes)
        return out if np.ndim(out) else float(out)

    def density(self, t):
        """Time derivative; only defined for epsilon > 0."""
        if self.epsilon == 0:
            raise ValueError("a step function has no density")
        t = np.asarray(t, dtype=float)
        arg = (t[..., None] - self.base.jump_times) / self.epsilon
        out = self.scale * (eval_kernel(self.kernel_tilde, arg) @ self.base.jump_sizes) / self.epsilon
        return out if np.ndim(out) else float(out)


def _cell_order(y, delta):
    # ascending y, events before censorings at tied times
    return np.lexsort((1 - delta, y))


class BeranCell:
    """Observations of one ``(z, w)`` cell, presorted for batched Beran estimates."""

    def __init__(self, data, z, w):
        mask = (data.z == z) & (data.w == w)
        y = data.y[mask]
        delta = data.delta[mask]
        order = _cell_order(y, delta)
        self.times = y[order]
        self.events = delta[order].astype(bool)
        self.x = data.x[mask][order]
        self.size = self.times.size

    def kernel_weights(self, xq, h, kernel):
        """Unnormalized weights, shape ``(len(xq), size)``; ``h`` scalar or per query."""
        xq = np.atleast_1d(np.asarray(xq, dtype=float))
        h = np.broadcast_to(np.asarray(h, dtype=float), xq.shape)
        return eval_kernel(kernel, (xq[:, None] - self.x[None, :]) / h[:, None])

    def cdf_rows(self, weights):
        """Beran ``F~`` after each sorted observation, one row per weight row.

        Rows whose weights sum to zero come back as all-zero rows; callers
        decide whether that is an error.
        """
        weights = np.atleast_2d(weights)
        at_risk = np.cumsum(weights[:, ::-1], axis=1)[:, ::-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            hazard = np.where((at_risk > 0) & self.events[None, :], weights / at_risk, 0.0)
        survival = np.cumprod(1.0 - np.clip(hazard, 0.0, 1.0), axis=1)
        return 1.0 - survival

    def step_cdf(self, row, upper_limit) -> StepCdf:
        """Collapse one ``cdf_rows`` row to a StepCdf with strictly increasing jumps."""
        if self.size == 0:
            return StepCdf(np.empty(0), np.empty(0), upper_limit)
        # value at a tied time is the value after its last occurrence
        last = np.r_[self.times[1:] != self.times[:-1], True]
        times, vals = self.times[last], row[last]
        jump = np.diff(vals, prepend=0.0) > 0
        return StepCdf(times[jump], np.maximum.accumulate(vals[jump]), upper_limit)


def nw_weights(data, z, w, x, h, kernel: KernelSpec | None = None) -> np.ndarray:
    """Nadaraya-Watson weights over all ``n`` rows, zero outside the ``(z, w)`` cell."""
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    kernel = kernel or epanechnikov()
    k = eval_kernel(kernel, (x - data.x) / h) * ((data.z == z) & (data.w == w))
    total = k.sum()
    if not total > 0:
        raise ZeroMass(f"no observation of cell z={z} w={w} within h={h:g} of x={x:g}")
    return k / total


def beran_cdf(data, z, w, x, h, kernel: KernelSpec | None = None, upper_limit=None) -> StepCdf:
    kernel = kernel or epanechnikov()
    nw_weights(data, z, w, x, h, kernel)  # raises ZeroMass
    cell = BeranCell(data, z, w)
    row = cell.cdf_rows(cell.kernel_weights([x], h, kernel))[0]
    t_bar = data.max_event_time() if upper_limit is None else upper_limit
    return cell.step_cdf(row, t_bar)


def estimate_p(data, z, w, x, h, kernel: KernelSpec | None = None) -> float:
    kernel = kernel or epanechnikov()
    k = eval_kernel(kernel, (x - data.x) / h) * (data.w == w)
    total = k.sum()
    if not total > 0:
        raise ZeroMass(f"no observation with w={w} within h={h:g} of x={x:g}")
    return float(k[data.z == z].sum() / total)


def smooth_cdf(step: StepCdf, p_hat: float, epsilon: float = 0.0,
               kernel_tilde: KernelSpec | None = None) -> SmoothSubCdf:
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    return SmoothSubCdf(step, float(epsilon), kernel_tilde or epanechnikov(), float(p_hat))


def invert_subcdf(f: SmoothSubCdf, u: float):
    """``inf{t in [0, T] : f(t) >= u}``; returns ``(T, True)`` when ``u > f(T)``."""
    t, sat = invert_many(f, np.array([u], dtype=float))
    return float(t[0]), bool(sat[0])


def invert_many(f: SmoothSubCdf, levels, grid_size: int = 2048, bisections: int = 60):
    """Vectorized pseudo-inverse; returns ``(times, saturated)`` arrays.

    Levels ``<= 0`` map to 0.  Smoothed functions are scanned on a time grid
    for the first crossing, which is then refined by bisection.
    """
    levels = np.asarray(levels, dtype=float)
    t_bar = f.upper_limit
    out = np.zeros(levels.shape)
    sat = np.zeros(levels.shape, dtype=bool)
    active = levels > 0
    if not active.any():
        return out, sat
    target = levels[active] - LEVEL_SLACK
    if f.epsilon == 0:
        ok = f.base.jump_times <= t_bar
        times = f.base.jump_times[ok]
        vals = f.scale * f.base.values[ok]
        idx = np.searchsorted(vals, target, side="left")
        hit = idx < vals.size
        res = np.where(hit, times[np.minimum(idx, max(vals.size - 1, 0))] if vals.size else t_bar, t_bar)
    else:
        grid = np.linspace(0.0, t_bar, grid_size)
        vals = np.asarray(f(grid))
        above = vals[None, :] >= target[:, None]
        hit = above.any(axis=1)
        j = np.argmax(above, axis=1)
        hi = grid[j]
        lo = grid[np.maximum(j - 1, 0)]
        refine = hit & (j > 0)
        for _ in range(bisections):
            if not refine.any():
                break
            mid = 0.5 * (lo + hi)
            up = np.asarray(f(mid)) >= target
            hi = np.where(refine & up, mid, hi)
            lo = np.where(refine & ~up, mid, lo)
        res = np.where(hit, hi, t_bar)
    out[active] = res
    sat[active] = ~hit
    return out, sat


def write_cdf_csv(f, path, points=None):
    """Diagnostic dump of ``(t, value)`` pairs for plotting."""
    base = f.base if isinstance(f, SmoothSubCdf) else f
    if points is None:
        points = np.union1d([0.0, base.upper_limit], base.jump_times)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t", "value"])
        for t, v in zip(points, np.atleast_1d(f(points))):
            out.writerow([repr(float(t)), repr(float(v))])
