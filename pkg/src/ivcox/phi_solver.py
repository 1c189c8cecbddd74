"""Nonparametric estimation of the causal quantile function.

For a fixed covariate value ``x`` the estimated sub-distributions
``F(t, z_l | x, w_k)`` form an ``L x L`` bundle.  The quantile vector
``theta(u)`` solves ``sum_l F(theta_l, z_l | x, w_k) = u`` for every instrument
level ``k``.  When the levels can be relabelled so that the system is
triangular it is solved by successive pseudo-inversion; otherwise a
multi-start projected Gauss-Newton search minimizes ``||A(theta)||``.

Solutions are computed on an equispaced ``u`` grid over ``[0, u_bar]``,
projected onto nondecreasing sequences (pool adjacent violators) and
interpolated linearly in ``u``.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import isotonic_regression, linear_sum_assignment
from scipy.stats import qmc

from .beran import BeranCell, SmoothSubCdf, StepCdf, invert_many
from .config import EstimatorConfig
from .errors import ConfigError, DataError, NoConvergence, Saturated, ZeroMass
from .kernels import eval_kernel, select_bandwidth

_EMPTY_STEP = np.empty(0)
_BATCH = 256
_MAX_EXPANSIONS = 60


@dataclass(frozen=True, eq=False)
class CellCdfBundle:
    """``entries[l][k]`` estimates ``F(t, z_l | x, w_k)``."""

    entries: tuple
    u_bar: float
    t_bar: float
    x: float | None = None

    @property
    def levels(self) -> int:
        return len(self.entries)

    @property
    def smooth(self) -> bool:
        return any(e.epsilon > 0 for row in self.entries for e in row)

    def values(self, theta) -> np.ndarray:
        """``out[..., l, k] = F(theta[..., l], z_l | w_k)``."""
        theta = np.asarray(theta, dtype=float)
        L = self.levels
        out = np.empty(theta.shape + (L,))
        for l in range(L):
            for k in range(L):
                out[..., l, k] = self.entries[l][k](theta[..., l])
        return out

    def masses(self) -> np.ndarray:
        return self.values(np.full(self.levels, self.t_bar))

    def jump_bound(self) -> np.ndarray:
        """Largest jump of the sub-CDFs entering each equation ``k``."""
        L = self.levels
        bound = np.zeros(L)
        for k in range(L):
            for l in range(L):
                e = self.entries[l][k]
                if e.epsilon == 0 and e.base.values.size:
                    bound[k] = max(bound[k], e.scale * e.base.jump_sizes.max())
        return bound

    def jacobian(self, theta, fd_step=None) -> np.ndarray:
        """``J[k, l] = d A_k / d theta_l``; central differences for step functions."""
        theta = np.asarray(theta, dtype=float)
        L = self.levels
        J = np.empty((L, L))
        if self.smooth and fd_step is None:
            for l in range(L):
                for k in range(L):
                    e = self.entries[l][k]
                    J[k, l] = e.density(theta[l]) if e.epsilon > 0 else 0.0
            return J
        step = fd_step if fd_step is not None else self.t_bar / 100.0
        for l in range(L):
            lo = max(theta[l] - step, 0.0)
            hi = min(theta[l] + step, self.t_bar)
            if hi <= lo:
                J[:, l] = 0.0
                continue
            for k in range(L):
                e = self.entries[l][k]
                J[k, l] = (e(hi) - e(lo)) / (hi - lo)
        return J


def eval_A(theta, bundle: CellCdfBundle, u) -> np.ndarray:
    """``A(theta)(u)_k = sum_l F(theta_l, z_l | w_k) - u``."""
    vals = bundle.values(theta)
    return vals.sum(axis=-2) - np.asarray(u, dtype=float)[..., None]


# -- triangular structure -----------------------------------------------------

@dataclass(frozen=True)
class TriangularOrder:
    """Relabelling: position ``j`` pairs treatment ``z_order[j]`` with instrument ``w_order[j]``."""

    z_order: tuple
    w_order: tuple


def _conditional_table(data) -> np.ndarray:
    table = data.crosstab().astype(float)
    col = table.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(col > 0, table / col, 0.0)


def detect_triangular(data, tol: float = 0.0) -> TriangularOrder | None:
    """Search relabellings making ``P(Z = z_(l) | W = w_(k)) <= tol`` for all ``l > k``.

    Diagonal pairs must carry probability above ``tol`` so every pseudo-inverse
    in the recursion acts on a non-degenerate function.  Exhaustive
    backtracking, identity first; practical for up to six levels.
    """
    prob = _conditional_table(data)
    L = prob.shape[0]
    if L > 6:
        raise ConfigError("triangular detection is limited to six levels")
    for w_order in permutations(range(L)):
        z_order = _match_z(prob, w_order, tol, [], set())
        if z_order is not None:
            return TriangularOrder(tuple(int(v) for v in z_order), tuple(int(v) for v in w_order))
    return None


def _match_z(prob, w_order, tol, chosen, used):
    pos = len(chosen)
    if pos == len(w_order):
        return list(chosen)
    for z in range(prob.shape[0]):
        if z in used or prob[z, w_order[pos]] <= tol:
            continue
        # z sits after every earlier instrument position, so it must be absent there
        if any(prob[z, w_order[a]] > tol for a in range(pos)):
            continue
        found = _match_z(prob, w_order, tol, chosen + [z], used | {z})
        if found is not None:
            return found
    return None


def solve_triangular_grid(bundle: CellCdfBundle, u_grid, order: TriangularOrder):
    """Closed-form recursion on a vector of ``u``; returns ``(theta, saturated)``."""
    u_grid = np.asarray(u_grid, dtype=float)
    L = bundle.levels
    theta = np.zeros(u_grid.shape + (L,))
    sat = np.zeros(u_grid.shape + (L,), dtype=bool)
    upstream = np.zeros(u_grid.shape, dtype=bool)
    for pos in range(L):
        l, k = order.z_order[pos], order.w_order[pos]
        remaining = u_grid.copy()
        for j in range(pos):
            lj = order.z_order[j]
            remaining -= bundle.entries[lj][k](theta[..., lj])
        t, s = invert_many(bundle.entries[l][k], remaining)
        theta[..., l] = t
        upstream = upstream | s
        sat[..., l] = upstream
    return theta, sat


def solve_triangular(bundle: CellCdfBundle, u: float, order: TriangularOrder) -> np.ndarray:
    theta, sat = solve_triangular_grid(bundle, np.array([u]), order)
    if sat[0].any():
        level = next(l for l in order.z_order if sat[0, l])
        raise Saturated(level, f"u={u:g} is beyond the estimable range at level {level}")
    return theta[0]


# -- general solver -----------------------------------------------------------

@dataclass(frozen=True)
class GeneralSolution:
    theta: np.ndarray
    residual: float
    residual_inf: float
    rank_deficient: bool
    min_singular_value: float
    iterations: int
    converged: bool
    polished: bool


def _gauss_newton(bundle, u, theta0, max_iter, tol, fd_step):
    t_bar = bundle.t_bar
    theta = np.clip(np.asarray(theta0, dtype=float), 0.0, t_bar)
    r = eval_A(theta, bundle, u)
    f = 0.5 * r @ r
    lam = 1e-3
    step_fd = fd_step
    min_fd = t_bar * 1e-7
    for it in range(1, max_iter + 1):
        if np.max(np.abs(r)) <= tol:
            return theta, r, it, True
        J = bundle.jacobian(theta, step_fd)
        g = J.T @ r
        H = J.T @ J
        scale = max(np.trace(H) / len(theta), 1e-12)
        improved = False
        for _ in range(12):
            try:
                delta = -np.linalg.solve(H + lam * scale * np.eye(len(theta)), g)
            except np.linalg.LinAlgError:
                lam *= 4.0
                continue
            cand = np.clip(theta + delta, 0.0, t_bar)
            rc = eval_A(cand, bundle, u)
            fc = 0.5 * rc @ rc
            if fc < f:
                theta, r, f = cand, rc, fc
                lam = max(lam / 3.0, 1e-12)
                improved = True
                break
            lam *= 4.0
        if not improved:
            if step_fd is None and not bundle.smooth:
                step_fd = t_bar / 100.0
            if step_fd is not None and step_fd > min_fd:
                step_fd *= 0.5
                lam = 1e-3
                continue
            return theta, r, it, True
    return theta, r, max_iter, False


def _pseudo_inverse_sweeps(bundle, u, theta, max_sweeps):
    """Nonlinear Gauss-Seidel where equation ``k`` updates its matched level by pseudo-inversion."""
    L = bundle.levels
    masses = bundle.masses()
    with np.errstate(divide="ignore"):
        cost = -np.log(masses.T)  # rows: equations k, cols: levels l
    cost = np.where(np.isfinite(cost), cost, 1e6)
    eq, lev = linear_sum_assignment(cost)
    if np.any(masses[lev, eq] <= 0):
        return None
    theta = np.array(theta, dtype=float)
    for _ in range(max_sweeps):
        previous = theta.copy()
        for k, l in zip(eq, lev):
            others = sum(bundle.entries[j][k](theta[j]) for j in range(L) if j != l)
            t, sat = invert_many(bundle.entries[l][k], np.array([u - others]))
            if sat[0]:
                return None
            theta[l] = t[0]
        if np.array_equal(theta, previous):
            return theta
    return None


def solve_general(bundle: CellCdfBundle, u: float, restarts: int = 5, init=None, seed: int = 0,
                  max_iter: int = 100, tol: float = 1e-10, fd_step=None) -> GeneralSolution:
    """Minimize ``||A(theta)||`` over ``[0, T]^L`` from several starting points.

    Starts are the optional warm start plus a Latin hypercube sample.  The best
    local solution is refined by pseudo-inverse sweeps; on step functions this
    lands on the left end of the flat region, and on triangular systems it
    reproduces the closed-form recursion.
    """
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    L = bundle.levels
    if u <= 0:
        zero = np.zeros(L)
        return GeneralSolution(zero, 0.0, 0.0, False, np.nan, 0, True, False)
    starts = []
    if init is not None:
        starts.append(np.asarray(init, dtype=float))
    n_random = restarts - len(starts)
    if n_random > 0:
        sampler = qmc.LatinHypercube(d=L, seed=seed)
        starts.extend(sampler.random(n_random) * bundle.t_bar)
    best = None
    any_converged = False
    total_iter = 0
    for start in starts:
        theta, r, it, ok = _gauss_newton(bundle, u, start, max_iter, tol, fd_step)
        total_iter += it
        any_converged |= ok
        norm = float(np.linalg.norm(r))
        if best is None or norm < best[1]:
            best = (theta, norm, r)
    theta, norm, r = best
    polished = False
    refined = _pseudo_inverse_sweeps(bundle, u, theta, max_sweeps=4 * L + 4)
    if refined is not None:
        rr = eval_A(refined, bundle, u)
        allowance = max(np.max(np.abs(r)), float(bundle.jump_bound().max()), tol)
        if np.max(np.abs(rr)) <= allowance + 1e-12:
            theta, r, norm, polished = refined, rr, float(np.linalg.norm(rr)), True
    if not any_converged and not polished:
        raise NoConvergence(f"no restart converged within {max_iter} iterations at u={u:g}")
    J = bundle.jacobian(theta, None if bundle.smooth else bundle.t_bar / 100.0)
    sv = np.linalg.svd(J, compute_uv=False)
    smin = float(sv.min()) if sv.size else 0.0
    rank_def = bool(sv.size == 0 or sv.max() == 0 or smin <= 1e-8 * sv.max())
    return GeneralSolution(theta, norm, float(np.max(np.abs(r))), rank_def, smin, total_iter,
                           True, polished)


# -- bundles for many covariate values -----------------------------------------

class BundleFactory:
    """Builds ``CellCdfBundle`` objects for batches of covariate values."""

    def __init__(self, data, cfg: EstimatorConfig):
        self.data = data
        self.cfg = cfg
        self.kernel = cfg.kernel
        L = data.levels
        self.levels = L
        self.t_bar = float(cfg.t_bar) if cfg.t_bar is not None else data.max_event_time()
        self.cells = {(l, k): BeranCell(data, l, k) for l in range(L) for k in range(L)}
        self.group_x, self.group_z = {}, {}
        self.h_group, self.h_cell = {}, {}
        for k in range(L):
            mask = data.w == k
            if not mask.any():
                raise DataError(f"no observations with instrument level {k}")
            self.group_x[k] = data.x[mask]
            self.group_z[k] = data.z[mask]
            self.h_group[k] = select_bandwidth(data, (None, k), plan=cfg.bandwidth, kernel=self.kernel)
            for l in range(L):
                size = self.cells[(l, k)].size
                if size >= 2:
                    self.h_cell[(l, k)] = select_bandwidth(data, (l, k), plan=cfg.bandwidth,
                                                           kernel=self.kernel)
                elif size == 1:
                    self.h_cell[(l, k)] = self.h_group[k]
        self.expansions = 0

    def bandwidths(self, cell, xs) -> np.ndarray:
        base = self.h_group[cell[1]] if cell[0] is None else self.h_cell[cell]
        if not self.cfg.bandwidth.per_query:
            return np.full(len(xs), base)
        return np.array([select_bandwidth(self.data, cell, x=x, plan=self.cfg.bandwidth,
                                          kernel=self.kernel) for x in xs])

    def _weights(self, xs, pts, h, need):
        """Kernel weights with per-row bandwidth widening where a needed row is empty."""
        K = eval_kernel(self.kernel, (xs[:, None] - pts[None, :]) / h[:, None])
        empty = need & ~(K.sum(axis=1) > 0)
        tries = 0
        while empty.any():
            tries += 1
            if tries > _MAX_EXPANSIONS:
                raise ZeroMass("no kernel mass even after widening the bandwidth")
            self.expansions += int(empty.sum())
            h = np.where(empty, h * 1.5, h)
            K[empty] = eval_kernel(self.kernel, (xs[empty, None] - pts[None, :]) / h[empty, None])
            empty = need & ~(K.sum(axis=1) > 0)
        return K

    def p_hat(self, xs) -> np.ndarray:
        """``out[i, l, k]`` estimates ``P(Z = z_l | X = xs[i], W = w_k)``."""
        xs = np.asarray(xs, dtype=float)
        L = self.levels
        out = np.zeros((xs.size, L, L))
        for k in range(L):
            K = self._weights(xs, self.group_x[k], self.bandwidths((None, k), xs),
                              np.ones(xs.size, dtype=bool))
            total = K.sum(axis=1)
            for l in range(L):
                out[:, l, k] = K[:, self.group_z[k] == l].sum(axis=1) / total
        return out

    def bundles(self, xs) -> list:
        xs = np.asarray(xs, dtype=float)
        result = []
        for start in range(0, xs.size, _BATCH):
            result.extend(self._batch(xs[start:start + _BATCH]))
        return result

    def _batch(self, xs):
        L = self.levels
        cfg = self.cfg
        kt = cfg.smoothing_kernel
        p = self.p_hat(xs)
        rows = {}
        for (l, k), cell in self.cells.items():
            if cell.size == 0:
                continue
            need = p[:, l, k] > 0
            if not need.any():
                continue
            K = self._weights(xs, cell.x, self.bandwidths((l, k), xs), need)
            rows[(l, k)] = cell.cdf_rows(K)
        empty = StepCdf(_EMPTY_STEP, _EMPTY_STEP, self.t_bar)
        out = []
        for i, x in enumerate(xs):
            entries = []
            for l in range(L):
                row = []
                for k in range(L):
                    scale = float(p[i, l, k])
                    if scale > 0 and (l, k) in rows:
                        base = self.cells[(l, k)].step_cdf(rows[(l, k)][i], self.t_bar)
                    else:
                        base, scale = empty, 0.0
                    row.append(SmoothSubCdf(base, cfg.epsilon, kt, min(scale, 1.0)))
                entries.append(tuple(row))
            out.append(CellCdfBundle(tuple(entries), cfg.u_bar, self.t_bar, float(x)))
        return out


# -- quantile map -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _Solution:
    theta: np.ndarray        # (G, L) after monotone projection
    raw_theta: np.ndarray    # (G, L) as solved
    saturated: np.ndarray    # (G, L)
    residual: np.ndarray     # (G,) sup-norm of A at raw_theta
    rank_deficient: np.ndarray  # (G,)


def _project_monotone(theta, sat):
    out = theta.copy()
    for l in range(theta.shape[1]):
        ok = ~sat[:, l]
        m = int(np.argmin(ok)) if not ok.all() else ok.size
        seg = out[:m, l]
        if m > 1 and np.any(np.diff(seg) < 0):
            out[:m, l] = isotonic_regression(seg).x
    return out


class QuantileMap:
    """Estimated ``phi(z, x, u)`` on ``[0, u_bar]``, solved lazily per covariate value."""

    def __init__(self, data, cfg: EstimatorConfig | None = None, order: TriangularOrder | None = None):
        cfg = cfg or EstimatorConfig()
        self.cfg = cfg
        self.factory = BundleFactory(data, cfg)
        self.u_grid = np.linspace(0.0, cfg.u_bar, cfg.u_grid_size)
        if order is None and cfg.solver in ("auto", "triangular"):
            order = detect_triangular(data, cfg.triangular_tol)
            if order is None and cfg.solver == "triangular":
                raise ConfigError("no relabelling makes the system triangular")
        self.order = order if cfg.solver != "general" else None
        self.mode = "triangular" if self.order is not None else "general"
        self._solutions = {}
        self.x_points = None
        if cfg.x_grid:
            self.x_points = np.linspace(data.x.min(), data.x.max(), cfg.x_grid)
            self.solve_at(self.x_points)

    @property
    def t_bar(self) -> float:
        return self.factory.t_bar

    @property
    def u_bar(self) -> float:
        return self.cfg.u_bar

    def solve_at(self, xs):
        xs = np.unique(np.asarray(xs, dtype=float))
        todo = np.array([x for x in xs if float(x) not in self._solutions])
        if todo.size == 0:
            return
        for bundle in self.factory.bundles(todo):
            self._solutions[bundle.x] = self._solve_bundle(bundle)

    def bundle(self, x) -> CellCdfBundle:
        return self.factory.bundles([x])[0]

    def _solve_bundle(self, bundle):
        G, L = self.u_grid.size, bundle.levels
        rank_def = np.zeros(G, dtype=bool)
        if self.order is not None:
            theta, sat = solve_triangular_grid(bundle, self.u_grid, self.order)
        else:
            theta = np.zeros((G, L))
            sat = np.zeros((G, L), dtype=bool)
            tol = max(self.cfg.residual_tol, float(bundle.jump_bound().max()))
            prev = None
            for g, u in enumerate(self.u_grid):
                restarts = self.cfg.restarts if prev is None else 1
                sol = solve_general(bundle, u, restarts=restarts, init=prev, seed=g)
                if prev is not None and sol.residual_inf > tol:
                    sol = solve_general(bundle, u, restarts=self.cfg.restarts, init=prev, seed=g)
                theta[g] = sol.theta
                rank_def[g] = sol.rank_deficient
                sat[g] = sol.residual_inf > tol
                prev = sol.theta
        sat = np.logical_or.accumulate(sat, axis=0)
        theta = np.where(sat, self.t_bar, theta)
        residual = np.max(np.abs(eval_A(theta, bundle, self.u_grid)), axis=1)
        return _Solution(_project_monotone(theta, sat), theta, sat, residual, rank_def)

    def solution(self, x) -> _Solution:
        x = float(x)
        if x not in self._solutions:
            self.solve_at([x])
        return self._solutions[x]

    def _grid_values(self, z, xs, u):
        """Interpolate in ``u`` for covariate values that have solutions."""
        z = np.asarray(z, dtype=np.int64)
        xs = np.asarray(xs, dtype=float)
        u = np.asarray(u, dtype=float)
        G = self.u_grid.size
        pos = u / self.cfg.u_bar * (G - 1)
        j = np.clip(np.floor(pos).astype(np.int64), 0, G - 2)
        a = np.clip(pos - j, 0.0, 1.0)
        vals = np.empty(u.shape)
        sat = np.empty(u.shape, dtype=bool)
        for x in np.unique(xs):
            sol = self._solutions[float(x)]
            m = xs == x
            th, st = sol.theta[:, z[m]], sol.saturated[:, z[m]]
            cols = np.arange(m.sum())
            lo, hi = j[m], j[m] + 1
            vals[m] = (1 - a[m]) * th[lo, cols] + a[m] * th[hi, cols]
            sat[m] = (st[lo, cols] & (a[m] < 1)) | (st[hi, cols] & (a[m] > 0))
        return vals, sat

    def lookup(self, z, x, u):
        """Vectorized ``phi_hat``; returns ``(values, saturated)``."""
        z = np.atleast_1d(np.asarray(z, dtype=np.int64))
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        z, x, u = np.broadcast_arrays(z, x, u)
        if np.any(u < 0) or np.any(u > self.cfg.u_bar + 1e-12):
            raise ValueError(f"u must lie in [0, {self.cfg.u_bar}]")
        u = np.minimum(u, self.cfg.u_bar)
        if self.x_points is None:
            self.solve_at(x)
            return self._grid_values(z, x, u)
        xp = self.x_points
        xc = np.clip(x, xp[0], xp[-1])
        j = np.clip(np.searchsorted(xp, xc, side="right") - 1, 0, xp.size - 2)
        b = (xc - xp[j]) / (xp[j + 1] - xp[j])
        v0, s0 = self._grid_values(z, xp[j], u)
        v1, s1 = self._grid_values(z, xp[j + 1], u)
        return (1 - b) * v0 + b * v1, (s0 & (b < 1)) | (s1 & (b > 0))

    def table(self, xs=None):
        """Rows ``(x, u, level, phi, residual)`` for the diagnostic dump."""
        if xs is not None:
            self.solve_at(xs)
        rows = []
        for x in sorted(self._solutions):
            sol = self._solutions[x]
            for g, u in enumerate(self.u_grid):
                for l in range(sol.theta.shape[1]):
                    rows.append((x, float(u), l, float(sol.theta[g, l]), float(sol.residual[g])))
        return rows


def phi_hat(qmap: QuantileMap, z: int, x: float, u: float) -> float:
    vals, sat = qmap.lookup([z], [x], [u])
    if sat[0]:
        raise Saturated(z, f"phi_hat saturated at z={z}, x={x:g}, u={u:g}")
    return float(vals[0])
