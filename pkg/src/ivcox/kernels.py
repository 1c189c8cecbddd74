"""Compactly supported polynomial kernels on [-1, 1] and bandwidth selection.

Every kernel is stored as a polynomial on its support, which makes the
integrated kernel ``H`` and all moments exact; moments are still checked by
adaptive quadrature when a kernel is built.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate

from .errors import ConfigError, EmptyCell, InsufficientData

MOMENT_TOL = 1e-6

EPANECHNIKOV = "epanechnikov"
ORDER4 = "order4"
POLYNOMIAL = "polynomial"


@dataclass(frozen=True)
class KernelSpec:
    """A kernel ``K(u) = p(u) * I(|u| <= 1)`` with ``p`` a polynomial.

    ``coefficients`` are in increasing powers of ``u``.  ``order`` is the
    kernel order: the first ``j >= 1`` whose moment does not vanish.
    """

    family: str
    order: int
    coefficients: tuple
    support: tuple = (-1.0, 1.0)
    _poly: Polynomial = field(init=False, repr=False, compare=False)
    _antideriv: Polynomial = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        poly = Polynomial(self.coefficients)
        anti = poly.integ(lbnd=-1.0)
        object.__setattr__(self, "_poly", poly)
        object.__setattr__(self, "_antideriv", anti)

    def __call__(self, u):
        return eval_kernel(self, u)

    def moment(self, j: int) -> float:
        """Exact ``int u^j K(u) du`` from the polynomial representation."""
        m = (Polynomial([0.0] * j + [1.0]) * self._poly).integ(lbnd=-1.0)
        return float(m(1.0))

    @property
    def roughness(self) -> float:
        """``int K^2``."""
        return float((self._poly ** 2).integ(lbnd=-1.0)(1.0))


def eval_kernel(spec: KernelSpec, u):
    u = np.asarray(u, dtype=float)
    out = np.where(np.abs(u) <= 1.0, spec._poly(np.clip(u, -1.0, 1.0)), 0.0)
    return out if out.ndim else float(out)


def integrated_kernel(spec: KernelSpec, t):
    """``H(t) = int_{-inf}^t K(u) du``; exactly 0 below -1 and 1 above 1."""
    t = np.asarray(t, dtype=float)
    inner = spec._antideriv(np.clip(t, -1.0, 1.0))
    out = np.where(t <= -1.0, 0.0, np.where(t >= 1.0, 1.0, inner))
    return out if out.ndim else float(out)


def kernel_derivative(spec: KernelSpec, u):
    u = np.asarray(u, dtype=float)
    d = spec._poly.deriv()
    out = np.where(np.abs(u) < 1.0, d(np.clip(u, -1.0, 1.0)), 0.0)
    return out if out.ndim else float(out)


def _quad_moment(poly: Polynomial, j: int) -> float:
    val, _ = integrate.quad(lambda s: s ** j * poly(s), -1.0, 1.0, epsabs=1e-13, epsrel=1e-13)
    return val


def polynomial_kernel(coefficients, family: str = POLYNOMIAL, max_order: int = 12) -> KernelSpec:
    """Build and validate a kernel from polynomial coefficients on [-1, 1].

    The order is detected from the quadrature moments.  Raises ConfigError
    if the kernel does not integrate to one.
    """
    coefficients = tuple(float(c) for c in coefficients)
    poly = Polynomial(coefficients)
    mass = _quad_moment(poly, 0)
    if abs(mass - 1.0) > MOMENT_TOL:
        raise ConfigError(f"kernel integrates to {mass:.10g}, not 1")
    order = None
    for j in range(1, max_order + 1):
        if abs(_quad_moment(poly, j)) > MOMENT_TOL:
            order = j
            break
    if order is None:
        raise ConfigError(f"kernel has no non-vanishing moment up to {max_order}")
    return KernelSpec(family=family, order=order, coefficients=coefficients)


def epanechnikov() -> KernelSpec:
    return polynomial_kernel((0.75, 0.0, -0.75), family=EPANECHNIKOV)


def build_constructed_kernel() -> KernelSpec:
    """Order-4 kernel ``(3/2) Kb(x) + (1/2) x Kb'(x)`` with
    ``Kb(x) = (693/512) (1 - x^2)^5`` on [-1, 1].
    """
    base = Polynomial([1.0, 0.0, -1.0]) ** 5 * (693.0 / 512.0)
    x = Polynomial([0.0, 1.0])
    poly = 1.5 * base + 0.5 * x * base.deriv()
    spec = polynomial_kernel(poly.coef, family=ORDER4)
    if spec.order != 4:
        raise ConfigError(f"constructed kernel has order {spec.order}, expected 4")
    return spec


def make_kernel(family: str = EPANECHNIKOV, order: int | None = None, coefficients=None) -> KernelSpec:
    family = family.lower()
    if family == EPANECHNIKOV:
        spec = epanechnikov()
    elif family in (ORDER4, "constructedorder4", "constructed"):
        spec = build_constructed_kernel()
    elif family == POLYNOMIAL:
        if coefficients is None:
            raise ConfigError("polynomial kernel needs coefficients")
        spec = polynomial_kernel(coefficients)
    else:
        raise ConfigError(f"unknown kernel family {family!r}")
    if order is not None and int(order) != spec.order:
        raise ConfigError(f"kernel {family} has order {spec.order}, config asks for {order}")
    return spec


# -- bandwidth ----------------------------------------------------------------

RULE_OF_THUMB = "rule-of-thumb"
PLUG_IN = "plug-in"
FIXED = "fixed"


@dataclass(frozen=True)
class BandwidthPlan:
    """How to choose the covariate bandwidth ``h``.

    ``overrides`` maps a ``(z_level, w_level)`` cell to a fixed value and wins
    over ``method``.  With ``per_query`` the cell bandwidth is modulated by the
    local pilot density (Abramson square-root law), giving an ``h(x)``.
    """

    method: str = RULE_OF_THUMB
    value: float | None = None
    overrides: dict = field(default_factory=dict)
    per_query: bool = False

    def __post_init__(self):
        if self.method not in (RULE_OF_THUMB, PLUG_IN, FIXED):
            raise ConfigError(f"unknown bandwidth method {self.method!r}")
        if self.method == FIXED and (self.value is None or not self.value > 0):
            raise ConfigError("fixed bandwidth needs a positive value")


def rule_of_thumb(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise InsufficientData(f"bandwidth needs at least 2 observations, got {x.size}")
    sigma = float(np.std(x, ddof=1))
    return 1.06 * sigma * x.size ** (-0.2)


def _gauss_d4(s):
    return (s ** 4 - 6 * s ** 2 + 3) * np.exp(-0.5 * s ** 2) / np.sqrt(2 * np.pi)


def plug_in(x, kernel: KernelSpec) -> float:
    """One-stage direct plug-in for the AMISE-optimal density bandwidth.

    The curvature functional ``psi_4 = int f'' ^2`` is estimated with a Gaussian
    pilot whose bandwidth comes from the normal reference for ``psi_6``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise InsufficientData(f"plug-in bandwidth needs at least 2 observations, got {n}")
    if kernel.order != 2:
        raise ConfigError("plug-in bandwidth is only defined for second-order kernels")
    sigma = float(np.std(x, ddof=1))
    if sigma == 0.0:
        return 0.0
    psi6 = -15.0 / (16.0 * np.sqrt(np.pi) * sigma ** 7)
    g = (-2.0 * _gauss_d4(0.0) / (psi6 * n)) ** (1.0 / 7.0)
    diffs = (x[:, None] - x[None, :]) / g
    psi4 = float(_gauss_d4(diffs).sum()) / (n ** 2 * g ** 5)
    if not psi4 > 0:
        return rule_of_thumb(x)
    mu2 = kernel.moment(2)
    return (kernel.roughness / (mu2 ** 2 * psi4 * n)) ** 0.2


def _cell_mask(data, cell):
    z, w = cell
    mask = np.ones(data.n, dtype=bool)
    if z is not None:
        mask &= data.z == z
    if w is not None:
        mask &= data.w == w
    return mask


def select_bandwidth(data, cell, x=None, plan: BandwidthPlan | None = None,
                     kernel: KernelSpec | None = None) -> float:
    """Bandwidth for the ``(z, w)`` cell; ``z=None`` means the whole ``W=w`` group.

    ``x`` only matters for ``plan.per_query``.
    """
    plan = plan or BandwidthPlan()
    kernel = kernel or epanechnikov()
    if cell in plan.overrides:
        return float(plan.overrides[cell])
    if plan.method == FIXED:
        return float(plan.value)
    xs = data.x[_cell_mask(data, cell)]
    if xs.size == 0:
        raise EmptyCell(f"no observations in cell z={cell[0]} w={cell[1]}")
    if xs.size < 2:
        raise InsufficientData(f"cell z={cell[0]} w={cell[1]} has a single observation")
    h = plug_in(xs, kernel) if plan.method == PLUG_IN else rule_of_thumb(xs)
    if h == 0.0:
        # constant covariate in the cell: any positive window holds every point
        return 1.0
    if plan.per_query and x is not None:
        h *= _abramson_factor(xs, float(x), h, kernel)
    return h


def _abramson_factor(xs, x, h, kernel):
    def dens(pts):
        return eval_kernel(kernel, (np.asarray(pts)[:, None] - xs[None, :]) / h).mean(axis=1) / h

    pilot = dens(xs)
    pilot = pilot[pilot > 0]
    geo = np.exp(np.mean(np.log(pilot)))
    fx = float(dens(np.array([x]))[0])
    if fx <= 0:
        return 1.0
    return float(np.sqrt(geo / fx))


__all__ = [
    "KernelSpec", "BandwidthPlan", "eval_kernel", "integrated_kernel", "kernel_derivative",
    "epanechnikov", "build_constructed_kernel", "polynomial_kernel", "make_kernel",
    "select_bandwidth", "rule_of_thumb", "plug_in",
]
