"""Estimator settings and the flat key-value run configuration."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .kernels import BandwidthPlan, KernelSpec, make_kernel

SOLVER_MODES = ("auto", "triangular", "general")
SATURATION_POLICIES = ("drop", "error", "clamp")


@dataclass(frozen=True)
class EstimatorConfig:
    """Everything the three-step estimator needs besides the data."""

    kernel: KernelSpec = field(default_factory=make_kernel)
    bandwidth: BandwidthPlan = field(default_factory=BandwidthPlan)
    u_bar: float = 0.9
    t_bar: float | None = None
    epsilon: float = 0.0
    kernel_tilde: KernelSpec | None = None
    u_grid_size: int = 101
    x_grid: int | None = None
    solver: str = "auto"
    triangular_tol: float = 0.0
    restarts: int = 5
    residual_tol: float = 1e-8
    tau: float = 0.0
    saturation: str = "drop"
    saturation_cap: float = 0.05
    replicates: int = 1
    cox_tol: float = 1e-8
    cox_max_iter: int = 100

    def __post_init__(self):
        if not 0.0 < self.u_bar < 1.0:
            raise ConfigError(f"u_bar must lie in (0, 1), got {self.u_bar}")
        if self.t_bar is not None and not self.t_bar > 0:
            raise ConfigError("t_bar must be positive")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if not 0.0 <= self.tau <= self.u_bar:
            raise ConfigError("tau must lie in [0, u_bar]")
        if self.u_grid_size < 2:
            raise ConfigError("u_grid_size must be at least 2")
        if self.x_grid is not None and self.x_grid < 2:
            raise ConfigError("x_grid must be at least 2 when given")
        if self.solver not in SOLVER_MODES:
            raise ConfigError(f"solver must be one of {SOLVER_MODES}")
        if self.saturation not in SATURATION_POLICIES:
            raise ConfigError(f"saturation policy must be one of {SATURATION_POLICIES}")
        if not 0.0 <= self.saturation_cap <= 1.0:
            raise ConfigError("saturation_cap must be a fraction")
        if self.restarts < 1:
            raise ConfigError("restarts must be at least 1")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.triangular_tol < 0:
            raise ConfigError("triangular tolerance must be non-negative")

    @property
    def smoothing_kernel(self) -> KernelSpec:
        return self.kernel_tilde or self.kernel

    def evolve(self, **changes) -> "EstimatorConfig":
        return replace(self, **changes)


# -- run configuration --------------------------------------------------------

COMMANDS = ("estimate", "simulate", "bootstrap")

# flat key -> (RunConfig attribute, parser)
_KEYS = {
    "command": ("command", str),
    "input": ("input", str),
    "output": ("output", str),
    "columns.y": ("col_y", str),
    "columns.delta": ("col_delta", str),
    "columns.z": ("col_z", str),
    "columns.z_dummies": ("col_z_dummies", str),
    "columns.x": ("col_x", str),
    "columns.w": ("col_w", str),
    "kernel.family": ("kernel_family", str),
    "kernel.order": ("kernel_order", int),
    "bandwidth.method": ("bandwidth_method", str),
    "bandwidth.value": ("bandwidth_value", float),
    "bandwidth.per_query": ("bandwidth_per_query", "bool"),
    "u_bar": ("u_bar", float),
    "t_bar": ("t_bar", float),
    "epsilon": ("epsilon", float),
    "tau": ("tau", float),
    "seed": ("seed", int),
    "bootstrap": ("B", int),
    "level": ("level", float),
    "reps": ("N", int),
    "n": ("n", int),
    "design": ("design", str),
    "censoring": ("censoring", int),
    "solver.mode": ("solver", str),
    "solver.restarts": ("restarts", int),
    "solver.u_grid": ("u_grid_size", int),
    "solver.x_grid": ("x_grid", int),
    "solver.triangular_tol": ("triangular_tol", float),
    "proxy.saturation": ("saturation", str),
    "proxy.saturation_cap": ("saturation_cap", float),
    "proxy.replicates": ("replicates", int),
    "warp_speed": ("warp_speed", "bool"),
    "dump.phi": ("dump_phi", str),
    "dump.proxies": ("dump_proxies", str),
}


@dataclass
class RunConfig:
    command: str = "estimate"
    input: str | None = None
    output: str | None = None
    col_y: str = "y"
    col_delta: str = "delta"
    col_z: str | None = None
    col_z_dummies: str | None = None
    col_x: str = "x"
    col_w: str = "w"
    kernel_family: str = "epanechnikov"
    kernel_order: int | None = None
    bandwidth_method: str = "rule-of-thumb"
    bandwidth_value: float | None = None
    bandwidth_per_query: bool = False
    u_bar: float = 0.9
    t_bar: float | None = None
    epsilon: float = 0.0
    tau: float = 0.0
    seed: int = 0
    B: int = 0
    level: float = 0.95
    N: int = 100
    n: int = 500
    design: str | None = None
    censoring: int = 20
    solver: str = "auto"
    restarts: int = 5
    u_grid_size: int = 101
    x_grid: int | None = None
    triangular_tol: float = 0.0
    saturation: str = "drop"
    saturation_cap: float = 0.05
    replicates: int = 1
    warp_speed: bool = True
    dump_phi: str | None = None
    dump_proxies: str | None = None

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not 0.0 < self.u_bar < 1.0:
            raise ConfigError(f"u_bar must lie in (0, 1), got {self.u_bar}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError("level must lie in (0, 1)")
        if self.command in ("estimate", "bootstrap"):
            if not self.input:
                raise ConfigError(f"{self.command} needs an input file")
            if self.col_z is not None and self.col_z_dummies is not None:
                raise ConfigError("give only one of columns.z and columns.z_dummies")
            if self.col_z_dummies is None and self.col_z is None:
                self.col_z = "z"
        if self.command == "bootstrap" and self.B < 2:
            raise ConfigError("bootstrap needs B >= 2")
        if self.command == "simulate":
            if not self.design:
                raise ConfigError("simulate needs a design name")
            if self.N < 1 or self.n < 1:
                raise ConfigError("reps and n must be positive")
        self.estimator_config()
        return self

    def estimator_config(self) -> EstimatorConfig:
        kernel = make_kernel(self.kernel_family, self.kernel_order)
        plan = BandwidthPlan(method=self.bandwidth_method, value=self.bandwidth_value,
                             per_query=self.bandwidth_per_query)
        return EstimatorConfig(
            kernel=kernel, bandwidth=plan, u_bar=self.u_bar, t_bar=self.t_bar,
            epsilon=self.epsilon, u_grid_size=self.u_grid_size, x_grid=self.x_grid,
            solver=self.solver, triangular_tol=self.triangular_tol, restarts=self.restarts,
            tau=self.tau, saturation=self.saturation, saturation_cap=self.saturation_cap,
            replicates=self.replicates)

    def update(self, values: dict) -> "RunConfig":
        """Apply flat ``key -> text`` pairs (config-file spelling)."""
        for key, text in values.items():
            if key not in _KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            attr, kind = _KEYS[key]
            setattr(self, attr, _coerce(key, text, kind))
        return self

    def items(self):
        """Flat ``(key, value)`` pairs, for the audit block of reports."""
        attrs = {f.name for f in fields(self)}
        for key, (attr, _) in _KEYS.items():
            if attr in attrs:
                yield key, getattr(self, attr)


def _coerce(key, text, kind):
    if text is None or isinstance(text, (int, float, bool)) and not isinstance(text, str):
        return text
    text = str(text).strip()
    if text.lower() in ("", "none"):
        return None
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` and ``;`` start comments."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_string("[run]\n" + fh.read(), source=str(path))
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return dict(parser["run"])
