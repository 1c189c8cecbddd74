"""Command line entry point: ``ivcox estimate | bootstrap | simulate``.

Settings come from defaults, then an optional ``--config`` file, then flags.
Every config key ``a.b_c`` has a flag ``--a-b-c``.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import _KEYS, RunConfig, read_config_file
from .errors import IVCoxError
from .inference import bootstrap_sd, normal_ci
from .io import read_dataset, render_text, write_report, write_table
from .pipeline import estimate_proposed
from .simharness import get_design, run_monte_carlo

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

# short spellings kept alongside the generated ones
_ALIASES = {"bootstrap": ["--B"], "reps": ["--N"], "dump.phi": ["--dump-phi"],
            "dump.proxies": ["--dump-proxies"]}


def _flag(key: str) -> str:
    return "--" + key.replace(".", "-").replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ivcox", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "estimate": "fit the presmoothing estimator on a CSV file",
        "bootstrap": "estimate and add bootstrap standard errors and intervals",
        "simulate": "Monte Carlo comparison on a built-in design",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="flat key = value settings file")
        for key in _KEYS:
            if key == "command":
                continue
            flags = [_flag(key)] + _ALIASES.get(key, [])
            p.add_argument(*flags, dest=key, metavar=key.split(".")[-1].upper())
    return parser


def load_config(argv) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    cfg = RunConfig(command=args.pop("command"))
    path = args.pop("config", None)
    if path:
        values = read_config_file(path)
        values.pop("command", None)
        cfg.update(values)
    cfg.update(args)
    return cfg.validate()


def _mapping(cfg: RunConfig) -> dict:
    mapping = {"y": cfg.col_y, "delta": cfg.col_delta, "x": cfg.col_x, "w": cfg.col_w}
    if cfg.col_z_dummies:
        mapping["z_dummies"] = cfg.col_z_dummies
    else:
        mapping["z"] = cfg.col_z
    return mapping


def coefficient_names(data, cfg: RunConfig):
    if cfg.col_z_dummies:
        names = list(data.z_labels[1:])
    elif data.levels == 2:
        names = [cfg.col_z]
    else:
        names = [f"{cfg.col_z}={label}" for label in data.z_labels[1:]]
    return names + [cfg.col_x]


_SIMULATE_ONLY = {"reps", "n", "design", "censoring", "warp_speed"}
_DATA_ONLY = {"input", "bootstrap", "dump.phi", "dump.proxies"}


def _relevant(command: str, key: str) -> bool:
    if command == "simulate":
        return key not in _DATA_ONLY and not key.startswith("columns.")
    return key not in _SIMULATE_ONLY


def _audit(cfg: RunConfig, extra: dict) -> dict:
    audit = {key: value for key, value in cfg.items()
             if value is not None and _relevant(cfg.command, key)}
    audit.update(extra)
    return audit


def _emit(cfg: RunConfig, title, columns, rows, audit, out):
    if cfg.output:
        write_report(cfg.output, title, columns, rows, audit)
    (out or sys.stdout).write(render_text(title, columns, rows, audit))


def run_estimate(cfg: RunConfig, out=None) -> int:
    est_cfg = cfg.estimator_config()
    data = read_dataset(cfg.input, _mapping(cfg))
    s_fit, s_boot = np.random.SeedSequence(cfg.seed).spawn(2)
    fit = estimate_proposed(data, est_cfg, seed=s_fit)
    names = coefficient_names(data, cfg)
    extra = {"rows": data.n, "events": int(data.delta.sum()), **fit.audit, "seed": cfg.seed}
    if cfg.B >= 2:
        sd, draws, failed = bootstrap_sd(data, est_cfg, cfg.B, seed=s_boot)
        ci = normal_ci(fit.beta, sd, cfg.level)
        rows = [(nm, b, s, lo, hi) for nm, b, s, lo, hi in zip(names, fit.beta, ci.sd, ci.lower, ci.upper)]
        columns = ["coefficient", "estimate", "sd", f"lower{cfg.level:g}", f"upper{cfg.level:g}"]
        extra.update({"bootstrap_draws": draws.shape[0], "bootstrap_failed": failed})
    else:
        rows = [(nm, b) for nm, b in zip(names, fit.beta)]
        columns = ["coefficient", "estimate"]
    if cfg.dump_phi:
        write_table(cfg.dump_phi, ["x", "u", "level", "phi", "residual"], fit.quantile_map.table())
    if cfg.dump_proxies:
        p = fit.proxies
        v_names = [f"v{j}" for j in range(p.v.shape[1])]
        write_table(cfg.dump_proxies, ["row", "y", "delta"] + v_names,
                    [(int(r), y, int(d), *v) for r, y, d, v in zip(p.rows, p.y, p.delta, p.v)])
    _emit(cfg, f"proposed estimator ({cfg.command})", columns, rows, _audit(cfg, extra), out)
    return EXIT_OK


def run_simulate(cfg: RunConfig, out=None) -> int:
    design = get_design(cfg.design)
    reports = run_monte_carlo(design, cfg.n, cfg.N, cfg=cfg.estimator_config(), seed=cfg.seed,
                              censoring=cfg.censoring, warp_speed=cfg.warp_speed, level=cfg.level)
    columns = ["estimator", "component", "bias", "sd", "mse", "rmse", "cp95"]
    rows, extra = [], {"design": design.name, "beta0": list(design.beta)}
    for name, rep in reports.items():
        for j, comp in enumerate(("beta_z", "beta_x")):
            cp = None if rep.cp95 is None else float(rep.cp95[j])
            rows.append((name, comp, rep.bias[j], rep.sd[j], rep.mse[j], rep.rmse, cp))
        extra[f"{name}_failed"] = rep.failed
        extra[f"{name}_replications"] = rep.replications
        if not rep.sd_defined:
            extra[f"{name}_sd"] = "undefined for a single replication"
    _emit(cfg, f"Monte Carlo: {design.name}, {cfg.censoring}% censoring, n={cfg.n}",
          columns, rows, _audit(cfg, extra), out)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        cfg = load_config(sys.argv[1:] if argv is None else argv)
        if cfg.command == "simulate":
            return run_simulate(cfg)
        return run_estimate(cfg)
    except SystemExit as exc:
        # argparse usage errors are configuration errors
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    except IVCoxError as exc:
        print(f"ivcox: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ivcox: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
