"""Command-line front end.

Every subcommand reads defaults, then an optional TOML file (``--config``),
then ``--param key=value`` overrides and the dedicated flags.  Exit codes:
0 pass, 2 invalid configuration, 3 tolerance failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import brownian, estimation, phase_space, twopoint
from .errors import ThermoQFIError
from .hilbert import displaced_thermal, displaced_thermal_dim, number_op

EXIT_OK, EXIT_CONFIG, EXIT_TOLERANCE, EXIT_IO = 0, 2, 3, 4

CSV_COLUMNS = ["t", "gamma_t", "nbar_t", "dl2_closed", "dl2_grid", "var_tra", "cov_tra_bac", "var_bac", "dhs2"]

_BROWNIAN = {"omega0": 1.0, "gamma": 0.1, "nbar0": 1.0, "nbar_inf": 6.0, "alpha0": 0.0}
_GRID = {"grid_spacing": phase_space.DEFAULT_SPACING, "grid_extent": 0.0, "eps_cut": 1e-6}

DEFAULTS = {
    "brownian-scan": {**_BROWNIAN, **_GRID, "alpha0_alt": 3.0, "compare_alpha0": True, "n_times": 60,
                      "gamma_t_min": 1e-3, "gamma_t_max": 8.0, "tolerance": 0.03},
    "kernel-validate": {**_GRID, "omega0": 1.0, "nbars": [0.5, 1.0, 3.0, 6.0], "alphas": [0.0, 3.0],
                        "eps_sweep": [1e-3, 1e-4, 1e-5, 1e-6, 1e-7], "tolerance": 0.02},
    "twopoint-verify": {"omega0": 1.0, "modes": [[0.8, 0.1], [1.2, 0.1]], "beta": 5.0, "n_sys": 6,
                        "n_bath": 6, "t": 5.0, "alpha0": 1.0, "nbar0": 0.5, "grid_spacing": 0.2,
                        "grid_extent": 0.0, "eps_cut": 1e-6, "dbeta": 1e-4, "identity_tol": 1e-10,
                        "mean_tol": 1e-6, "oracle_tol": 1e-5},
    "cr-bound": {**_BROWNIAN, "gamma_t": 1.0, "nu": 100, "trials": 10_000, "seed": 0},
    "si-metric": {**_GRID, "omega0": 1.0, "nbar": 1.0, "lambda_nodes": 32, "tolerance": 0.05},
}


class ConfigError(Exception):
    pass


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        pass
    try:
        return complex(text.replace(" ", ""))
    except ValueError:
        return text


def _coerce(key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            value = _parse_value(value)
        if isinstance(value, complex):
            if key.startswith("alpha"):
                return value
            raise ConfigError(f"{key} must be real")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list")
        return value
    return value


def _merge(cfg, updates, source):
    for key, value in updates.items():
        key = key.replace("-", "_")
        if key not in cfg:
            raise ConfigError(f"unknown parameter {key!r} in {source}")
        cfg[key] = _coerce(key, value, cfg[key])


def load_config(command: str, args) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {args.config}: {exc}") from exc
        if command in data and isinstance(data[command], dict):
            data = data[command]
        _merge(cfg, data, args.config)
    for item in args.param or []:
        if "=" not in item:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        key, text = item.split("=", 1)
        _merge(cfg, {key.strip(): _parse_value(text.strip())}, "--param")
    flags = {"grid_spacing": args.grid_spacing, "grid_extent": args.grid_extent, "eps_cut": args.eps_cut,
             "seed": args.seed}
    for key, value in flags.items():
        if value is None:
            continue
        if key not in cfg:
            raise ConfigError(f"--{key.replace('_', '-')} does not apply to {command}")
        cfg[key] = _coerce(key, value, cfg[key])
    _validate(command, cfg)
    return cfg


def _validate(command, cfg):
    def positive(*keys):
        for k in keys:
            if not cfg[k] > 0:
                raise ConfigError(f"{k} must be positive")

    if "grid_spacing" in cfg:
        positive("grid_spacing")
        if cfg["grid_extent"] < 0:
            raise ConfigError("grid_extent must be >= 0 (0 selects the default)")
    if "eps_cut" in cfg and not 0 < cfg["eps_cut"] < 1:
        raise ConfigError("eps_cut must lie in (0, 1)")
    if command in ("brownian-scan", "cr-bound"):
        positive("omega0", "gamma", "nbar_inf")
        if cfg["nbar0"] < 0:
            raise ConfigError("nbar0 must be >= 0")
    if command == "brownian-scan":
        positive("n_times", "gamma_t_min")
        if cfg["gamma_t_max"] <= cfg["gamma_t_min"]:
            raise ConfigError("gamma_t_max must exceed gamma_t_min")
    if command == "cr-bound":
        positive("gamma_t")
        if cfg["nu"] < 1 or cfg["trials"] < 100:
            raise ConfigError("need nu >= 1 and trials >= 100")
        if not 0 <= cfg["seed"] < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
    if command == "kernel-validate":
        if any(n < 0 for n in cfg["nbars"]) or not cfg["eps_sweep"]:
            raise ConfigError("nbars must be >= 0 and eps_sweep non-empty")
        if any(not 0 < e < 1 for e in cfg["eps_sweep"]):
            raise ConfigError("eps_sweep entries must lie in (0, 1)")
    if command == "si-metric":
        positive("nbar", "omega0", "lambda_nodes")
    if command == "twopoint-verify":
        try:
            _star_model(cfg)
        except (ThermoQFIError, ValueError, TypeError) as exc:
            raise ConfigError(f"invalid model: {exc}") from exc


def _extent(cfg, default):
    return cfg["grid_extent"] if cfg.get("grid_extent", 0) > 0 else default


def _brownian_params(cfg, alpha_key="alpha0"):
    return brownian.BrownianParams(cfg["omega0"], cfg["gamma"], cfg["nbar0"], cfg["nbar_inf"], complex(cfg[alpha_key]))


def _star_model(cfg):
    return twopoint.StarModel(
        omega0=cfg["omega0"], modes=tuple(tuple(m) for m in cfg["modes"]), beta=cfg["beta"], n_sys=cfg["n_sys"],
        n_bath=cfg["n_bath"], t=cfg["t"], alpha0=complex(cfg["alpha0"]), nbar0=cfg["nbar0"])


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _json_default(obj):
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _jsonable(cfg):
    return {k: (str(v) if isinstance(v, complex) else v) for k, v in cfg.items()}


def write_csv(path: Path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerow([_fmt(v) for v in (r.t, r.gamma_t, r.nbar_t, r.dl2_closed, r.dl2_grid, r.var_tra, r.cov,
                                           r.var_bac, r.dhs2)])


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


# -- commands ---------------------------------------------------------------

def _scan(cfg, params):
    times = brownian.default_times(params.gamma, cfg["n_times"], cfg["gamma_t_min"], cfg["gamma_t_max"])
    hw = cfg["grid_extent"] if cfg["grid_extent"] > 0 else None
    return brownian.covariance_scan(params, times, cfg["grid_spacing"], hw, cfg["eps_cut"])


def cmd_brownian_scan(cfg, out: Path):
    params = _brownian_params(cfg)
    reports = _scan(cfg, params)
    files = {"csv": "brownian_scan.csv"}
    write_csv(out / files["csv"], reports)
    violation = max(r.sum_rule_violation() for r in reports)
    summary = {"max_sum_rule_violation": violation, "sum_rule_ok": violation < cfg["tolerance"]}
    passed = summary["sum_rule_ok"]
    if cfg["compare_alpha0"]:
        alt = _scan(cfg, _brownian_params(cfg, "alpha0_alt"))
        files["csv_alt"] = "brownian_scan_alt.csv"
        write_csv(out / files["csv_alt"], alt)
        gap = max((abs(a.dl2_grid - b.dl2_grid) / a.dl2_closed for a, b in zip(reports, alt) if a.dl2_closed > 0),
                  default=0.0)
        alt_violation = max(r.sum_rule_violation() for r in alt)
        summary.update(alpha0_gap=gap, alpha0_gap_ok=gap < cfg["tolerance"],
                       max_sum_rule_violation_alt=alt_violation)
        passed = passed and gap < cfg["tolerance"] and alt_violation < cfg["tolerance"]
    summary.update(passed=passed, files=files, config=_jsonable(cfg),
                   final_dl2_closed=reports[-1].dl2_closed, final_dl2_grid=reports[-1].dl2_grid)
    return summary, "summary.json"


def cmd_kernel_validate(cfg, out: Path):
    rows = []
    eps_min = min(min(cfg["eps_sweep"]), cfg["eps_cut"])
    w0 = cfg["omega0"]
    for nbar in cfg["nbars"]:
        for alpha in cfg["alphas"]:
            nbar, alpha = float(nbar), complex(alpha)
            beta = math.log1p(1.0 / nbar) / w0
            dim = displaced_thermal_dim(nbar * 1.01 + 0.01, alpha, 1e-12)

            def build(b, dim=dim, alpha=alpha):
                return displaced_thermal(1.0 / math.expm1(b * w0), alpha, dim=dim)

            grid = phase_space.PhaseGrid.square(alpha, _extent(cfg, abs(alpha) + 5 * math.sqrt(1 + nbar)),
                                                cfg["grid_spacing"])
            kern = phase_space.t_kernel(build(beta), grid, eps_min)
            sc = phase_space.score_field(build, beta, grid).values
            sld = phase_space.sld_qfi(build, beta)
            sweep = {}
            for eps in sorted(set(cfg["eps_sweep"]) | {cfg["eps_cut"]}):
                k = kern.truncated(eps)
                sweep[f"{eps:g}"] = {"qfi_phase_space": phase_space.g_form(k, k.q, sc, sc), "rank": k.rank}
            qfi = sweep[f"{cfg['eps_cut']:g}"]["qfi_phase_space"]
            gap = abs(qfi - sld) / sld
            rows.append({"nbar": nbar, "alpha": alpha, "dim": dim, "grid_points": grid.size,
                         "qfi_phase_space": qfi, "sld_qfi": sld, "relative_gap": gap,
                         "passed": gap < cfg["tolerance"], "eps_sweep": sweep})
    passed = all(r["passed"] for r in rows)
    return {"passed": passed, "states": rows, "config": _jsonable(cfg)}, "kernel_validate.json"


def cmd_twopoint_verify(cfg, out: Path):
    model = _star_model(cfg)
    rho_t = twopoint.reduced_state(model)
    grid = twopoint.default_grid(model, cfg["grid_spacing"], rho_t)
    if cfg["grid_extent"] > 0:
        grid = phase_space.PhaseGrid.square(grid.center, cfg["grid_extent"], cfg["grid_spacing"])
    res = twopoint.protocol(model, grid)
    fd = twopoint.score_fd(model, grid, cfg["dbeta"])
    oracle = float(np.max(np.abs(fd - res.score)[res.mask]))
    dl2_phase, dl2_sld = twopoint.qfi_cross_check(model, grid, cfg["eps_cut"], cfg["dbeta"])
    checks = {
        "identity_residual": res.identity_residual(),
        "mean_backaction": abs(res.mean_bac()),
        "mean_trajectory_deviation": abs(res.mean_dtra()),
        "energy_bookkeeping": abs(res.h_avg - (res.e_b0 - res.e_bt)),
        "beta_oracle_residual": oracle,
    }
    limits = {"identity_residual": cfg["identity_tol"], "mean_backaction": cfg["mean_tol"],
              "mean_trajectory_deviation": cfg["mean_tol"], "energy_bookkeeping": 1e-10,
              "beta_oracle_residual": cfg["oracle_tol"]}
    passed = all(checks[k] < limits[k] for k in checks)
    payload = {"passed": passed, "checks": checks, "limits": limits, "h_avg": res.h_avg,
               "masked_points": int((~res.mask).sum()), "grid_points": grid.size,
               "dl2_phase": dl2_phase, "dl2_sld": dl2_sld,
               "qfi_relative_gap": abs(dl2_phase - dl2_sld) / dl2_sld if dl2_sld > 0 else 0.0,
               "config": _jsonable(cfg)}
    return payload, "twopoint_verify.json"


def cmd_cr_bound(cfg, out: Path):
    params = _brownian_params(cfg)
    conf = estimation.ExperimentConfig(params, cfg["gamma_t"] / params.gamma, cfg["nu"], cfg["trials"], cfg["seed"])
    rep = estimation.run_experiment(conf)
    payload = rep.to_dict()
    payload.update(passed=rep.quantum_bound_ok() and rep.ordering_ok(), config=_jsonable(cfg))
    return payload, "cr_bound.json"


def si_duality(nbar: float, omega0: float = 1.0, spacing: float = phase_space.DEFAULT_SPACING,
               half_width: float | None = None, eps_cut: float = 1e-6, lambda_nodes: int = 32) -> dict:
    """Skew-information g-form of the thermal score next to its two operator oracles."""
    beta = math.log1p(1.0 / nbar) / omega0
    dim = displaced_thermal_dim(nbar * 1.01 + 0.01, 0.0, 1e-12)

    def build(b):
        return displaced_thermal(1.0 / math.expm1(b * omega0), 0.0, dim=dim)

    grid = phase_space.PhaseGrid.square(0.0, half_width or 5 * math.sqrt(1 + nbar), spacing)
    kern = phase_space.t_si_kernel(build(beta), grid, lambda_nodes, eps_cut)
    sc = phase_space.score_field(build, beta, grid).values
    g_si = phase_space.g_form(kern, kern.q, sc, sc)
    d = 1e-4 * beta
    drho = (build(beta - d) - build(beta + d)) / (2 * d)
    rho = build(beta)
    h_s = omega0 * number_op(dim)
    dh = h_s - np.trace(h_s @ rho).real * np.eye(dim)
    oracle = float(np.real(np.trace(drho @ dh)))
    dhs2 = omega0**2 * nbar * (1 + nbar)
    return {"g_si": g_si, "duality_oracle": oracle, "dhs2": dhs2, "rank": kern.rank}


def cmd_si_metric(cfg, out: Path):
    hw = cfg["grid_extent"] if cfg["grid_extent"] > 0 else None
    vals = si_duality(cfg["nbar"], cfg["omega0"], cfg["grid_spacing"], hw, cfg["eps_cut"], cfg["lambda_nodes"])
    names = ["g_si", "duality_oracle", "dhs2"]
    gaps = {f"{a}_vs_{b}": abs(vals[a] - vals[b]) / abs(vals[b]) for i, a in enumerate(names) for b in names[i + 1:]}
    passed = all(g < cfg["tolerance"] for g in gaps.values())
    return {"passed": passed, **vals, "gaps": gaps, "config": _jsonable(cfg)}, "si_metric.json"


COMMANDS = {
    "brownian-scan": cmd_brownian_scan,
    "kernel-validate": cmd_kernel_validate,
    "twopoint-verify": cmd_twopoint_verify,
    "cr-bound": cmd_cr_bound,
    "si-metric": cmd_si_metric,
}


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return f'"{v}"'
    return str(v)


def dump_defaults(commands) -> str:
    blocks = []
    for name in commands:
        lines = [f"[{name}]"] + [f"{k} = {_toml_value(v)}" for k, v in DEFAULTS[name].items()]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with parameter overrides")
    common.add_argument("--param", action="append", metavar="KEY=VALUE", help="override one parameter")
    common.add_argument("--output", default="thermoqfi_output", help="output directory")
    common.add_argument("--seed", type=int, help="RNG seed (cr-bound)")
    common.add_argument("--grid-extent", type=float, help="grid half-width (0 = automatic)")
    common.add_argument("--grid-spacing", type=float, help="grid spacing")
    common.add_argument("--eps-cut", type=float, help="relative eigenvalue cutoff of the kernel inverse")
    common.add_argument("--dump-defaults", action="store_true", help="print default parameters as TOML and exit")
    parser = argparse.ArgumentParser(prog="thermoqfi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    helps = {
        "brownian-scan": "heat covariance time series of the Brownian oscillator",
        "kernel-validate": "phase-space QFI against the SLD oracle on displaced thermal states",
        "twopoint-verify": "score decomposition identities in the exact star model",
        "cr-bound": "Monte-Carlo Cramer-Rao bounds for heterodyne thermometry",
        "si-metric": "skew-information metric duality for a thermal oscillator",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    parser.add_argument("--dump-defaults", action="store_true", help="print all defaults and exit")
    return parser


def _limit_threads():
    value = os.environ.get("THERMOQFI_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError as exc:
        raise ConfigError(f"THERMOQFI_THREADS must be an integer, got {value!r}") from exc
    if n < 1:
        raise ConfigError("THERMOQFI_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.command is None:
        if args.dump_defaults:
            sys.stdout.write(dump_defaults(DEFAULTS))
            return EXIT_OK
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    if args.dump_defaults:
        sys.stdout.write(dump_defaults([args.command]))
        return EXIT_OK
    try:
        cfg = load_config(args.command, args)
        limiter = _limit_threads()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise OSError(f"{out} is not writable")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        payload, name = COMMANDS[args.command](cfg, out)
        write_json(out / name, payload)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ThermoQFIError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    print(json.dumps({"command": args.command, "passed": payload["passed"], "output": str(out / name)}))
    return EXIT_OK if payload["passed"] else EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
