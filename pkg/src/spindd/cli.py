"""Command-line runner: ``spindd {run,steady,scale,sweep} --config FILE``.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .diagnostics import (DecayFit, fit_decay_rate, format_float, upper_bound_constant,
                          write_csv)
from .errors import (ConfigError, ConvergenceError, DomainError, FitError, ParameterError,
                     StepFailure, ValidationError)
from .params import check_tau_condition, scale
from .stationary import SteadyState, solve_stationary
from .transport import TransientResult, run_transient

log = logging.getLogger("spindd")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
CONFIG_ERRORS = (ConfigError, ParameterError, ValidationError)
SOLVER_ERRORS = (StepFailure, ConvergenceError, DomainError)

# H(0) at or below this is treated as "already at equilibrium": nothing to fit
FIT_FLOOR = 1e-24

SWEEP_COLUMNS = ("value", "kappa_est", "r2", "H0", "min_density", "tau_threshold",
                 "tau_condition", "status", "error")


@dataclass
class Simulation:
    config: RunConfig
    steady: SteadyState
    result: TransientResult
    fit: DecayFit | None
    fit_note: str
    M: float


def _steady(cfg: RunConfig):
    grid = cfg.grid()
    params = cfg.params(grid)
    bc = cfg.boundary(grid)
    return grid, params, bc, solve_stationary(grid, params, bc, **cfg.stationary_options())


def simulate(cfg: RunConfig) -> Simulation:
    """Stationary solve followed by the transient run; no files are written."""
    grid = cfg.grid()
    params = cfg.params(grid)
    bc = cfg.boundary(grid)
    dt, t_end = cfg.time()
    options = cfg.solver_options()
    initial_needs_steady = bool(cfg.section("initial").get("n0_relative", False))
    steady = solve_stationary(grid, params, bc, **cfg.stationary_options())
    initial = cfg.initial_state(grid, params, steady.n_inf.values if initial_needs_steady
                                else None)
    result = run_transient(grid, initial, params, bc, t_end, dt, options=options,
                           steady=steady, record_every=cfg.record_every())
    series = result.series
    fit, note = None, ""
    if series["H"][0] <= FIT_FLOOR:
        note = "declined: H(0) at residual level, nothing to fit"
    else:
        try:
            fit = fit_decay_rate(series, "H")
        except FitError as exc:
            note = f"declined: {exc}"
    M = upper_bound_constant(bc, params.doping_on(grid.n_cells), initial)
    return Simulation(cfg, steady, result, fit, note, M)


def _write_steady(path: Path, steady: SteadyState):
    grid = steady.grid
    write_csv(path, ("x", "n_inf", "v_inf", "phi_inf"),
              [grid.cell_centers, steady.n_inf.values, steady.v_inf.values,
               steady.phi_inf.values])


def _write_final(path: Path, sim: Simulation):
    st = sim.result.state
    x = sim.steady.grid.cell_centers
    write_csv(path, ("x", "n_plus", "n_minus", "n0", "nperp_x", "nperp_y", "nperp_z", "V"),
              [x, st.n_plus, st.n_minus, st.n0, st.n_perp[:, 0], st.n_perp[:, 1],
               st.n_perp[:, 2], sim.result.potential.values])


def _json_number(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def summary_of(sim: Simulation) -> dict:
    s = sim.result.series
    params = sim.config.params()
    cond = check_tau_condition(params)
    m_obs = np.minimum(s["min_np"], s["min_nm"])
    out = {
        "kappa_est": _json_number(sim.fit.kappa_est) if sim.fit else None,
        "r2": _json_number(sim.fit.r_squared) if sim.fit else None,
        "fit_window": list(sim.fit.window) if sim.fit else None,
        "fit_note": sim.fit_note,
        "H0": _json_number(s["H"][0]),
        "H_final": _json_number(s["H"][-1]),
        "H_monotone": bool(np.all(np.diff(s["H"][1:]) <= 0)),
        "M": _json_number(sim.M),
        "max_n0": _json_number(s["max_n0"].max()),
        "upper_ok": bool(np.all(s["upper_ok"])),
        "m_observed": _json_number(m_obs.min()),
        "sandwich_ok": bool(np.all(s["sandwich_lower_ok"]) and np.all(s["sandwich_upper_ok"])),
        "nperp_max": _json_number(s["nperp_max"].max()),
        "tau": _json_number(params.tau),
        "tau_threshold": _json_number(cond.threshold),
        "tau_condition": "satisfied" if cond.satisfied else "violated",
        "grad_phi_inf_max": _json_number(sim.steady.grad_phi_inf_max),
        "steps": int(sim.result.n_steps),
        "t_final": _json_number(sim.result.t),
    }
    return out


def cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    sim = simulate(cfg)
    out = cfg.output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim.result.series.to_csv(out / "energy.csv")
    _write_final(out / "final_state.csv", sim)
    _write_steady(out / "steady_state.csv", sim.steady)
    summary = summary_of(sim)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if not args.quiet:
        for k, v in summary.items():
            print(f"{k} = {v}")
    return EXIT_OK


def cmd_steady(args) -> int:
    cfg = RunConfig.load(args.config)
    grid, params, bc, steady = _steady(cfg)
    out = cfg.output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_steady(out / "steady_state.csv", steady)
    summary = {
        "iterations": steady.iterations,
        "continuity_residual": steady.continuity_residual,
        "poisson_residual": steady.poisson_residual,
        "grad_phi_inf_max": steady.grad_phi_inf_max,
        "m_inf": steady.m_inf,
        "M_inf": steady.M_inf,
    }
    (out / "steady_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if not args.quiet:
        for k, v in summary.items():
            print(f"{k} = {v}")
    return EXIT_OK


def scale_lines(cfg: RunConfig):
    phys = cfg.physical()
    mi = cfg.model_inputs() if "model" in cfg.raw else {"p": 0.0, "gamma": 0.0, "D": 1.0,
                                                          "mu": (0.0, 0.0, 1.0)}
    if "doping" in cfg.raw and "grid" in cfg.raw:
        grid = cfg.grid()
        g = cfg.doping_profile()(grid.cell_centers, grid.length)
    else:
        g = 1.0
    report = scale(phys, mi["p"], mi["gamma"], mi["D"], g, mi["mu"])
    return report.lines()


def cmd_scale(args) -> int:
    cfg = RunConfig.load(args.config)
    for name, value in scale_lines(cfg):
        print(f"{name} = {value if isinstance(value, str) else format_float(value)}")
    return EXIT_OK


def _sweep_row(cfg: RunConfig, param: str, value: float) -> dict:
    row = {c: math.nan for c in SWEEP_COLUMNS}
    row.update(value=value, tau_condition="", status="ok", error="")
    try:
        sub = cfg.with_value(param, value)
        cond = check_tau_condition(sub.params())
        row.update(tau_threshold=cond.threshold,
                   tau_condition="satisfied" if cond.satisfied else "violated")
        sim = simulate(sub)
        s = sim.result.series
        row.update(H0=s["H"][0], min_density=float(np.minimum(s["min_np"], s["min_nm"]).min()))
        if sim.fit is not None:
            row.update(kappa_est=sim.fit.kappa_est, r2=sim.fit.r_squared)
        else:
            row.update(status="no_fit", error=sim.fit_note)
    except CONFIG_ERRORS + SOLVER_ERRORS as exc:
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def _format_cell(v):
    if isinstance(v, str):
        return v.replace(",", ";").replace("\n", " ")
    return format_float(v)


def parse_values(tokens) -> list:
    vals = []
    for tok in tokens or []:
        for part in str(tok).split(","):
            part = part.strip()
            if not part:
                continue
            try:
                vals.append(float(part))
            except ValueError as exc:
                raise ConfigError(f"--values: not a number: {part!r}") from exc
    if not vals:
        raise ConfigError("--values: empty list of sweep values")
    return vals


def cmd_sweep(args) -> int:
    cfg = RunConfig.load(args.config)
    values = parse_values(args.values)
    if args.param not in ("delta", "tau", "p"):
        raise ConfigError(f"--param: unknown sweep parameter {args.param!r}")
    # fail early on a structurally invalid sweep (e.g. delta with V_D given)
    cfg.with_value(args.param, values[0])
    threads = max(1, int(args.threads or 1))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(lambda v: _sweep_row(cfg, args.param, v), values))
    out = cfg.output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(row[c]) for c in SWEEP_COLUMNS) + "\n")
    if not args.quiet:
        for row in rows:
            print(f"{args.param}={row['value']:g}: kappa_est={row['kappa_est']:.6g} "
                  f"r2={row['r2']:.6g} status={row['status']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spindd", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides [output])")
        p.add_argument("--quiet", action="store_true")
        p.add_argument("--threads", type=int, default=1, help="worker threads (sweep only)")

    common(sub.add_parser("run", help="stationary solve + transient run"))
    common(sub.add_parser("steady", help="stationary solve only"))
    common(sub.add_parser("scale", help="print scaled parameters from [physical]"))
    sw = sub.add_parser("sweep", help="one run per parameter value")
    common(sw)
    sw.add_argument("--param", required=True, choices=("delta", "tau", "p"))
    sw.add_argument("--values", nargs="*", default=[], help="values, space or comma separated")
    return ap


COMMANDS = {"run": cmd_run, "steady": cmd_steady, "scale": cmd_scale, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        report = getattr(exc, "report", None)
        if report is not None:
            print(f"step report: {report}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
