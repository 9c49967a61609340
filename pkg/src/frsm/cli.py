"""Command line driver.

    frsm <subcommand> [--config cfg.json] [--out dir] [--seed N]
                      [--workers N] [--strict]

Subcommands: simulate, critical, slow-manifold, attract, converge, distance,
reduced, check.  Exit codes: 0 success, 2 regime violation under --strict,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .critical import CriticalGraph, solve_h0
from .errors import FrsmError, RegimeError
from .harness import RUNNERS, ExperimentConfig, emit_report
from .integrate import export_trajectory_csv, integrate_full
from .lyapunov_perron import solve_fixed_point
from .spectral import field_to_record, sobolev_norm, zero_field
from .splitting import build_splitting, check_regime, project_slow, splitting_record
from .system import build_modified

EXIT_OK = 0
EXIT_REGIME = 2
EXIT_NUMERICAL = 3


def _load_config(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_json(args.config)
    else:
        config = ExperimentConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    if args.strict:
        config.strict = True
    return config


def _cmd_experiment(name):
    def run(args):
        config = _load_config(args)
        report = RUNNERS[name](config)
        csv_path, json_path = emit_report(report, args.out, config)
        print(f"{report.experiment}: slope={report.fitted_slope} "
              f"r2={report.r_squared} -> {csv_path}")
        for flag in report.flags:
            print(f"  flag: {flag}")
        return EXIT_OK

    return run


def _cmd_simulate(args):
    config = _load_config(args)
    spec = config.make_spec(config.epsilon_list[-1])
    zf = zero_field(config.K)
    mod = build_modified(spec, zf, zf)
    graph = CriticalGraph(newton_tol=config.newton_tol)
    v0 = config.make_v0()
    u0 = solve_h0(graph, spec, v0) if config.on_manifold else zf
    traj = integrate_full(mod, u0, v0, T=config.T, dt=config.dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "trajectory.csv"
    stride = max(1, len(traj.states) // 400)
    export_trajectory_csv(traj, spec, path, graph=graph, stride=stride)
    print(f"simulate: {len(traj.states)} states -> {path}"
          + (" [cutoff activated]" if traj.cutoff_activated else ""))
    return EXIT_OK


def _cmd_critical(args):
    config = _load_config(args)
    spec = config.make_spec(config.epsilon_list[-1])
    graph = CriticalGraph(newton_tol=config.newton_tol)
    v0 = config.make_v0()
    u = solve_h0(graph, spec, v0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "critical_point.json"
    path.write_text(json.dumps({
        "v0": field_to_record(v0),
        "u": field_to_record(u),
        "u_h2": sobolev_norm(u, 2),
    }, indent=2, sort_keys=True) + "\n")
    print(f"critical: ||h0(v0)||_H2 = {sobolev_norm(u, 2):.6g} -> {path}")
    return EXIT_OK


def _cmd_slow_manifold(args):
    config = _load_config(args)
    eps = config.epsilon_list[-1]
    zeta = config.zeta_list[0]
    spec = config.make_spec(eps)
    zf = zero_field(config.K)
    mod = build_modified(spec, zf, zf)
    split = build_splitting(zeta, eps, mod.lambda0, spec.omegaA)
    flags = check_regime(eps, zeta, spec.omegaA, mod.lambda0)
    if config.strict and not flags["ok"]:
        raise RegimeError(f"regime check failed: {flags}")
    v0 = project_slow(split, config.make_v0(split.k0))
    point = solve_fixed_point(v0, mod, split, tol=config.fixed_point_tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "slow_manifold_point.json"
    payload = point.to_record()
    payload["splitting"] = splitting_record(split, regime=flags)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"slow-manifold: residual={point.residual:.3e} "
          f"iterations={point.iterations} -> {path}")
    return EXIT_OK


def _cmd_check(args):
    config = _load_config(args)
    eps = config.epsilon_list[-1]
    zeta = config.zeta_list[0]
    spec = config.make_spec(eps)
    zf = zero_field(config.K)
    mod = build_modified(spec, zf, zf)
    split = build_splitting(zeta, eps, mod.lambda0, spec.omegaA)
    from .splitting import contraction_constant
    from .errors import ConfigurationError

    try:
        L, L_zeta = contraction_constant(
            L_ftilde=mod.L_ftilde, C_A=spec.C_A, L_g=spec.L_g, C_B=spec.C_B,
            M_B=spec.M_B, gamma=spec.gamma, delta=spec.delta, epsilon=eps,
            zeta=zeta, omegaA=spec.omegaA, lambda0=mod.lambda0,
            N_F=split.N_F, N_S=split.N_S)
    except ConfigurationError:
        L, L_zeta = None, None
    flags = check_regime(eps, zeta, spec.omegaA, mod.lambda0, contraction=L)
    record = splitting_record(split, L, L_zeta, flags)
    record.update({
        "lambda0": mod.lambda0,
        "J_bound": mod.J_bound,
        "L_ftilde": mod.L_ftilde,
        "eta": split.rate + 0.5 * (split.N_S + split.N_F),
    })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "check.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(json.dumps(record, indent=2, sort_keys=True))
    if config.strict and not flags["ok"]:
        return EXIT_REGIME
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="frsm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "simulate": _cmd_simulate,
        "critical": _cmd_critical,
        "slow-manifold": _cmd_slow_manifold,
        "attract": _cmd_experiment("attract"),
        "converge": _cmd_experiment("converge"),
        "distance": _cmd_experiment("distance"),
        "reduced": _cmd_experiment("reduced"),
        "check": _cmd_check,
    }
    for name in commands:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="config JSON path")
        p.add_argument("--out", type=str, default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--strict", action="store_true")
    args = parser.parse_args(argv)
    try:
        return commands[args.command](args)
    except RegimeError as err:
        print(f"regime violation: {err}", file=sys.stderr)
        return EXIT_REGIME
    except FrsmError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
