"""Experiment driver: rate sweeps, log-log fits, CSV/JSON reports.

Four experiments quantify the asymptotic claims at desk scale:

  E1 convergence   error(eps) of the full vs. limit solution at a fixed time,
  E2 distance      graph distance of the slow manifold to the critical one,
                   swept in eps (zeta fixed) or zeta (eps fixed),
  E3 attraction    exponential decay rate of off-manifold deviations,
  E4 reduced flow  limit flow vs. the slow-block reduced flow across zeta.

Every report embeds the regime diagnostics and is byte-deterministic for a
fixed config, seed and a single worker.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .critical import CriticalGraph, h0_closed_form, solve_h0
from .errors import ConfigurationError, DivergenceError, FrsmError, TruncationError
from .integrate import integrate_full, integrate_limit, integrate_reduced
from .lyapunov_perron import manifold_distance, solve_fixed_point
from .spectral import (
    SpectralField,
    apply_semigroup,
    cosine_field,
    random_band_field,
    sobolev_norm,
    zero_field,
)
from .splitting import (
    build_splitting,
    check_regime,
    contraction_constant,
    project_fast,
    project_slow,
    splitting_record,
)
from .system import build_modified, make_system, system_from_table


@dataclass
class ExperimentConfig:
    system: str = "benchmark"
    K: int = 32
    epsilon_list: tuple = (1e-1, 10**-1.5, 1e-2, 10**-2.5, 1e-3, 10**-3.5)
    zeta_list: tuple = (10**-0.5, 1e-1, 10**-1.5, 1e-2, 10**-2.5)
    t_eval: float = 1.0
    T: float = 1.0
    dt: float | None = None
    v0_kind: str = "single_mode"  # "single_mode" | "random_band"
    v0_amplitude: float = 0.2
    v0_mode: int = 1
    v0_band: tuple = (1, 3)
    seed: int = 0
    strict: bool = False
    workers: int = 1
    newton_tol: float = 1e-12
    fixed_point_tol: float = 1e-8
    on_manifold: bool = True
    offset: float = 0.05
    fast_amplitude: float = 0.05
    system_table: dict | None = None

    def __post_init__(self):
        eps = tuple(self.epsilon_list)
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigurationError("epsilon_list must be strictly decreasing")
        self.epsilon_list = eps
        self.zeta_list = tuple(self.zeta_list)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        raw = json.loads(Path(path).read_text())
        kwargs = {}
        for key in ("system", "K", "t_eval", "T", "dt", "seed", "strict", "workers",
                    "on_manifold", "offset", "fast_amplitude", "system_table"):
            if key in raw:
                kwargs[key] = raw[key]
        if "epsilon" in raw:
            kwargs["epsilon_list"] = tuple(raw["epsilon"])
        if "zeta" in raw:
            kwargs["zeta_list"] = tuple(raw["zeta"])
        v0 = raw.get("v0", {})
        if "kind" in v0:
            kwargs["v0_kind"] = v0["kind"]
        if "amplitude" in v0:
            kwargs["v0_amplitude"] = v0["amplitude"]
        if "mode" in v0:
            kwargs["v0_mode"] = v0["mode"]
        if "band" in v0:
            kwargs["v0_band"] = tuple(v0["band"])
        if "seed" in v0:
            kwargs["seed"] = v0["seed"]
        tols = raw.get("tolerances", {})
        if "newton" in tols:
            kwargs["newton_tol"] = tols["newton"]
        if "fixed_point" in tols:
            kwargs["fixed_point_tol"] = tols["fixed_point"]
        return cls(**kwargs)

    def make_spec(self, epsilon: float):
        if self.system_table is not None:
            return system_from_table(self.system_table, epsilon)
        return make_system(self.system, epsilon)

    def make_v0(self, k0: int | None = None) -> SpectralField:
        if self.v0_kind == "single_mode":
            return cosine_field(self.v0_mode, self.v0_amplitude, self.K)
        if self.v0_kind == "random_band":
            rng = np.random.default_rng(self.seed)
            return random_band_field(self.K, rng, self.v0_amplitude, band=self.v0_band)
        raise ConfigurationError(f"unknown v0 kind '{self.v0_kind}'")


@dataclass
class RateReport:
    experiment: str
    points: list  # (parameter, error) pairs
    fitted_slope: float | None
    fitted_intercept: float | None
    r_squared: float | None
    diagnostics: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)  # per-point dicts for the CSV
    flags: list = field(default_factory=list)


def _pmap(fn, items, workers: int):
    """Ordered map over sweep points, optionally on a thread pool.

    Each point is independent and numerically deterministic, so the report
    is byte-identical for any worker count; workers = 1 keeps everything on
    the calling thread.
    """
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def fit_rate(points):
    """Least squares on (log parameter, log error); nonpositive errors dropped."""
    usable = [(p, e) for p, e in points if e > 0.0 and np.isfinite(e)]
    dropped = len(points) - len(usable)
    if len(usable) < 3:
        raise ConfigurationError(
            f"rate fit needs at least 3 positive points, got {len(usable)}"
        )
    lx = np.log([p for p, _ in usable])
    ly = np.log([e for _, e in usable])
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    pred = A @ coef
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - np.mean(ly)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return slope, intercept, r2, dropped


def _regime_or_raise(config: ExperimentConfig, epsilon: float, zeta: float,
                     lambda0: float, omegaA: float, L=None) -> dict:
    flags = check_regime(epsilon, zeta, omegaA, lambda0, contraction=L)
    if config.strict and not flags["ok"]:
        from .errors import RegimeError

        raise RegimeError(f"regime check failed at eps={epsilon}, zeta={zeta}: {flags}")
    return flags


def run_convergence(config: ExperimentConfig) -> RateReport:
    """E1: ||u_eps(t) - u_0(t)|| + ||v_eps(t) - v_0(t)|| at t_eval across eps."""
    K = config.K
    graph = CriticalGraph(newton_tol=config.newton_tol)
    points, rows, flags = [], [], []
    zeta = config.zeta_list[0] if config.zeta_list else 0.1
    diagnostics = {}

    def one_point(eps):
        spec = config.make_spec(eps)
        zf = zero_field(K)
        mod = build_modified(spec, zf, zf)
        diag = _regime_or_raise(config, eps, zeta, mod.lambda0, spec.omegaA)
        v0 = config.make_v0()
        u0 = solve_h0(graph, spec, v0)
        layer_flag = False
        if not config.on_manifold:
            off = cosine_field(config.v0_mode, 1.0, K)
            u0 = u0 + off * (config.offset / sobolev_norm(off, 2))
            layer_flag = config.t_eval < 10.0 * eps * abs(math.log(1e-12))
        dt = config.dt or min(1e-3, config.t_eval / 10.0)
        traj = integrate_full(mod, u0, v0, T=config.t_eval, dt=dt, store_stride=10**9)
        limit = integrate_limit(spec, v0, T=config.t_eval,
                                dt=min(dt, config.t_eval / 10.0), graph=graph)
        err = sobolev_norm(traj.final.u - limit.final.u, 2) + sobolev_norm(
            traj.final.v - limit.final.v, 2
        )
        row = {"parameter": eps, "error": err,
               "cutoff_activated": traj.cutoff_activated,
               "layer_regime": layer_flag}
        return (eps, err), row, layer_flag, diag

    for point, row, layer_flag, diag in _pmap(one_point, list(config.epsilon_list),
                                              config.workers):
        diagnostics = diag
        points.append(point)
        rows.append(row)
        if layer_flag:
            flags.append(f"eps={point[0]}: error dominated by the initial layer")
    slope, intercept, r2, dropped = fit_rate(points)
    return RateReport("convergence", points, slope, intercept, r2,
                      diagnostics={"regime_flags": diagnostics, "dropped_points": dropped},
                      rows=rows, flags=flags)


def _lp_diag(spec, mod, split):
    try:
        L, L_zeta = contraction_constant(
            L_ftilde=mod.L_ftilde, C_A=spec.C_A, L_g=spec.L_g, C_B=spec.C_B,
            M_B=spec.M_B, gamma=spec.gamma, delta=spec.delta, epsilon=spec.epsilon,
            zeta=split.zeta, omegaA=spec.omegaA, lambda0=mod.lambda0,
            N_F=split.N_F, N_S=split.N_S,
        )
    except ConfigurationError:
        L, L_zeta = None, None
    return L, L_zeta


def run_distance(config: ExperimentConfig) -> RateReport:
    """E2: graph distance of the slow to the critical manifold.

    Sweeps zeta when zeta_list has several entries (eps fixed to the last,
    i.e. smallest, epsilon), otherwise sweeps eps at the single zeta.
    """
    K = config.K
    sweep_zeta = len(config.zeta_list) > 1
    points, rows, flags = [], [], []
    diagnostics = {}
    if sweep_zeta:
        eps = config.epsilon_list[-1]
        sweep = [(eps, z) for z in config.zeta_list]
    else:
        zeta = config.zeta_list[0]
        sweep = [(e, zeta) for e in config.epsilon_list]

    def one_point(pair):
        eps, zeta = pair
        par = zeta if sweep_zeta else eps
        spec = config.make_spec(eps)
        zf = zero_field(K)
        mod = build_modified(spec, zf, zf)
        split = build_splitting(zeta, eps, mod.lambda0, spec.omegaA)
        L, L_zeta = _lp_diag(spec, mod, split)
        diag = splitting_record(
            split, L, L_zeta, _regime_or_raise(config, eps, zeta, mod.lambda0,
                                               spec.omegaA, L))
        v0 = project_slow(split, config.make_v0(split.k0))
        try:
            pt = solve_fixed_point(v0, mod, split, tol=config.fixed_point_tol)
        except (DivergenceError, TruncationError) as err:
            row = {"parameter": par, "error": float("nan"), "skipped": True}
            return None, row, f"point (eps={eps}, zeta={zeta}) skipped: {err}", diag
        du, dvf = manifold_distance(pt, mod)
        row = {"parameter": par, "error": du + dvf, "dist_u": du,
               "dist_vF": dvf, "k0": split.k0, "gap": split.gap,
               "iterations": pt.iterations, "residual": pt.residual}
        return (par, du + dvf), row, None, diag

    for point, row, flag, diag in _pmap(one_point, sweep, config.workers):
        diagnostics = diag
        rows.append(row)
        if flag is not None:
            flags.append(flag)
        if point is not None:
            points.append(point)
    exact = all(e <= 100.0 * config.fixed_point_tol for _, e in points)
    if exact:
        return RateReport("distance", points, None, None, None,
                          diagnostics={**diagnostics, "exact": True},
                          rows=rows, flags=flags + ["all distances at solver tolerance"])
    slope, intercept, r2, dropped = fit_rate(points)
    return RateReport("distance", points, slope, intercept, r2,
                      diagnostics={**diagnostics, "exact": False,
                                   "dropped_points": dropped},
                      rows=rows, flags=flags)


def run_attraction(config: ExperimentConfig) -> RateReport:
    """E3: decay z(t) of the deviation from the manifold graph; fits c in
    z ~ C exp(-c t) over the window z > 100 * fixed-point tolerance."""
    K = config.K
    eps = config.epsilon_list[-1]
    zeta = config.zeta_list[0]
    spec = config.make_spec(eps)
    zf = zero_field(K)
    mod = build_modified(spec, zf, zf)
    split = build_splitting(zeta, eps, mod.lambda0, spec.omegaA)
    L, L_zeta = _lp_diag(spec, mod, split)
    regime = _regime_or_raise(config, eps, zeta, mod.lambda0, spec.omegaA, L)
    tol = config.fixed_point_tol
    v0 = project_slow(split, config.make_v0(split.k0))
    base = solve_fixed_point(v0, mod, split, tol=tol)
    off = cosine_field(config.v0_mode, 1.0, K)
    u0 = base.u_at_0 + off * (config.offset / sobolev_norm(off, 2))
    T = config.T if config.T < 1.0 else 15.0 * eps * math.log(10.0)
    dt = config.dt or eps / 5.0
    traj = integrate_full(mod, u0, v0 + base.vF_at_0, T=T, dt=dt)
    stride = max(1, len(traj.states) // 40)
    ts, zs = [], []
    for st in traj.states[::stride]:
        vs = project_slow(split, st.v)
        pt = solve_fixed_point(vs, mod, split, tol=tol)
        z = sobolev_norm(st.u - pt.u_at_0, 2) + sobolev_norm(
            project_fast(split, st.v) - pt.vF_at_0, 2)
        ts.append(st.t)
        zs.append(z)
    ts, zs = np.array(ts), np.array(zs)
    flags = []
    if zs[0] <= 100.0 * tol:
        flags.append("offset too small: z(0) within solver tolerance")
        return RateReport("attraction", [(t, z) for t, z in zip(ts, zs)],
                          None, None, None,
                          diagnostics=splitting_record(split, L, L_zeta, regime),
                          rows=[{"parameter": t, "error": z} for t, z in zip(ts, zs)],
                          flags=flags)
    window = zs > 100.0 * tol
    lt, lz = ts[window], np.log(zs[window])
    A = np.vstack([lt, np.ones_like(lt)]).T
    coef, *_ = np.linalg.lstsq(A, lz, rcond=None)
    pred = A @ coef
    ss_tot = float(np.sum((lz - np.mean(lz)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum((lz - pred) ** 2)) / ss_tot
    c_fit = -float(coef[0])
    C_fit = float(np.exp(coef[1]))
    diag = splitting_record(split, L, L_zeta, regime)
    diag.update({"fitted_c": c_fit, "fitted_C": C_fit,
                 "decay_factor": float(zs[0] / zs[window][-1])})
    return RateReport("attraction", [(t, z) for t, z in zip(ts, zs)],
                      -c_fit, math.log(C_fit), r2, diagnostics=diag,
                      rows=[{"parameter": t, "error": z} for t, z in zip(ts, zs)],
                      flags=flags)


def run_reduced_flow(config: ExperimentConfig) -> RateReport:
    """E4: ||v0(t) - v0_zeta(t)||_H2 at t_eval across zeta, with a fast tail
    cos((k0+1)x) added to the initial data."""
    K = config.K
    eps = config.epsilon_list[-1]
    graph = CriticalGraph(newton_tol=config.newton_tol)
    points, rows, flags = [], [], []
    diagnostics = {}

    def one_point(zeta):
        spec = config.make_spec(eps)
        zf = zero_field(K)
        mod = build_modified(spec, zf, zf)
        split = build_splitting(zeta, eps, mod.lambda0, spec.omegaA)
        diag = splitting_record(
            split, None, None,
            _regime_or_raise(config, eps, zeta, mod.lambda0, spec.omegaA))
        k_fast = split.k0 + 1
        if k_fast > K:
            return None, None, f"zeta={zeta}: fast mode {k_fast} exceeds grid, skipped", diag
        v0 = project_slow(split, config.make_v0(split.k0)) + cosine_field(
            k_fast, config.fast_amplitude, K)
        dt = config.dt or min(1e-3, config.t_eval / 10.0)
        full = integrate_limit(spec, v0, T=config.t_eval, dt=dt, graph=graph)
        red = integrate_reduced(spec, split, v0, T=config.t_eval, dt=dt, graph=graph)
        err = sobolev_norm(full.final.v - red.final.v, 2)
        heat_exact = sobolev_norm(
            apply_semigroup(spec.opB, config.t_eval, project_fast(split, v0)), 2)
        row = {"parameter": zeta, "error": err, "k0": split.k0,
               "gap": split.gap, "heat_exact": heat_exact,
               "discarded_mass": red.discarded_mass}
        return (zeta, err), row, None, diag

    for point, row, flag, diag in _pmap(one_point, list(config.zeta_list),
                                        config.workers):
        diagnostics = diag
        if flag is not None:
            flags.append(flag)
        if point is not None:
            points.append(point)
            rows.append(row)
    slope = intercept = r2 = None
    try:
        slope, intercept, r2, _ = fit_rate(points)
    except ConfigurationError:
        flags.append("rate fit skipped (too few positive points)")
    return RateReport("reduced_flow", points, slope, intercept, r2,
                      diagnostics=diagnostics, rows=rows, flags=flags)


def emit_report(report: RateReport, out_dir, config: ExperimentConfig | None = None):
    """CSV (one row per sweep point) plus a JSON sidecar; deterministic bytes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{report.experiment}.csv"
    json_path = out / f"{report.experiment}.json"
    columns = ["parameter", "error"]
    for row in report.rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in report.rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
    payload = {
        "experiment": report.experiment,
        "points": len(report.points),
        "fitted_slope": report.fitted_slope,
        "fitted_intercept": report.fitted_intercept,
        "r_squared": report.r_squared,
        "diagnostics": report.diagnostics,
        "flags": report.flags,
        "config": _config_echo(config),
        "versions": _versions(),
    }
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_fmt) + "\n")
    return csv_path, json_path


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating, np.integer)):
        return repr(float(value))
    return value


def _config_echo(config):
    if config is None:
        return None
    echo = asdict(config)
    echo["epsilon_list"] = list(config.epsilon_list)
    echo["zeta_list"] = list(config.zeta_list)
    echo["v0_band"] = list(config.v0_band)
    return echo


def _versions():
    import scipy

    return {"frsm": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


RUNNERS = {
    "converge": run_convergence,
    "distance": run_distance,
    "attract": run_attraction,
    "reduced": run_reduced_flow,
}
