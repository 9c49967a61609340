"""Critical-manifold graph u = h0(v): pointwise Newton and closed forms.

The zero set {f(u, v) = 0} of a pointwise rule is solved grid point by grid
point.  Only the attracting branch (df/du < 0 along the solution) is
accepted; convergence to a repelling branch or Newton failure raises.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NewtonError
from .spectral import (
    SpectralField,
    dealias,
    dealias_cutoff,
    random_band_field,
    sobolev_norm,
    to_physical,
    to_spectral,
)
from .system import SystemSpec

# Closed-form attracting branches for the registered systems.
CLOSED_FORMS = {
    "benchmark": lambda v: -0.5 + np.sqrt(0.25 + v * v),
    "linear_oracle": lambda v: v,
    "linear_decoupled": lambda v: v,
    "planar": lambda v: v * v,
}


@dataclass(frozen=True)
class CriticalGraph:
    """Solver configuration for the graph u = h0(v)."""

    solver: str = "newton"  # "newton" | "closed_form"
    branch_hint: float = 0.0
    newton_tol: float = 1e-12
    newton_max_iter: int = 50


def newton_pointwise(spec: SystemSpec, v_vals: np.ndarray, graph: CriticalGraph) -> np.ndarray:
    """Solve f(u, v) = 0 for u at every grid point on the raw rule."""
    u = np.full_like(np.asarray(v_vals, dtype=np.float64), float(graph.branch_hint))
    tol = 0.01 * graph.newton_tol
    for _ in range(graph.newton_max_iter):
        res = spec.f.raw(u, v_vals)
        dfdu = spec.f.raw_du(u, v_vals)
        if not np.all(np.isfinite(res)) or not np.all(np.isfinite(dfdu)):
            raise NewtonError("implicit function theorem hypothesis violated: Newton diverged")
        if np.any(np.abs(dfdu) < 1e-14):
            raise NewtonError(
                "implicit function theorem hypothesis violated: Dxf vanished along the solve"
            )
        step = res / dfdu
        u = u - step
        if np.max(np.abs(res)) <= tol and np.max(np.abs(step)) <= tol:
            break
    else:
        raise NewtonError(
            f"implicit function theorem hypothesis violated: no convergence in "
            f"{graph.newton_max_iter} iterations"
        )
    if np.max(spec.f.raw_du(u, v_vals)) >= 0.0:
        raise NewtonError(
            "implicit function theorem hypothesis violated: converged to a repelling branch"
        )
    return u


def solve_h0(graph: CriticalGraph, spec: SystemSpec, v: SpectralField) -> SpectralField:
    """Graph value u = h0(v), dealiased; deterministic for identical inputs."""
    v_vals = to_physical(v)
    if graph.solver == "closed_form":
        u_vals = CLOSED_FORMS[spec.name](v_vals)
    else:
        u_vals = newton_pointwise(spec, v_vals, graph)
    return dealias(to_spectral(u_vals, v.domain_dim))


def h0_closed_form(v: SpectralField, system_name: str = "benchmark") -> SpectralField:
    """Closed-form attracting branch, evaluated pointwise and dealiased."""
    fn = CLOSED_FORMS[system_name]
    return dealias(to_spectral(fn(to_physical(v)), v.domain_dim))


def estimate_Lh(
    graph: CriticalGraph,
    spec: SystemSpec,
    radius: float,
    samples: int,
    seed: int,
    max_mode: int = 32,
) -> float:
    """Empirical Lipschitz lower bound of v -> h0(v) in H^2 over the sampled ball."""
    if samples < 2:
        raise ValueError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    best = 0.0
    band = (0, dealias_cutoff(max_mode))
    for _ in range(samples):
        v1 = random_band_field(max_mode, rng, rng.uniform(0.1, 1.0) * radius, band=band)
        dv = random_band_field(max_mode, rng, rng.uniform(0.01, 0.3) * radius, band=band)
        v2 = v1 + dv
        denom = sobolev_norm(dv, 2)
        if denom == 0.0:
            continue
        diff = solve_h0(graph, spec, v1) - solve_h0(graph, spec, v2)
        best = max(best, sobolev_norm(diff, 2) / denom)
    return best
