"""Time integration: exponential (ETD2RK) stepping, the limit DAE, and the
reduced slow subsystem.

The semilinear form dw/dt = L w + N(w) with diagonal L is advanced by

    a      = exp(h L) w + h*phi1(h L) N(w),
    w_next = a + h*phi2(h L) (N(a) - N(w)),

which applies the stiff linear part exactly per mode and is second order in
the nonlinearity.  For the fast equation L is either A (plain form, needs
dt <= eps/5) or the shifted operator At/eps (exact stiff part, accuracy-only
step constraint).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .critical import CriticalGraph, solve_h0
from .errors import BlowUpError, ConfigurationError, DomainError, NewtonError
from .spectral import SpectralField, sobolev_norm
from .splitting import SplittingSpec, project_fast, project_slow
from .system import ModifiedSystem, SystemSpec, eval_f, eval_g

PHI_TAYLOR_CUT = 1e-4


def phi1(z):
    """(e^z - 1)/z with a 6-term Taylor fallback near z = 0."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    small = np.abs(z) < PHI_TAYLOR_CUT
    zb = z[~small]
    out[~small] = np.expm1(zb) / zb
    zs = z[small]
    out[small] = 1 + zs / 2 + zs**2 / 6 + zs**3 / 24 + zs**4 / 120 + zs**5 / 720
    return out


def phi2(z):
    """(e^z - 1 - z)/z^2 with a 6-term Taylor fallback near z = 0."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    small = np.abs(z) < PHI_TAYLOR_CUT
    zb = z[~small]
    out[~small] = (np.expm1(zb) - zb) / zb**2
    zs = z[small]
    out[small] = 1 / 2 + zs / 6 + zs**2 / 24 + zs**3 / 120 + zs**4 / 720 + zs**5 / 5040
    return out


@dataclass(frozen=True)
class FastSlowState:
    u: SpectralField
    v: SpectralField
    t: float

    def __post_init__(self):
        if not self.u.same_grid(self.v):
            raise ConfigurationError("u and v live on different grids")


@dataclass(frozen=True)
class Trajectory:
    states: tuple
    dt: float
    scheme_order: int = 2
    cutoff_activated: bool = False
    discarded_mass: float = 0.0

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    @property
    def final(self) -> FastSlowState:
        return self.states[-1]


class _Stepper:
    """ETD2RK stepping on raw coefficient arrays; symbols and dealias mask
    precomputed once per (system, grid, dt)."""

    def __init__(self, system, grid_size: int, domain_dim: int, dt: float):
        from .spectral import _dealias_mask, ksq_grid

        if dt <= 0:
            raise ConfigurationError("dt must be positive")
        if isinstance(system, ModifiedSystem):
            self.spec = system.spec
            lin_u = system.tilde_symbol(grid_size, domain_dim) / self.spec.epsilon
            self.modified = True
            self.dxf_values = system.dxf_values
        elif isinstance(system, SystemSpec):
            self.spec = system
            lin_u = system.opA.symbol_on_grid(grid_size, domain_dim)
            self.modified = False
            self.dxf_values = None
        else:
            raise ConfigurationError(f"unsupported system handle {type(system)!r}")
        lin_v = self.spec.opB.symbol_on_grid(grid_size, domain_dim)
        self.dt = dt
        self.n = grid_size
        self.dim = domain_dim
        self.size = grid_size**domain_dim
        self.eu, self.ev = np.exp(dt * lin_u), np.exp(dt * lin_v)
        self.p1u, self.p1v = dt * phi1(dt * lin_u), dt * phi1(dt * lin_v)
        self.p2u, self.p2v = dt * phi2(dt * lin_u), dt * phi2(dt * lin_v)
        self.mask = _dealias_mask(grid_size, domain_dim)
        self.w2 = (1.0 + ksq_grid(grid_size, domain_dim)) ** 2
        self.g_zero = self.spec.g.is_zero
        self.inv_eps = 1.0 / self.spec.epsilon
        self.needs_chi = self.spec.f.cutoff_enabled or (
            not self.g_zero and self.spec.g.cutoff_enabled
        )
        if domain_dim == 1 and grid_size <= 129:
            # dense DFT beats FFT call overhead on tiny grids
            jk = np.outer(np.arange(grid_size), np.arange(grid_size))
            E = np.exp(2j * np.pi * jk / grid_size)
            F = np.conj(E) / grid_size
            self._synth = lambda c: np.real(E @ c)  # values * size already folded
            self._analyze = lambda v: F @ v  # = fft(v)/size
        elif domain_dim == 1:
            self._synth = lambda c: np.real(np.fft.ifft(c) * self.size)
            self._analyze = lambda v: np.fft.fft(v) / self.size
        else:
            self._synth = lambda c: np.real(np.fft.ifftn(c) * self.size)
            self._analyze = lambda v: np.fft.fftn(v) / self.size

    def _h2(self, coeffs):
        a = coeffs.real**2 + coeffs.imag**2
        return float(np.sqrt(np.sum(self.w2 * a)))

    @staticmethod
    def _bump(r: float) -> float:
        if r <= 1.0:
            return 1.0
        if r >= 2.0:
            return 0.0
        s = r - 1.0
        return float(np.exp(1.0 - 1.0 / (1.0 - s * s)))

    def _nonlin(self, u_hat, v_hat):
        """(f-part/eps, g-part) as dealiased coefficient arrays."""
        spec = self.spec
        u_vals = self._synth(u_hat)
        v_vals = self._synth(v_hat)
        if self.needs_chi:
            chi_u = self._bump(self._h2(u_hat) / spec.sigma)
            chi_v = self._bump(self._h2(v_hat) / spec.sigma)
        else:
            chi_u = chi_v = 1.0
        fv = spec.f.scaled_values(
            u_vals, v_vals,
            chi_u if spec.f.cutoff_enabled else 1.0,
            chi_v if spec.f.cutoff_enabled else 1.0,
        )
        if self.modified:
            fv = fv - self.dxf_values * u_vals
        nu = self._analyze(fv) * self.mask * self.inv_eps
        if self.g_zero:
            nv = 0.0
        else:
            gv = spec.g.scaled_values(
                u_vals, v_vals,
                chi_u if spec.g.cutoff_enabled else 1.0,
                chi_v if spec.g.cutoff_enabled else 1.0,
            )
            nv = self._analyze(gv) * self.mask
        return nu, nv

    def advance(self, u_hat, v_hat):
        # inf/nan from a blowing-up state is detected by the caller
        with np.errstate(over="ignore", invalid="ignore"):
            nu, nv = self._nonlin(u_hat, v_hat)
            au = self.eu * u_hat + self.p1u * nu
            av = self.ev * v_hat + self.p1v * nv
            nau, nav = self._nonlin(au, av)
            u_next = au + self.p2u * (nau - nu)
            v_next = av + self.p2v * (nav - nv)
        return u_next, v_next


def step_full(system, state: FastSlowState, dt: float) -> FastSlowState:
    """One ETD2RK step of the coupled fast-slow system."""
    u, v = state.u, state.v
    stepper = _Stepper(system, u.grid_size, u.domain_dim, dt)
    u_next, v_next = stepper.advance(u.coeffs, v.coeffs)
    if not (np.all(np.isfinite(u_next)) and np.all(np.isfinite(v_next))):
        raise BlowUpError(f"non-finite state after step at t = {state.t}", last_state=state)
    return FastSlowState(u=u.with_coeffs(u_next), v=v.with_coeffs(v_next), t=state.t + dt)


def default_dt(system, T: float) -> float:
    if isinstance(system, ModifiedSystem):
        return min(1e-3, T / 4)
    return min(1e-3, system.epsilon / 5.0, T / 4)


def integrate_full(system, u0: SpectralField, v0: SpectralField, T: float,
                   dt: float | None = None, store_stride: int = 1) -> Trajectory:
    """Trajectory of the full system on [0, T] with a uniform step.

    The plain (unshifted) form requires dt <= eps/5; the shifted form has no
    stability constraint.  The cutoff flag is set if any stored state leaves
    the H^2 ball of radius sigma.  ``store_stride`` keeps every k-th state
    (the final state is always kept).
    """
    if T <= 0:
        raise ConfigurationError("horizon T must be positive")
    spec = system.spec if isinstance(system, ModifiedSystem) else system
    if dt is None:
        dt = default_dt(system, T)
    if not isinstance(system, ModifiedSystem) and dt > spec.epsilon / 5.0 + 1e-15:
        raise ConfigurationError(
            f"plain form needs dt <= eps/5 = {spec.epsilon / 5.0:.3g}, got {dt}"
        )
    n_steps = max(1, int(np.ceil(T / dt - 1e-9)))
    h = T / n_steps
    stepper = _Stepper(system, u0.grid_size, u0.domain_dim, h)
    u_hat, v_hat = u0.coeffs, v0.coeffs
    states = [FastSlowState(u=u0, v=v0, t=0.0)]
    cutoff_hit = False
    for i in range(n_steps):
        u_hat, v_hat = stepper.advance(u_hat, v_hat)
        if not (np.isfinite(u_hat[0]) and np.all(np.isfinite(u_hat))
                and np.all(np.isfinite(v_hat))):
            raise BlowUpError(f"non-finite state after step at t = {(i + 1) * h}",
                              last_state=states[-1])
        if (i + 1) % store_stride == 0 or i + 1 == n_steps:
            t = (i + 1) * h
            states.append(FastSlowState(u=u0.with_coeffs(u_hat),
                                        v=v0.with_coeffs(v_hat), t=t))
            if max(stepper._h2(u_hat), stepper._h2(v_hat)) > spec.sigma:
                cutoff_hit = True
    return Trajectory(states=tuple(states), dt=h, cutoff_activated=cutoff_hit)


def integrate_limit(spec: SystemSpec, v0: SpectralField, T: float, dt: float | None = None,
                    graph: CriticalGraph | None = None) -> Trajectory:
    """Limit system: dv/dt = B v + g(h0(v), v) with u pinned to the graph.

    Aborts with the partial trajectory if the pointwise graph solve fails
    (final-time guard).
    """
    if T <= 0:
        raise ConfigurationError("horizon T must be positive")
    graph = graph or CriticalGraph()
    if dt is None:
        dt = min(1e-3, T / 4)
    n_steps = max(1, int(np.ceil(T / dt - 1e-9)))
    h = T / n_steps
    lin_v = spec.opB.symbol_on_grid(v0.grid_size, v0.domain_dim)
    ev, p1v, p2v = np.exp(h * lin_v), phi1(h * lin_v), phi2(h * lin_v)

    def g_on_graph(v):
        u = solve_h0(graph, spec, v)
        return u, eval_g(spec, u, v)

    states = []
    v, t = v0, 0.0
    try:
        u, gv = g_on_graph(v0)
        states.append(FastSlowState(u=u, v=v0, t=0.0))
        for _ in range(n_steps):
            av = v.with_coeffs(ev * v.coeffs + h * p1v * gv.coeffs)
            _, gav = g_on_graph(av)
            v = av.with_coeffs(av.coeffs + h * p2v * (gav.coeffs - gv.coeffs))
            t += h
            u, gv = g_on_graph(v)
            states.append(FastSlowState(u=u, v=v, t=t))
    except NewtonError as err:
        raise NewtonError(
            f"final time reached at t = {t:.6g}: {err}",
            partial=Trajectory(states=tuple(states), dt=h),
        ) from err
    return Trajectory(states=tuple(states), dt=h)


def integrate_reduced(spec: SystemSpec, split: SplittingSpec, v0: SpectralField, T: float,
                      dt: float | None = None, graph: CriticalGraph | None = None) -> Trajectory:
    """Reduced slow subsystem: state confined to the slow modes, g projected.

    v0 is projected onto the slow block; the discarded fast H^2 mass is
    recorded on the trajectory.  Invariance of the slow span is exact by
    construction (diagonal B plus projected forcing).
    """
    v0_slow = project_slow(split, v0)
    discarded = sobolev_norm(project_fast(split, v0), 2)
    graph = graph or CriticalGraph()
    if dt is None:
        dt = min(1e-3, T / 4)
    n_steps = max(1, int(np.ceil(T / dt - 1e-9)))
    h = T / n_steps
    lin_v = spec.opB.symbol_on_grid(v0.grid_size, v0.domain_dim)
    ev, p1v, p2v = np.exp(h * lin_v), phi1(h * lin_v), phi2(h * lin_v)

    def g_slow(v):
        u = solve_h0(graph, spec, v)
        return u, project_slow(split, eval_g(spec, u, v))

    u, gv = g_slow(v0_slow)
    states = [FastSlowState(u=u, v=v0_slow, t=0.0)]
    v, t = v0_slow, 0.0
    for _ in range(n_steps):
        av = v.with_coeffs(ev * v.coeffs + h * p1v * gv.coeffs)
        av = project_slow(split, av)
        _, gav = g_slow(av)
        v = av.with_coeffs(av.coeffs + h * p2v * (gav.coeffs - gv.coeffs))
        v = project_slow(split, v)
        t += h
        u, gv = g_slow(v)
        states.append(FastSlowState(u=u, v=v, t=t))
    return Trajectory(states=tuple(states), dt=h, discarded_mass=discarded)


def ode_closed_form(k: float, epsilon: float, c1: float, c2: float, t: float):
    """Explicit planar solution (u(t), v(t)) of the two-variable model

        du/dt = -k^2 u + (v^2 - u)/eps,   dv/dt = -v:

        u(t) = c1*exp(-t(k^2 + 1/eps)) + c2^2*exp(-2t) / ((k^2 + 1/eps - 2)*eps),
        v(t) = c2*exp(-t).
    """
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    denom = (-2.0 + k * k + 1.0 / epsilon) * epsilon
    if abs(denom) < 1e-12:
        raise DomainError("resonant denominator: -2 + k^2 + 1/eps = 0")
    u = c1 * np.exp(-t * (k * k + 1.0 / epsilon)) + c2 * c2 * np.exp(-2.0 * t) / denom
    v = c2 * np.exp(-t)
    return float(u), float(v)


def export_trajectory_csv(traj: Trajectory, spec: SystemSpec, path,
                          graph: CriticalGraph | None = None, stride: int = 1) -> None:
    """CSV columns: t, ||u||_H2, ||v||_H2, ||f(u,v)||_H2, ||u - h0(v)||_H2."""
    import csv

    graph = graph or CriticalGraph()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "u_h2", "v_h2", "f_residual_h2", "dist_to_critical_h2"])
        for st in traj.states[::stride]:
            res = sobolev_norm(eval_f(spec, st.u, st.v), 2)
            dist = sobolev_norm(st.u - solve_h0(graph, spec, st.v), 2)
            w.writerow([repr(st.t), repr(sobolev_norm(st.u, 2)), repr(sobolev_norm(st.v, 2)),
                        repr(res), repr(dist)])
