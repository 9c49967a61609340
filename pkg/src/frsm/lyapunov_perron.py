"""Slow-manifold construction as a fixed point on backward-time trajectories.

For v0 in the slow block, the graph point (u(0), v_F(0)) is the value at
t = 0 of the unique fixed point of the integral operator with rows

    u(t)   = (1/eps) int_{-inf}^t exp((t-s) At/eps) ft(u, v_F, v_S)(s) ds,
    v_F(t) =         int_{-inf}^t exp((t-s) B) P_F g(u, v_F, v_S)(s) ds,
    v_S(t) = exp(t B) v0 + int_0^t exp((t-s) B) P_S g(u, v_F, v_S)(s) ds,

iterated on the node grid of a truncated horizon [-T_back, 0] under the
weighted sup norm  sup_t exp(-eta t) (||u||_H2 + ||v_F||_H2 + ||v_S||_H2).
The improper integrals use exact exponential kernels against piecewise-linear
samples of the integrand, so each segment contributes

    h * [a (phi1(z) - phi2(z)) + b phi2(z)],    z = rate * h,

with a, b the integrand samples at the segment ends.  Truncated tails are
reported and must stay below the fixed-point tolerance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .critical import CriticalGraph, newton_pointwise, solve_h0
from .errors import ConfigurationError, DivergenceError, DomainError, TruncationError
from .integrate import integrate_full, phi1, phi2
from .spectral import SpectralField, _dealias_mask, ksq_grid, sobolev_norm, wavenumbers
from .splitting import SplittingSpec, contraction_constant, project_fast, project_slow
from .system import ModifiedSystem


def compute_eta(zeta: float, epsilon: float, omegaA: float, lambda0: float,
                N_F: float, N_S: float) -> float:
    """Weight exponent eta = (eps*omegaA + lambda0)/zeta + (N_S + N_F)/2.

    Must sit strictly between the fast and slow decay bands
    rate + N_F < eta < rate + N_S; a violation means the splitting
    constants are inconsistent.
    """
    rate = (epsilon * omegaA + lambda0) / zeta
    eta = rate + 0.5 * (N_S + N_F)
    if not rate + N_F < eta < rate + N_S:
        raise ConfigurationError(
            f"splitting inconsistent: eta = {eta} outside ({rate + N_F}, {rate + N_S})"
        )
    return eta


@dataclass(frozen=True)
class WeightedTrajectory:
    """Backward-horizon trajectory sampled on ascending nodes with t[-1] = 0.

    Component coefficients are stored as [node, mode] complex arrays in FFT
    order; v_F and v_S have disjoint mode supports.
    """

    times: np.ndarray
    u: np.ndarray
    vF: np.ndarray
    vS: np.ndarray
    eta: float
    grid_size: int

    def node_norms(self, coeffs: np.ndarray) -> np.ndarray:
        w = (1.0 + ksq_grid(self.grid_size, 1)) ** 2
        return np.sqrt(np.sum(w[None, :] * np.abs(coeffs) ** 2, axis=1))


def weighted_norm(traj: WeightedTrajectory) -> float:
    """sup over nodes of exp(-eta t) (||u|| + ||v_F|| + ||v_S||) in H^2."""
    total = traj.node_norms(traj.u) + traj.node_norms(traj.vF) + traj.node_norms(traj.vS)
    return float(np.max(np.exp(-traj.eta * traj.times) * total))


@dataclass(frozen=True)
class SlowManifoldPoint:
    v0: SpectralField
    u_at_0: SpectralField
    vF_at_0: SpectralField
    residual: float
    iterations: int
    truncation_bound: float
    converged: bool
    eta: float
    contraction: float | None
    increments: tuple

    def to_record(self) -> dict:
        from .spectral import field_to_record

        return {
            "v0": field_to_record(self.v0),
            "u": field_to_record(self.u_at_0),
            "vF": field_to_record(self.vF_at_0),
            "residual": self.residual,
            "iterations": self.iterations,
            "truncation_bound": self.truncation_bound,
            "converged": self.converged,
        }


def _scan_forward(rates: np.ndarray, h: float, values: np.ndarray) -> np.ndarray:
    """I_j = e^{z} I_{j-1} + h (w0 a_{j-1} + w1 a_j), I_0 = 0, per mode column."""
    z = rates * h
    w0 = phi1(z) - phi2(z)
    w1 = phi2(z)
    alpha = np.exp(z)
    out = np.empty_like(values)
    x = np.empty(values.shape[0], dtype=np.complex128)
    for m in range(values.shape[1]):
        x[0] = 0.0
        x[1:] = h * (w0[m] * values[:-1, m] + w1[m] * values[1:, m])
        out[:, m] = lfilter([1.0], [1.0, -alpha[m]], x)
    return out


def _scan_backward(rates: np.ndarray, h: float, values: np.ndarray) -> np.ndarray:
    """Q_j = int_0^{t_j} e^{(t_j - s) rate} a(s) ds on t_j <= 0, Q_last = 0."""
    z = rates * h
    w0 = phi1(z) - phi2(z)
    w1 = phi2(z)
    alpha = np.exp(-z)
    out = np.empty_like(values)
    n = values.shape[0]
    x = np.empty(n, dtype=np.complex128)
    for m in range(values.shape[1]):
        rev = values[::-1, m]
        x[0] = 0.0
        x[1:] = -alpha[m] * h * (w0[m] * rev[:-1] + w1[m] * rev[1:])
        out[:, m] = lfilter([1.0], [1.0, -alpha[m]], x)[::-1]
    return out


def _batch_h2_norms(coeffs: np.ndarray, grid_size: int) -> np.ndarray:
    w = (1.0 + ksq_grid(grid_size, 1)) ** 2
    return np.sqrt(np.sum(w[None, :] * np.abs(coeffs) ** 2, axis=1))


def _ipow(a, i: int):
    if i == 0:
        return None
    out = a
    for _ in range(i - 1):
        out = out * a
    return out


def _batch_rule(fn, u_vals, v_vals, chi_u, chi_v):
    out = np.zeros_like(u_vals)
    for c, i, j in fn.terms:
        if i > 0 and j > 0:
            w = np.minimum(chi_u, chi_v)
        elif i > 0:
            w = chi_u
        elif j > 0:
            w = chi_v
        else:
            continue
        up, vp = _ipow(u_vals, i), _ipow(v_vals, j)
        term = up if vp is None else (vp if up is None else up * vp)
        out += (w * c)[:, None] * term
    return out


def _batch_nonlinearities(modsys: ModifiedSystem, traj: WeightedTrajectory):
    """f-tilde and g coefficients at every node, dealiased ([node, mode])."""
    from scipy import fft as sfft

    from .system import smooth_bump

    spec = modsys.spec
    n = traj.grid_size
    v_coeffs = traj.vF + traj.vS
    u_vals = np.real(sfft.ifft(traj.u, axis=1) * n)
    v_vals = np.real(sfft.ifft(v_coeffs, axis=1) * n)
    if spec.f.cutoff_enabled or spec.g.cutoff_enabled:
        nu = _batch_h2_norms(traj.u, n)
        nv = _batch_h2_norms(v_coeffs, n)
        chi_u = smooth_bump(nu / spec.sigma)
        chi_v = smooth_bump(nv / spec.sigma)
    else:
        chi_u = chi_v = np.ones(traj.u.shape[0])
    ones = np.ones(traj.u.shape[0])
    f_vals = _batch_rule(spec.f, u_vals, v_vals,
                         chi_u if spec.f.cutoff_enabled else ones,
                         chi_v if spec.f.cutoff_enabled else ones)
    ft_vals = f_vals - modsys.dxf_values[None, :] * u_vals
    mask = _dealias_mask(n, 1)
    ft_hat = (sfft.fft(ft_vals, axis=1) / n) * mask[None, :]
    if spec.g.is_zero:
        g_hat = np.zeros_like(ft_hat)
    else:
        g_vals = _batch_rule(spec.g, u_vals, v_vals,
                             chi_u if spec.g.cutoff_enabled else ones,
                             chi_v if spec.g.cutoff_enabled else ones)
        g_hat = (sfft.fft(g_vals, axis=1) / n) * mask[None, :]
    return ft_hat, g_hat


def apply_LP_operator(
    traj: WeightedTrajectory,
    v0: SpectralField,
    modsys: ModifiedSystem,
    split: SplittingSpec,
):
    """One application of the fixed-point operator; returns (new, tail bound).

    The u row uses the shifted operator At/eps and ft; the slow row applies
    the backward group on the finite slow block exactly.  The reported bound
    covers both truncated tails at t = 0.
    """
    spec = modsys.spec
    n = traj.grid_size
    eps = spec.epsilon
    h = float(traj.times[1] - traj.times[0])
    t_back = -float(traj.times[0])

    slow = np.abs(wavenumbers(n)) <= split.k0
    fast = ~slow
    mB = spec.opB.symbol_on_grid(n, 1)
    theta_u = modsys.tilde_symbol(n, 1) / eps

    ft_hat, g_hat = _batch_nonlinearities(modsys, traj)

    u_new = _scan_forward(theta_u, h, ft_hat) / eps

    vF_new = np.zeros_like(traj.vF)
    if not spec.g.is_zero:
        vF_new[:, fast] = _scan_forward(mB[fast], h, g_hat[:, fast])

    if np.max(np.abs(mB[slow])) * t_back > 600.0:
        raise DomainError("backward horizon too long for the slow block (overflow)")
    vS_new = np.zeros_like(traj.vS)
    boundary = np.exp(np.outer(traj.times, mB[slow])) * v0.coeffs[slow][None, :]
    vS_new[:, slow] = boundary
    if not spec.g.is_zero:
        vS_new[:, slow] += _scan_backward(mB[slow], h, g_hat[:, slow])

    rate_u = abs(eps * spec.omegaA + modsys.lambda0) / eps
    tail_u = math.exp(-rate_u * t_back) / max(rate_u * eps, 1e-300) * float(
        np.max(_batch_h2_norms(ft_hat, n))
    )
    fast_rate = (split.k0 + 1) ** 2
    g_fast = np.where(fast[None, :], g_hat, 0.0)
    tail_f = math.exp(-fast_rate * t_back) / fast_rate * float(
        np.max(_batch_h2_norms(g_fast, n))
    )
    new = WeightedTrajectory(
        times=traj.times, u=u_new, vF=vF_new, vS=vS_new, eta=traj.eta, grid_size=n
    )
    return new, tail_u + tail_f


def default_horizon(modsys: ModifiedSystem, tol: float) -> float:
    """Horizon with exp(-fast_rate * T_back) <= 0.01 * tol, fast rate
    |eps*omega_A + lambda0| / eps."""
    rate = abs(modsys.epsilon * modsys.spec.omegaA + modsys.lambda0) / modsys.epsilon
    return math.log(100.0 / tol) / rate


def extended_horizon(modsys: ModifiedSystem, split: SplittingSpec, tol: float) -> float:
    """Horizon covering also the fast slow-variable row, whose kernel decays
    only at rate (k0+1)^2; needed when g feeds the fast modes materially."""
    return max(default_horizon(modsys, tol),
               math.log(100.0 / tol) / (split.k0 + 1) ** 2)


def default_node_spacing(modsys: ModifiedSystem, split: SplittingSpec, t_back: float,
                         tol: float) -> float:
    """Node spacing: min(eps/5, T_back/200) tightened by a quadrature cap.

    Piecewise-linear sampling of integrands varying at slow-block rates needs
    the per-segment error (h * rate)^2 / 8 at the tolerance; kernel damping
    keeps the accumulated error an order of magnitude below that (calibrated
    against the linear-system mode oracle).
    """
    rate = split.k0**2 + 2.0
    h_quad = math.sqrt(8.0 * tol) / rate
    h = min(modsys.epsilon / 5.0, t_back / 200.0, h_quad)
    max_nodes = 120_000
    if t_back / h > max_nodes:
        h = t_back / max_nodes
    return h


def seed_trajectory(
    v0: SpectralField,
    modsys: ModifiedSystem,
    split: SplittingSpec,
    eta: float,
    t_back: float,
    dt: float,
    graph: CriticalGraph | None = None,
) -> WeightedTrajectory:
    """Seed: v_S from the backward slow group, u on the critical graph, v_F = 0."""
    spec = modsys.spec
    n = v0.grid_size
    n_nodes = max(2, int(math.ceil(t_back / dt))) + 1
    times = np.linspace(-t_back, 0.0, n_nodes)
    slow = np.abs(wavenumbers(n)) <= split.k0
    mB = spec.opB.symbol_on_grid(n, 1)
    if np.max(np.abs(mB[slow])) * t_back > 600.0:
        raise DomainError("backward horizon too long for the slow block (overflow)")
    vS = np.zeros((n_nodes, n), dtype=np.complex128)
    vS[:, slow] = np.exp(np.outer(times, mB[slow])) * v0.coeffs[slow][None, :]
    graph = graph or CriticalGraph()
    v_vals = np.real(np.fft.ifft(vS, axis=1) * n)
    u_vals = newton_pointwise(spec, v_vals, graph)
    mask = _dealias_mask(n, 1)
    u = (np.fft.fft(u_vals, axis=1) / n) * mask[None, :]
    return WeightedTrajectory(
        times=times, u=u, vF=np.zeros_like(vS), vS=vS, eta=eta, grid_size=n
    )


def solve_fixed_point(
    v0: SpectralField,
    modsys: ModifiedSystem,
    split: SplittingSpec,
    tol: float = 1e-8,
    max_iter: int = 60,
    t_back: float | None = None,
    dt: float | None = None,
    graph: CriticalGraph | None = None,
) -> SlowManifoldPoint:
    """Picard iteration to the fixed point; returns the graph value at t = 0.

    The contraction diagnostic is advisory: when it fails the iteration still
    runs under a divergence guard (three consecutive growing increments).
    """
    spec = modsys.spec
    if sobolev_norm(project_fast(split, v0), 2) > 1e-12 * max(1.0, sobolev_norm(v0, 2)):
        raise ConfigurationError("v0 must be supported on the slow modes")
    eta = compute_eta(split.zeta, spec.epsilon, spec.omegaA, modsys.lambda0,
                      split.N_F, split.N_S)
    contraction = None
    try:
        contraction, _ = contraction_constant(
            L_ftilde=modsys.L_ftilde, C_A=spec.C_A, L_g=spec.L_g, C_B=spec.C_B,
            M_B=spec.M_B, gamma=spec.gamma, delta=spec.delta, epsilon=spec.epsilon,
            zeta=split.zeta, omegaA=spec.omegaA, lambda0=modsys.lambda0,
            N_F=split.N_F, N_S=split.N_S,
        )
        if contraction >= 1.0:
            warnings.warn(f"no contraction at these parameters (L = {contraction:.3g}); "
                          "iterating with divergence guard")
    except ConfigurationError:
        pass

    horizons = [t_back] if t_back is not None else [default_horizon(modsys, tol)]
    if t_back is None and not spec.g.is_zero:
        ext = extended_horizon(modsys, split, tol)
        if ext > horizons[0] * 1.01:
            horizons.append(ext)  # retry only if the short-horizon tail fails

    last_err = None
    for attempt, horizon in enumerate(horizons):
        h = dt if dt is not None else default_node_spacing(modsys, split, horizon, tol)
        try:
            return _picard(v0, modsys, split, eta, contraction, tol, max_iter,
                           horizon, h, graph)
        except TruncationError as err:
            last_err = err
            if attempt + 1 == len(horizons):
                raise
    raise last_err


def _picard(v0, modsys, split, eta, contraction, tol, max_iter, t_back, dt, graph):
    traj = seed_trajectory(v0, modsys, split, eta, t_back, dt, graph)
    increments = []
    grow_streak = 0
    bound = 0.0
    for it in range(1, max_iter + 1):
        new, bound = apply_LP_operator(traj, v0, modsys, split)
        diff = WeightedTrajectory(
            times=traj.times, u=new.u - traj.u, vF=new.vF - traj.vF,
            vS=new.vS - traj.vS, eta=eta, grid_size=traj.grid_size,
        )
        inc = weighted_norm(diff)
        increments.append(inc)
        traj = new
        if inc <= tol:
            if bound > tol:
                raise TruncationError(
                    f"T_back too short: truncated tail {bound:.3e} exceeds tol {tol:.1e}"
                )
            u0 = SpectralField(traj.u[-1], traj.grid_size, 1)
            vf0 = SpectralField(traj.vF[-1], traj.grid_size, 1)
            return SlowManifoldPoint(
                v0=v0, u_at_0=u0, vF_at_0=vf0, residual=inc, iterations=it,
                truncation_bound=bound, converged=True, eta=eta,
                contraction=contraction, increments=tuple(increments),
            )
        if len(increments) >= 2 and inc > increments[-2]:
            grow_streak += 1
            if grow_streak >= 3:
                raise DivergenceError(
                    f"weighted-norm increments grew 3 times in a row at iteration {it}",
                    history=increments,
                )
        else:
            grow_streak = 0
    raise DivergenceError(
        f"no convergence to tol {tol:.1e} in {max_iter} iterations "
        f"(last increment {increments[-1]:.3e})",
        history=increments,
    )


def manifold_distance(point: SlowManifoldPoint, modsys: ModifiedSystem,
                      graph: CriticalGraph | None = None):
    """(||u(0) - h0(v0)||_H2, ||v_F(0)||_H2): graph distance to the critical set."""
    graph = graph or CriticalGraph()
    h0 = solve_h0(graph, modsys.spec, point.v0)
    dist_u = sobolev_norm(point.u_at_0 - h0, 2)
    dist_vf = sobolev_norm(point.vF_at_0, 2)
    return dist_u, dist_vf


def invariance_residual(
    point: SlowManifoldPoint,
    modsys: ModifiedSystem,
    split: SplittingSpec,
    T_fwd: float,
    dt: float | None = None,
    n_checks: int = 8,
    tol: float = 1e-8,
    lp_kwargs: dict | None = None,
) -> float:
    """Max deviation of the forward flow from the recomputed manifold graph.

    Integrates the full system from (u(0), v0 + v_F(0)) and, at each check
    time, compares (u(t), P_F v(t)) against the manifold point over P_S v(t).
    """
    lp_kwargs = dict(lp_kwargs or {})
    lp_kwargs.setdefault("tol", tol)
    start_v = point.v0 + point.vF_at_0
    traj = integrate_full(modsys, point.u_at_0, start_v, T_fwd, dt=dt)
    idx = np.unique(np.linspace(0, len(traj.states) - 1, n_checks + 1).astype(int))[1:]
    worst = 0.0
    for i in idx:
        st = traj.states[i]
        v_slow = project_slow(split, st.v)
        v_fast = project_fast(split, st.v)
        pt = solve_fixed_point(v_slow, modsys, split, **lp_kwargs)
        dev = sobolev_norm(st.u - pt.u_at_0, 2) + sobolev_norm(v_fast - pt.vF_at_0, 2)
        worst = max(worst, dev)
    return worst
