import numpy as np
import pytest

from frsm.critical import h0_closed_form
from frsm.errors import ConfigurationError, TruncationError
from frsm.lyapunov_perron import (
    SlowManifoldPoint,
    WeightedTrajectory,
    apply_LP_operator,
    compute_eta,
    invariance_residual,
    manifold_distance,
    seed_trajectory,
    solve_fixed_point,
    weighted_norm,
)
from frsm.spectral import cosine_field, sobolev_norm, zero_field
from frsm.splitting import build_splitting, project_slow
from frsm.system import build_modified, make_system

K = 32
N = 2 * K + 1

# Frozen reference values (dt = 2.5e-4 forward integration, tol = 1e-10).
GOLDEN_INVARIANCE_DECOUPLED = 1.5437290594755877e-09
GOLDEN_INVARIANCE_BENCHMARK = 5.620398576388346e-10


def _setup(name, eps=1e-3, zeta=0.1):
    spec = make_system(name, epsilon=eps)
    zf = zero_field(K)
    mod = build_modified(spec, zf, zf)
    split = build_splitting(zeta, eps, mod.lambda0, spec.omegaA)
    return spec, mod, split


def test_compute_eta_reference_value():
    # zeta = 0.1, lambda0 = -1: cut k0 = 3, constants (1, 6), midpoint -6.5
    assert compute_eta(0.1, 1e-3, 0.0, -1.0, 1.0, 6.0) == pytest.approx(-6.5)


def test_compute_eta_rejects_collapsed_band():
    with pytest.raises(ConfigurationError):
        compute_eta(0.1, 1e-3, 0.0, -1.0, 3.0, 3.0)


def test_compute_eta_monotone_in_upper_band():
    etas = [compute_eta(0.1, 1e-3, 0.0, -1.0, 1.0, ns) for ns in (4.0, 6.0, 8.0)]
    assert etas[0] < etas[1] < etas[2]


def _traj(times, u, vF, vS, eta):
    return WeightedTrajectory(times=times, u=u, vF=vF, vS=vS, eta=eta, grid_size=N)


def test_weighted_norm_zero_trajectory():
    times = np.linspace(-1.0, 0.0, 11)
    z = np.zeros((11, N), dtype=complex)
    assert weighted_norm(_traj(times, z, z, z, eta=-2.0)) == 0.0


def test_weighted_norm_constant_trajectory_extremes():
    # weight exp(-eta t) on t <= 0 decays into the past for eta < 0 (sup at
    # t = 0) and grows into the past for eta > 0 (sup at t = -T_back)
    times = np.linspace(-1.0, 0.0, 11)
    u = np.zeros((11, N), dtype=complex)
    u[:, 1] = 0.5
    u[:, -1] = 0.5
    z = np.zeros_like(u)
    node_norm = sobolev_norm(cosine_field(1, 1.0, K), 2)
    assert weighted_norm(_traj(times, u, z, z, eta=-2.0)) == pytest.approx(node_norm)
    assert weighted_norm(_traj(times, u, z, z, eta=2.0)) == pytest.approx(
        np.exp(2.0) * node_norm)


def test_weighted_norm_single_node_at_origin():
    times = np.linspace(-1.0, 0.0, 11)
    u = np.zeros((11, N), dtype=complex)
    u[-1, 0] = 0.3
    z = np.zeros_like(u)
    assert weighted_norm(_traj(times, u, z, z, eta=-5.0)) == pytest.approx(
        sobolev_norm(cosine_field(0, 0.3, K), 2))


def test_lp_operator_fixes_origin():
    spec, mod, split = _setup("benchmark")
    eta = compute_eta(split.zeta, spec.epsilon, spec.omegaA, mod.lambda0,
                      split.N_F, split.N_S)
    times = np.linspace(-0.02, 0.0, 101)
    z = np.zeros((101, N), dtype=complex)
    traj = _traj(times, z, z, z, eta)
    out, bound = apply_LP_operator(traj, zero_field(K), mod, split)
    assert weighted_norm(out) == 0.0
    assert bound == 0.0


def test_origin_is_instant_fixed_point():
    spec, mod, split = _setup("benchmark")
    pt = solve_fixed_point(zero_field(K), mod, split, tol=1e-10)
    assert pt.iterations == 1
    assert sobolev_norm(pt.u_at_0, 2) == 0.0
    assert sobolev_norm(pt.vF_at_0, 2) == 0.0


@pytest.mark.parametrize("eps,zeta,tol", [(1e-3, 0.1, 1e-8), (0.1, 0.5, 1e-7)])
def test_linear_oracle_mode_coefficients(eps, zeta, tol):
    # exact invariant graph: u_k = v_k / (1 + eps) on every slow mode
    spec, mod, split = _setup("linear_oracle", eps=eps, zeta=zeta)
    c = np.zeros(N, dtype=complex)
    c[0] = 0.05
    for k in range(1, split.k0 + 1):
        c[k] = c[-k] = 0.02 / k
    v0 = zero_field(K).with_coeffs(c)
    pt = solve_fixed_point(v0, mod, split, tol=tol)
    target = 1.0 / (1.0 + eps)
    for k in range(0, split.k0 + 1):
        ratio = (pt.u_at_0.coeffs[k] / v0.coeffs[k]).real
        assert abs(ratio - target) < 1e-6
    assert sobolev_norm(pt.vF_at_0, 2) < 1e-12


def test_linear_decoupled_graph_is_critical_manifold():
    spec, mod, split = _setup("linear_decoupled")
    v0 = cosine_field(1, 0.05, K) + cosine_field(2, 0.01, K)
    pt = solve_fixed_point(v0, mod, split, tol=1e-10)
    assert sobolev_norm(pt.u_at_0 - v0, 2) < 1e-10
    assert sobolev_norm(pt.vF_at_0, 2) == 0.0
    du, dvf = manifold_distance(pt, mod)
    assert du < 1e-10
    assert dvf == 0.0


def test_benchmark_quadratic_tangency():
    spec, mod, split = _setup("benchmark")
    dists = []
    for amp in (0.05, 0.025):
        pt = solve_fixed_point(cosine_field(1, amp, K), mod, split, tol=1e-10)
        du, _ = manifold_distance(pt, mod)
        dists.append(du)
        assert du <= 0.008 * amp**2  # frozen reference ratio ~ 0.0042
    assert 3.5 < dists[0] / dists[1] < 4.5  # quadratic in the amplitude


def test_manifold_distance_linear_oracle_scaling():
    eps = 0.1
    spec, mod, split = _setup("linear_oracle", eps=eps, zeta=0.5)
    v0 = cosine_field(1, 0.1, K)
    pt = solve_fixed_point(v0, mod, split, tol=1e-7)
    du, dvf = manifold_distance(pt, mod)
    expected = eps / (1.0 + eps) * sobolev_norm(v0, 2)
    assert du == pytest.approx(expected, rel=1e-4)
    assert dvf < 1e-12


def test_picard_increments_contract_within_predicted_rate():
    spec, mod, split = _setup("benchmark")
    pt = solve_fixed_point(cosine_field(1, 0.05, K), mod, split, tol=1e-12,
                           max_iter=40)
    incs = pt.increments
    ratios = [b / a for a, b in zip(incs, incs[1:]) if a > 1e-14]
    assert ratios, "need at least two Picard increments"
    assert max(ratios) <= pt.contraction + 0.1


def test_manifold_map_lipschitz_within_predicted_constant():
    spec, mod, split = _setup("benchmark")
    from frsm.splitting import contraction_constant

    L, L_zeta = contraction_constant(
        L_ftilde=mod.L_ftilde, C_A=spec.C_A, L_g=spec.L_g, C_B=spec.C_B,
        M_B=spec.M_B, gamma=spec.gamma, delta=spec.delta, epsilon=spec.epsilon,
        zeta=split.zeta, omegaA=spec.omegaA, lambda0=mod.lambda0,
        N_F=split.N_F, N_S=split.N_S)
    rng = np.random.default_rng(3)
    worst = 0.0
    base = cosine_field(1, 0.04, K)
    pt0 = solve_fixed_point(base, mod, split, tol=1e-10)
    for _ in range(3):
        delta_amp = rng.uniform(0.005, 0.02)
        other = base + cosine_field(2, delta_amp, K)
        pt1 = solve_fixed_point(other, mod, split, tol=1e-10)
        num = sobolev_norm(pt1.u_at_0 - pt0.u_at_0, 2) + sobolev_norm(
            pt1.vF_at_0 - pt0.vF_at_0, 2)
        worst = max(worst, num / sobolev_norm(other - base, 2))
    assert worst <= 1.1 * L_zeta


def test_directional_difference_quotients_converge():
    # first-order convergence of [h(v0 + t w) - h(v0)] / t as t -> 0
    spec, mod, split = _setup("benchmark")
    v0 = cosine_field(1, 0.05, K)
    w = cosine_field(2, 1.0, K)
    pt0 = solve_fixed_point(v0, mod, split, tol=1e-11)

    def quotient(t):
        pt = solve_fixed_point(v0 + t * w, mod, split, tol=1e-11)
        return (pt.u_at_0 - pt0.u_at_0) * (1.0 / t)

    q1, q2, q4 = quotient(0.02), quotient(0.01), quotient(0.005)
    d12 = sobolev_norm(q1 - q2, 2)
    d24 = sobolev_norm(q2 - q4, 2)
    assert d24 < 0.7 * d12  # consistent with a first-order remainder


def test_rejects_fast_supported_v0():
    spec, mod, split = _setup("benchmark")
    with pytest.raises(ConfigurationError):
        solve_fixed_point(cosine_field(split.k0 + 2, 0.05, K), mod, split)


def test_truncation_guard_raises_on_short_horizon():
    spec, mod, split = _setup("linear_oracle", eps=0.1, zeta=0.5)
    v0 = cosine_field(1, 0.05, K)
    with pytest.raises(TruncationError):
        solve_fixed_point(v0, mod, split, tol=1e-7, t_back=0.05)


def test_invariance_residual_linear_decoupled():
    spec, mod, split = _setup("linear_decoupled")
    v0 = cosine_field(1, 0.05, K) + cosine_field(2, 0.01, K)
    pt = solve_fixed_point(v0, mod, split, tol=1e-10)
    res = invariance_residual(pt, mod, split, T_fwd=1.0, n_checks=6, tol=1e-10,
                              dt=2.5e-4)
    assert res <= 1e-8
    assert res == pytest.approx(GOLDEN_INVARIANCE_DECOUPLED, rel=1e-3)


def test_invariance_residual_benchmark():
    spec, mod, split = _setup("benchmark")
    pt = solve_fixed_point(cosine_field(1, 0.05, K), mod, split, tol=1e-10)
    res = invariance_residual(pt, mod, split, T_fwd=0.5, n_checks=6, tol=1e-10,
                              dt=2.5e-4)
    assert res <= 10.0 * (1e-10 + 1e-9)  # solver tol + integrator error bound
    assert res == pytest.approx(GOLDEN_INVARIANCE_BENCHMARK, rel=1e-3)


def test_invariance_residual_stationary_origin():
    spec, mod, split = _setup("benchmark")
    pt = solve_fixed_point(zero_field(K), mod, split, tol=1e-10)
    assert invariance_residual(pt, mod, split, T_fwd=0.2, n_checks=3,
                               tol=1e-10) == 0.0


def test_seed_trajectory_sits_on_critical_graph():
    spec, mod, split = _setup("benchmark")
    eta = compute_eta(split.zeta, spec.epsilon, spec.omegaA, mod.lambda0,
                      split.N_F, split.N_S)
    v0 = cosine_field(1, 0.05, K)
    traj = seed_trajectory(v0, mod, split, eta, t_back=0.02, dt=1e-3)
    assert traj.times[-1] == 0.0
    assert np.max(np.abs(traj.vF)) == 0.0
    u0 = traj.u[-1]
    expected = h0_closed_form(v0, "benchmark")
    assert sobolev_norm(zero_field(K).with_coeffs(u0) - expected, 2) < 1e-10


def test_point_serialization_round_trip():
    spec, mod, split = _setup("benchmark")
    pt = solve_fixed_point(cosine_field(1, 0.05, K), mod, split, tol=1e-9)
    rec = pt.to_record()
    assert rec["converged"] is True
    assert rec["residual"] <= 1e-9
    assert len(rec["u"]["coeffs"]) == 2 * N
