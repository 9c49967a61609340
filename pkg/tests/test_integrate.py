import numpy as np
import pytest

from frsm.critical import CriticalGraph, h0_closed_form, solve_h0
from frsm.errors import BlowUpError, ConfigurationError, DomainError
from frsm.integrate import (
    FastSlowState,
    integrate_full,
    integrate_limit,
    integrate_reduced,
    ode_closed_form,
    phi1,
    phi2,
    step_full,
)
from frsm.spectral import (
    apply_semigroup,
    constant_field,
    cosine_field,
    laplacian,
    random_band_field,
    sobolev_norm,
    to_physical,
    zero_field,
)
from frsm.splitting import build_splitting, project_fast, project_slow
from frsm.system import build_modified, eval_f, make_system, system_from_table

K = 32


@pytest.fixture(scope="module")
def benchmark_mod():
    spec = make_system("benchmark", epsilon=0.01)
    zf = zero_field(K)
    return spec, build_modified(spec, zf, zf)


def test_phi_functions_agree_across_taylor_cut():
    # both branches evaluated near |z| = 1e-4 must agree to rounding
    for z in (0.99e-4, -0.99e-4, 1.01e-4, -1.01e-4):
        exact1 = np.expm1(z) / z
        exact2 = (np.expm1(z) - z) / z**2
        # the naive reference formula itself carries ~1e-12 cancellation noise
        assert phi1(np.array([z]))[0] == pytest.approx(exact1, abs=1e-12)
        assert phi2(np.array([z]))[0] == pytest.approx(exact2, abs=1e-11)
    assert phi1(np.array([0.0]))[0] == pytest.approx(1.0)
    assert phi2(np.array([0.0]))[0] == pytest.approx(0.5)


def test_single_mode_step_matches_closed_form_at_third_order():
    # linear_decoupled, mode 1: u(t) = (u0 - v0) e^{-(1 + 1/eps)t} + v0 e^{-t}
    eps = 0.05
    spec = make_system("linear_decoupled", epsilon=eps)
    zf = zero_field(K)
    mod = build_modified(spec, zf, zf)
    u0, v0 = cosine_field(1, 0.3, K), cosine_field(1, 0.1, K)

    def exact(t):
        rate = 1.0 + 1.0 / eps
        return (0.3 - 0.1) * np.exp(-rate * t) + 0.1 * np.exp(-t)

    errs = []
    for dt in (2e-3, 1e-3):
        out = step_full(mod, FastSlowState(u0, v0, 0.0), dt)
        errs.append(abs(2.0 * out.u.coeffs[1].real - exact(dt)))
    ratio = errs[0] / errs[1]
    assert 6.0 < ratio < 10.0  # local truncation error O(dt^3)


def test_pure_linear_flow_equals_semigroup():
    # empty nonlinearities: one step must reproduce the exact semigroups
    table = {"name": "linear_only", "f": [], "g": [], "cutoff": False}
    spec = system_from_table(table, epsilon=0.1)
    rng = np.random.default_rng(2)
    u0 = random_band_field(K, rng, 0.3)
    v0 = random_band_field(K, rng, 0.2)
    out = step_full(spec, FastSlowState(u0, v0, 0.0), dt=0.02)
    lap = laplacian()
    assert np.max(np.abs(out.u.coeffs - apply_semigroup(lap, 0.02, u0).coeffs)) < 1e-15
    assert np.max(np.abs(out.v.coeffs - apply_semigroup(lap, 0.02, v0).coeffs)) < 1e-15


def test_zero_data_stays_zero(benchmark_mod):
    _, mod = benchmark_mod
    traj = integrate_full(mod, zero_field(K), zero_field(K), T=0.1, dt=1e-3)
    assert sobolev_norm(traj.final.u, 2) == 0.0
    assert sobolev_norm(traj.final.v, 2) == 0.0


def test_richardson_self_convergence(benchmark_mod):
    _, mod = benchmark_mod
    v0 = cosine_field(1, 0.2, K)
    u0 = h0_closed_form(v0, "benchmark") + cosine_field(1, 0.02, K)

    def diff(dt):
        a = integrate_full(mod, u0, v0, T=0.5, dt=dt, store_stride=10**9)
        b = integrate_full(mod, u0, v0, T=0.5, dt=dt / 2, store_stride=10**9)
        return sobolev_norm(a.final.u - b.final.u, 2) + sobolev_norm(
            a.final.v - b.final.v, 2)

    ratio = diff(2e-3) / diff(1e-3)
    assert 3.4 < ratio < 4.6


def test_plain_form_requires_small_dt():
    spec = make_system("benchmark", epsilon=0.01)
    v0 = cosine_field(1, 0.1, K)
    with pytest.raises(ConfigurationError):
        integrate_full(spec, zero_field(K), v0, T=0.1, dt=0.01)  # > eps/5


def test_linear_oracle_stationary_mode():
    # B = Laplacian, g = v: mode 1 has net rate -1 + 1 = 0
    eps = 0.01
    spec = make_system("linear_oracle", epsilon=eps)
    zf = zero_field(K)
    mod = build_modified(spec, zf, zf)
    v0 = cosine_field(1, 0.1, K)
    u0 = v0 * (1.0 / (1.0 + eps))  # on the invariant graph
    traj = integrate_full(mod, u0, v0, T=1.0, dt=1e-3, store_stride=10**9)
    assert sobolev_norm(traj.final.v - v0, 2) < 1e-8


def test_semiflow_property(benchmark_mod):
    _, mod = benchmark_mod
    v0 = cosine_field(1, 0.2, K)
    u0 = h0_closed_form(v0, "benchmark") + cosine_field(2, 0.03, K)
    dt = 1e-3
    one = integrate_full(mod, u0, v0, T=0.4, dt=dt, store_stride=10**9)
    first = integrate_full(mod, u0, v0, T=0.2, dt=dt, store_stride=10**9)
    second = integrate_full(mod, first.final.u, first.final.v, T=0.2, dt=dt,
                            store_stride=10**9)
    gap = sobolev_norm(one.final.u - second.final.u, 2) + sobolev_norm(
        one.final.v - second.final.v, 2)
    a = integrate_full(mod, u0, v0, T=0.4, dt=dt / 2, store_stride=10**9)
    self_err = sobolev_norm(one.final.u - a.final.u, 2) + sobolev_norm(
        one.final.v - a.final.v, 2)
    assert gap <= 5.0 * max(self_err, 1e-15)


def test_mean_mode_conserved_for_zero_mean_forcing(benchmark_mod):
    # benchmark: g = 0 and B = Laplacian, so the v mean never moves
    _, mod = benchmark_mod
    v0 = cosine_field(0, 0.05, K) + cosine_field(1, 0.1, K)
    u0 = h0_closed_form(v0, "benchmark")
    traj = integrate_full(mod, u0, v0, T=0.5, dt=1e-3, store_stride=100)
    mean0 = traj.states[0].v.coeffs[0]
    for st in traj.states:
        assert abs(st.v.coeffs[0] - mean0) < 1e-12


def test_attraction_to_critical_set():
    # off-manifold starts relax monotonically until only the O(eps) lag is left
    eps = 1e-2
    spec = make_system("benchmark", epsilon=eps)
    zf = zero_field(K)
    mod = build_modified(spec, zf, zf)
    v0 = cosine_field(1, 0.2, K)
    u0 = h0_closed_form(v0, "benchmark") + cosine_field(1, 0.05, K)
    traj = integrate_full(mod, u0, v0, T=0.2, dt=2e-3)
    graph = CriticalGraph()
    dists = np.array([sobolev_norm(st.u - solve_h0(graph, spec, st.v), 2)
                      for st in traj.states])
    floor = 0.2 * eps  # frozen from the reference run (final lag ~ 0.097*eps)
    above = dists[1:] > floor
    assert np.all(np.diff(dists[1:])[above[1:]] < 0.0)
    assert dists[-1] <= floor


def test_f_residual_order_epsilon_on_manifold():
    # ||f(u, v)|| stays O(eps) along on-manifold starts; constant frozen from
    # a reference run (max ratio ~ 1.28)
    for eps in (1e-2, 1e-3):
        spec = make_system("benchmark", epsilon=eps)
        zf = zero_field(K)
        mod = build_modified(spec, zf, zf)
        v0 = cosine_field(1, 0.2, K)
        u0 = h0_closed_form(v0, "benchmark")
        traj = integrate_full(mod, u0, v0, T=1.0, dt=1e-3, store_stride=50)
        worst = max(sobolev_norm(eval_f(spec, st.u, st.v), 2) for st in traj.states)
        assert worst <= 1.5 * eps


def test_blow_up_raises_with_last_state():
    table = {"name": "explode", "f": [[1.0, 0, 2], [-1.0, 1, 0]],
             "g": [[1.0, 0, 2]], "cutoff": False}
    spec = system_from_table(table, epsilon=0.05)
    v0 = constant_field(3.0, K)  # dv/dt = v^2 blows up quickly
    with pytest.raises(BlowUpError) as err:
        integrate_full(spec, zero_field(K), v0, T=2.0, dt=0.01)
    assert err.value.last_state is not None


def test_limit_system_benchmark_is_exact_heat():
    spec = make_system("benchmark", epsilon=0.1)
    v0 = cosine_field(1, 0.2, K)
    traj = integrate_limit(spec, v0, T=1.0, dt=1e-2)
    v_exact = apply_semigroup(laplacian(), 1.0, v0)
    assert sobolev_norm(traj.final.v - v_exact, 2) < 1e-13
    u_exact = h0_closed_form(v_exact, "benchmark")
    assert sobolev_norm(traj.final.u - u_exact, 2) < 5e-12


def test_limit_system_linear_graph_tracks_v():
    spec = make_system("linear_oracle", epsilon=0.1)
    v0 = cosine_field(1, 0.1, K) + cosine_field(3, 0.05, K)
    traj = integrate_limit(spec, v0, T=0.5, dt=1e-3)
    for st in traj.states[:: max(1, len(traj.states) // 8)]:
        assert sobolev_norm(st.u - st.v, 2) < 1e-10


def test_reduced_equals_limit_for_slow_data_when_g_zero():
    spec = make_system("benchmark", epsilon=0.1)
    split = build_splitting(0.1, 1e-3, -1.0)  # k0 = 3
    v0 = cosine_field(1, 0.2, K)
    a = integrate_limit(spec, v0, T=0.5, dt=1e-2)
    b = integrate_reduced(spec, split, v0, T=0.5, dt=1e-2)
    assert sobolev_norm(a.final.v - b.final.v, 2) < 1e-14
    assert b.discarded_mass == 0.0


def test_reduced_discards_fast_modes_and_reports_mass():
    spec = make_system("benchmark", epsilon=0.1)
    split = build_splitting(1.0, 0.0, -5.0)  # k0 = 2
    v0 = cosine_field(1, 0.3, K) + cosine_field(5, 0.1, K)
    traj = integrate_reduced(spec, split, v0, T=0.3, dt=1e-2)
    assert traj.discarded_mass == pytest.approx(sobolev_norm(cosine_field(5, 0.1, K), 2))
    v_exact = apply_semigroup(laplacian(), 0.3, cosine_field(1, 0.3, K))
    assert sobolev_norm(traj.final.v - v_exact, 2) < 1e-13
    for st in traj.states:
        assert sobolev_norm(project_fast(split, st.v), 2) == 0.0


def test_ode_closed_form_values():
    u, v = ode_closed_form(k=1.0, epsilon=0.1, c1=1.0, c2=1.0, t=0.0)
    assert u == pytest.approx(1.0 + 1.0 / 0.9, abs=1e-14)
    assert v == 1.0
    # c2 = 0 collapses to pure fast decay
    u, v = ode_closed_form(k=2.0, epsilon=0.05, c1=0.7, c2=0.0, t=0.3)
    assert u == pytest.approx(0.7 * np.exp(-0.3 * (4.0 + 20.0)), rel=1e-14)
    assert v == 0.0


def test_ode_closed_form_resonance_rejected():
    # -2 + k^2 + 1/eps = 0 at k = 1, eps = 1
    with pytest.raises(DomainError):
        ode_closed_form(k=1.0, epsilon=1.0, c1=1.0, c2=1.0, t=0.1)


def test_ode_quasi_steady_state_at_large_time():
    eps = 1e-3
    u, v = ode_closed_form(k=1.0, epsilon=eps, c1=1.0, c2=1.0, t=3.0)
    assert abs(u - v * v) <= 5.0 * eps


def test_cutoff_activation_flagged():
    spec = make_system("benchmark", epsilon=0.01)
    zf = zero_field(K)
    mod = build_modified(spec, zf, zf)
    v0 = cosine_field(1, 0.2, K)
    u0 = h0_closed_form(v0, "benchmark") + cosine_field(1, 0.4, K)  # outside sigma
    traj = integrate_full(mod, u0, v0, T=0.01, dt=1e-3)
    assert traj.cutoff_activated
