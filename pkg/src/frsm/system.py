"""Problem definitions: operators, cutoff nonlinearities, and the shifted system.

A fast-reaction problem is

    du/dt = A u + (1/eps) f(u, v),
    dv/dt = B v + g(u, v),

with A, B Fourier multipliers and f, g pointwise polynomial rules with an
optional smooth H^2-ball cutoff.  ``build_modified`` rewrites the fast
equation around a base point (u0, v0) on the zero set of f:

    du/dt = (1/eps) At u + (1/eps) ft(u, v),
    At = eps*A + Dxf(u0, v0),   ft(u, v) = f(u, v) - Dxf(u0, v0) u,

so the dissipative linear part can be applied exactly per mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DomainError, NotAttractingError
from .spectral import (
    MultiplierOperator,
    SpectralField,
    dealias,
    dealias_cutoff,
    laplacian,
    random_band_field,
    scalar_operator,
    sobolev_norm,
    to_physical,
    to_spectral,
    wavenumbers,
    zero_field,
)


def smooth_bump(r):
    """C-infinity bridge: 1 for r <= 1, 0 for r >= 2, exp(1 - 1/(1-(r-1)^2)) between."""
    arr = np.atleast_1d(np.asarray(r, dtype=np.float64))
    out = np.ones_like(arr)
    out[arr >= 2.0] = 0.0
    mid = (arr > 1.0) & (arr < 2.0)
    s = arr[mid] - 1.0
    out[mid] = np.exp(1.0 - 1.0 / (1.0 - s * s))
    if np.asarray(r).ndim == 0:
        return float(out[0])
    return out


@dataclass(frozen=True)
class Nonlinearity:
    """Pointwise polynomial rule sum_j c_j * u^i_j * v^k_j with optional cutoff.

    With the cutoff enabled, pure-u terms are scaled by chi(||u||_H2 / sigma),
    pure-v terms by chi(||v||_H2 / sigma) and mixed terms by the smaller of
    the two, where chi is ``smooth_bump``.  Inside the ball of radius sigma
    the rule is untouched; once both arguments exceed 2*sigma the output is
    identically zero.
    """

    terms: tuple[tuple[float, int, int], ...]
    cutoff_enabled: bool = True

    def __post_init__(self):
        for c, i, j in self.terms:
            if i < 0 or j < 0:
                raise ConfigurationError("polynomial powers must be nonnegative")
            if i == 0 and j == 0 and c != 0.0:
                raise ConfigurationError("constant term violates the zero-at-origin assumption")

    def raw(self, u_vals, v_vals):
        out = np.zeros_like(np.asarray(u_vals, dtype=np.float64))
        for c, i, j in self.terms:
            out = out + c * np.asarray(u_vals) ** i * np.asarray(v_vals) ** j
        return out

    def raw_du(self, u_vals, v_vals):
        out = np.zeros_like(np.asarray(u_vals, dtype=np.float64))
        for c, i, j in self.terms:
            if i >= 1:
                out = out + c * i * np.asarray(u_vals) ** (i - 1) * np.asarray(v_vals) ** j
        return out

    @property
    def is_zero(self) -> bool:
        return all(c == 0.0 for c, _, _ in self.terms)

    def scaled_values(self, u_vals, v_vals, chi_u: float, chi_v: float):
        """Rule values with per-term cutoff factors already folded in."""
        out = np.zeros_like(np.asarray(u_vals, dtype=np.float64))
        for c, i, j in self.terms:
            if i > 0 and j > 0:
                w = min(chi_u, chi_v)
            elif i > 0:
                w = chi_u
            else:
                w = chi_v
            if w == 0.0:
                continue
            out = out + w * c * np.asarray(u_vals) ** i * np.asarray(v_vals) ** j
        return out


def eval_nonlinearity(
    fn: Nonlinearity, u: SpectralField, v: SpectralField, sigma: float
) -> SpectralField:
    """Pointwise evaluation in physical space, transformed back and dealiased."""
    if not u.same_grid(v):
        raise ConfigurationError("u and v live on different grids")
    if fn.is_zero:
        return zero_field(u.max_mode, u.domain_dim)
    u_vals = to_physical(u)
    v_vals = to_physical(v)
    if fn.cutoff_enabled:
        chi_u = float(smooth_bump(sobolev_norm(u, 2) / sigma))
        chi_v = float(smooth_bump(sobolev_norm(v, 2) / sigma))
    else:
        chi_u = chi_v = 1.0
    vals = fn.scaled_values(u_vals, v_vals, chi_u, chi_v)
    return dealias(to_spectral(vals, u.domain_dim))


@dataclass(frozen=True)
class SystemSpec:
    """Full problem definition: operators, nonlinearities and all constants."""

    name: str
    opA: MultiplierOperator
    opB: MultiplierOperator
    f: Nonlinearity
    g: Nonlinearity
    epsilon: float
    gamma: float = 1.0
    delta: float = 1.0
    omegaA: float = 0.0
    omegaB: float = 0.0
    M_A: float = 1.0
    M_B: float = 1.0
    C_A: float = 1.0
    C_B: float = 1.0
    L_f: float = 1.0
    L_g: float = 0.0
    sigma: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigurationError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if not 0.0 < self.gamma <= 1.0 or not 0.0 < self.delta <= 1.0:
            raise ConfigurationError("gamma and delta must be in (0, 1]")
        if self.sigma <= 0:
            raise ConfigurationError("cutoff radius sigma must be positive")
        if self.f.raw(0.0, 0.0) != 0.0 or self.g.raw(0.0, 0.0) != 0.0:
            raise ConfigurationError("nonlinearities must vanish at the origin")

    def with_epsilon(self, epsilon: float) -> "SystemSpec":
        return replace(self, epsilon=epsilon)


def eval_f(spec: SystemSpec, u: SpectralField, v: SpectralField) -> SpectralField:
    return eval_nonlinearity(spec.f, u, v, spec.sigma)


def eval_g(spec: SystemSpec, u: SpectralField, v: SpectralField) -> SpectralField:
    return eval_nonlinearity(spec.g, u, v, spec.sigma)


# Built-in systems.  The quadratic benchmark uses f(u,v) = v^2 - u(u+1): its
# u-derivative is -2u-1 (attracting near u = 0) and the branch of f = 0
# through the origin is u = -1/2 + sqrt(1/4 + v^2).
_BUILTINS = {
    "benchmark": dict(
        f=Nonlinearity(terms=((1.0, 0, 2), (-1.0, 1, 0), (-1.0, 2, 0))),
        g=Nonlinearity(terms=()),
        L_f=1.52,  # frozen empirical estimate at sigma = 0.25 (see tests)
        L_g=0.0,
    ),
    "linear_oracle": dict(
        f=Nonlinearity(terms=((1.0, 0, 1), (-1.0, 1, 0)), cutoff_enabled=False),
        g=Nonlinearity(terms=((1.0, 0, 1),), cutoff_enabled=False),
        L_f=1.0,
        L_g=1.0,
    ),
    "linear_decoupled": dict(
        f=Nonlinearity(terms=((1.0, 0, 1), (-1.0, 1, 0)), cutoff_enabled=False),
        g=Nonlinearity(terms=()),
        L_f=1.0,
        L_g=0.0,
    ),
}


def make_system(name: str, epsilon: float, sigma: float = 0.25, **overrides) -> SystemSpec:
    """Registered systems: 'benchmark', 'linear_oracle', 'linear_decoupled', 'planar'."""
    if name == "planar":
        k = float(overrides.pop("k", 1.0))
        return SystemSpec(
            name="planar",
            opA=scalar_operator(-k * k, name=f"-k^2 (k={k})"),
            opB=scalar_operator(-1.0, name="-1"),
            f=Nonlinearity(terms=((1.0, 0, 2), (-1.0, 1, 0)), cutoff_enabled=False),
            g=Nonlinearity(terms=()),
            epsilon=epsilon,
            omegaA=-k * k,
            omegaB=-1.0,
            L_f=1.0,
            L_g=0.0,
            sigma=sigma,
            **overrides,
        )
    if name not in _BUILTINS:
        raise ConfigurationError(f"unknown system '{name}'")
    params = dict(_BUILTINS[name])
    params.update(overrides)
    return SystemSpec(
        name=name,
        opA=laplacian(),
        opB=laplacian(),
        epsilon=epsilon,
        sigma=sigma,
        **params,
    )


def system_from_table(table: dict, epsilon: float) -> SystemSpec:
    """Custom system from a JSON coefficient table.

    Schema: {"name": str, "f": [[c, i, j], ...], "g": [[c, i, j], ...],
             "sigma": float, "cutoff": bool, "L_f": float, "L_g": float}.
    Operators A and B are the Laplacian.
    """
    f = Nonlinearity(
        terms=tuple((float(c), int(i), int(j)) for c, i, j in table["f"]),
        cutoff_enabled=bool(table.get("cutoff", True)),
    )
    g = Nonlinearity(
        terms=tuple((float(c), int(i), int(j)) for c, i, j in table.get("g", [])),
        cutoff_enabled=bool(table.get("cutoff", True)),
    )
    return SystemSpec(
        name=str(table.get("name", "custom")),
        opA=laplacian(),
        opB=laplacian(),
        f=f,
        g=g,
        epsilon=epsilon,
        sigma=float(table.get("sigma", 0.25)),
        L_f=float(table.get("L_f", 1.0)),
        L_g=float(table.get("L_g", 1.0)),
    )


def dxf_multiplier(spec: SystemSpec, base_u: SpectralField, base_v: SpectralField) -> SpectralField:
    """Pointwise field of df/du at the base point (raw rule derivative).

    Valid on B(0, 2*sigma) where the rule is active; outside, the cutoff
    dominates and the linearization is meaningless.
    """
    if not base_u.same_grid(base_v):
        raise ConfigurationError("base point fields live on different grids")
    if spec.f.cutoff_enabled:
        nu, nv = sobolev_norm(base_u, 2), sobolev_norm(base_v, 2)
        if max(nu, nv) > 2.0 * spec.sigma:
            raise DomainError(
                f"base point outside B(0, 2*sigma): norms ({nu:.3g}, {nv:.3g}), sigma={spec.sigma}"
            )
    vals = spec.f.raw_du(to_physical(base_u), to_physical(base_v))
    return dealias(to_spectral(np.broadcast_to(vals, (base_u.grid_size,) * base_u.domain_dim).copy(),
                               base_u.domain_dim))


@dataclass(frozen=True)
class ModifiedSystem:
    """Taylor-shifted system around a base point on the critical set.

    ``dxf_values`` are the grid values of the multiplier Dxf(u0, v0);
    ``lambda0`` is their grid maximum (uniform negative bound).  When the
    base point is constant in space the shifted operator At is diagonal with
    symbol eps*mA(|k|^2) + lambda_const and its semigroup is exact.
    """

    spec: SystemSpec
    base_u: SpectralField
    base_v: SpectralField
    dxf_field: SpectralField
    dxf_values: np.ndarray
    lambda0: float
    is_diagonal: bool
    J_bound: float
    L_ftilde: float

    @property
    def epsilon(self) -> float:
        return self.spec.epsilon

    def tilde_symbol(self, grid_size: int, domain_dim: int = 1) -> np.ndarray:
        """Symbol of At = eps*A + lambda_const (diagonal base points only)."""
        if not self.is_diagonal:
            raise ConfigurationError("shifted operator is not diagonal for this base point")
        mA = self.spec.opA.symbol_on_grid(grid_size, domain_dim)
        return self.spec.epsilon * mA + self.lambda0

    def apply_tildeA(self, w: SpectralField) -> SpectralField:
        """At w = eps*A w + Dxf(u0,v0) * w (pointwise product for the shift)."""
        mA = self.spec.opA.symbol_on_grid(w.grid_size, w.domain_dim)
        lin = w.with_coeffs(self.spec.epsilon * mA * w.coeffs)
        shift = dealias(to_spectral(self.dxf_values * to_physical(w), w.domain_dim))
        return lin + shift

    def eval_ftilde(self, u: SpectralField, v: SpectralField) -> SpectralField:
        """ft(u, v) = f(u, v) - Dxf(u0, v0) u."""
        f_val = eval_f(self.spec, u, v)
        shift = dealias(to_spectral(self.dxf_values * to_physical(u), u.domain_dim))
        return f_val - shift


def _power_iteration_bound(j_diag: np.ndarray, iters: int = 200) -> float:
    """Operator norm of a diagonal operator by power iteration on |j|^2,
    seeded at the dominant entry."""
    jsq = np.abs(j_diag) ** 2
    x = np.zeros_like(jsq)
    x[int(np.argmax(jsq))] = 1.0
    lam = 0.0
    for _ in range(iters):
        y = jsq * x
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        lam = float(x @ y)
        x = y / nrm
    return math.sqrt(max(lam, 0.0))


def build_modified(
    spec: SystemSpec, base_u: SpectralField, base_v: SpectralField
) -> ModifiedSystem:
    """Shifted system at (u0, v0); requires a uniformly attracting linearization."""
    dxf = dxf_multiplier(spec, base_u, base_v)
    dxf_values = spec.f.raw_du(to_physical(base_u), to_physical(base_v))
    dxf_values = np.broadcast_to(dxf_values, (base_u.grid_size,) * base_u.domain_dim)
    lambda0 = float(np.max(dxf_values))
    if lambda0 >= 0.0:
        raise NotAttractingError(
            f"grid max of Dxf is {lambda0:.3g} >= 0: base point not normally hyperbolic attracting"
        )
    if spec.epsilon * spec.omegaA + lambda0 >= 0.0:
        raise NotAttractingError(
            f"eps*omega_A + lambda0 = {spec.epsilon * spec.omegaA + lambda0:.3g} must be negative"
        )
    is_diagonal = bool(np.ptp(dxf_values) < 1e-12)
    if not is_diagonal and base_u.domain_dim != 1:
        raise ConfigurationError("non-constant base points are supported in one dimension only")
    # J = At^{-1} A; for a constant shift both operators are diagonal and the
    # H^2 operator norm is estimated by power iteration over retained modes.
    mA = spec.opA.symbol_on_grid(base_u.grid_size, base_u.domain_dim).reshape(-1)
    if is_diagonal:
        j_diag = mA / (spec.epsilon * mA + lambda0)
        j_bound = _power_iteration_bound(j_diag)
    else:
        j_bound = _dense_j_bound(spec, dxf_values, base_u.grid_size)
    mod = ModifiedSystem(
        spec=spec,
        base_u=base_u,
        base_v=base_v,
        dxf_field=dxf,
        dxf_values=np.array(dxf_values, dtype=np.float64),
        lambda0=lambda0,
        is_diagonal=is_diagonal,
        J_bound=j_bound,
        L_ftilde=0.0,
    )
    l_ft = estimate_lipschitz(
        mod.eval_ftilde,
        radius=spec.sigma,
        samples=60,
        seed=1234,
        max_mode=base_u.max_mode,
        gamma=spec.gamma,
        sigma=spec.sigma,
    )
    object.__setattr__(mod, "L_ftilde", l_ft)
    return mod


def _dense_j_bound(spec: SystemSpec, dxf_values: np.ndarray, grid_size: int) -> float:
    """H^2 norm of At^{-1} A for a non-constant shift, via the dense mode matrix."""
    n = grid_size
    k = wavenumbers(n).astype(np.float64)
    mA = spec.opA.symbol_on_grid(n, 1)
    shift_hat = np.fft.fft(dxf_values) / n
    conv = np.empty((n, n), dtype=np.complex128)
    for row in range(n):
        conv[row, :] = shift_hat[(row - np.arange(n)) % n]
    At = spec.epsilon * np.diag(mA) + conv
    J = np.linalg.solve(At, np.diag(mA.astype(np.complex128)))
    w = 1.0 + k**2
    Jw = (w[:, None] / w[None, :]) * J
    # power iteration on Jw^H Jw
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x /= np.linalg.norm(x)
    for _ in range(200):
        y = Jw.conj().T @ (Jw @ x)
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        x = y / nrm
    return float(np.sqrt(np.real(np.vdot(x, Jw.conj().T @ (Jw @ x)))))


def estimate_lipschitz(
    fn,
    radius: float,
    samples: int,
    seed: int,
    max_mode: int = 32,
    gamma: float = 1.0,
    sigma: float = 0.25,
) -> float:
    """Empirical Lipschitz lower bound on the H^2 ball of the given radius.

    ``fn`` is a Nonlinearity or a callable (u, v) -> SpectralField.  Sampled
    pairs cycle through u-only, v-only and joint perturbations; the reported
    value is the max of ||fn(p1) - fn(p2)||_{H^{2*gamma}} over
    (||du||_{H^2} + ||dv||_{H^2}).  Deterministic for a fixed seed.
    """
    if samples < 2:
        raise ConfigurationError("need at least 2 samples")
    if isinstance(fn, Nonlinearity):
        if fn.is_zero:
            return 0.0
        evaluate = lambda u, v: eval_nonlinearity(fn, u, v, sigma)
    else:
        evaluate = fn
    rng = np.random.default_rng(seed)
    best = 0.0
    band = (0, dealias_cutoff(max_mode))  # probe below the dealias cut only
    for i in range(samples):
        kind = i % 3
        u1 = random_band_field(max_mode, rng, rng.uniform(0.1, 1.0) * radius, band=band)
        v1 = random_band_field(max_mode, rng, rng.uniform(0.1, 1.0) * radius, band=band)
        du = random_band_field(max_mode, rng, rng.uniform(0.01, 0.3) * radius, band=band)
        dv = random_band_field(max_mode, rng, rng.uniform(0.01, 0.3) * radius, band=band)
        if kind == 0:
            dv = dv * 0.0
        elif kind == 1:
            du = du * 0.0
        u2, v2 = u1 + du, v1 + dv
        denom = sobolev_norm(du, 2) + sobolev_norm(dv, 2)
        if denom == 0.0:
            continue
        diff = evaluate(u1, v1) - evaluate(u2, v2)
        best = max(best, sobolev_norm(diff, 2.0 * gamma) / denom)
    return best


def perturbed_growth_bound(omega: float, M: float, normB: float) -> float:
    """Growth bound omega + M*||B|| of a boundedly perturbed semigroup."""
    if M < 1.0:
        raise ConfigurationError(f"semigroup constant M must be >= 1, got {M}")
    if normB < 0.0:
        raise ConfigurationError("perturbation norm must be nonnegative")
    return omega + M * normB
