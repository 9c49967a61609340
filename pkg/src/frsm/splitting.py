"""Slow/fast decomposition of the slow-variable space at a cut wavenumber.

For B = Laplacian on T^1 the space splits as Y = Y_S + Y_F with
Y_S = span{e^{ikx} : |k| <= k0} and Y_F its complement.  The cut k0 is the
unique integer with

    -(k0+1)^2 < q <= -k0^2,      q = (eps*omega_A + lambda0) / zeta,

so the fast block of B decays at least as fast as the shifted fast operator
at rate q.  The decay constants are N_F = -q - k0^2 and N_S = N_F + 2*k0 - 1,
with spectral gap N_S - N_F = 2*k0 - 1 ~ O(zeta^{-1/2}).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .spectral import SpectralField, wavenumbers

GAMMA_FN = math.gamma


def select_k0(zeta: float, epsilon: float, omegaA: float, lambda0: float) -> int:
    """Unique k0 >= 1 with -(k0+1)^2 < (eps*omegaA + lambda0)/zeta <= -k0^2."""
    if zeta <= 0:
        raise ConfigurationError("zeta must be positive")
    q = (epsilon * omegaA + lambda0) / zeta
    if q >= 0:
        raise ConfigurationError(f"dissipativity rate {q} must be negative")
    k0 = int(math.floor(math.sqrt(-q) + 1e-12))
    # guard against float dust right at a square boundary
    while k0 >= 1 and not (-((k0 + 1) ** 2) < q <= -(k0**2)):
        k0 += 1 if q <= -((k0 + 1) ** 2) else -1
        if k0 > 10**6:
            raise ConfigurationError("cut selection failed")
    if k0 < 1:
        raise ConfigurationError(f"zeta too large: rate {q} gives no cut mode >= 1")
    return k0


@dataclass(frozen=True)
class SplittingSpec:
    zeta: float
    k0: int
    N_F: float
    N_S: float
    lambda0: float
    epsilon: float
    omegaA: float = 0.0

    @property
    def gap(self) -> float:
        return self.N_S - self.N_F

    @property
    def rate(self) -> float:
        """q = (eps*omega_A + lambda0)/zeta used in the bracketing."""
        return (self.epsilon * self.omegaA + self.lambda0) / self.zeta


def decay_constants(zeta: float, epsilon: float, omegaA: float, lambda0: float, k0: int):
    """(N_F, N_S) for the chosen cut; asserts the gap identity N_S - N_F = 2*k0 - 1."""
    q = (epsilon * omegaA + lambda0) / zeta
    n_f = -q - k0 * k0
    if n_f < 0.0:
        warnings.warn(f"N_F = {n_f:.3g} clipped to 0: cut k0 = {k0} outside the bracketing")
        n_f = 0.0
    n_s = n_f + (2 * k0 - 1)
    assert n_s - n_f == 2 * k0 - 1
    return n_f, n_s


def build_splitting(
    zeta: float,
    epsilon: float,
    lambda0: float,
    omegaA: float = 0.0,
    k0_override: int | None = None,
) -> SplittingSpec:
    k0 = k0_override if k0_override is not None else select_k0(zeta, epsilon, omegaA, lambda0)
    n_f, n_s = decay_constants(zeta, epsilon, omegaA, lambda0, k0)
    return SplittingSpec(
        zeta=zeta, k0=k0, N_F=n_f, N_S=n_s, lambda0=lambda0, epsilon=epsilon, omegaA=omegaA
    )


def _slow_mask(split: SplittingSpec, fld: SpectralField) -> np.ndarray:
    if fld.domain_dim != 1:
        raise ConfigurationError("the slow/fast splitting is defined in one dimension only")
    return np.abs(wavenumbers(fld.grid_size)) <= split.k0


def project_slow(split: SplittingSpec, fld: SpectralField) -> SpectralField:
    return fld.with_coeffs(np.where(_slow_mask(split, fld), fld.coeffs, 0.0))


def project_fast(split: SplittingSpec, fld: SpectralField) -> SpectralField:
    return fld.with_coeffs(np.where(_slow_mask(split, fld), 0.0, fld.coeffs))


def backward_group_slow(split: SplittingSpec, opB, t: float, fld: SpectralField) -> SpectralField:
    """exp(-t*B) on the slow block (finite Fourier block: a genuine group).

    Input is projected to the slow modes first; the fast complement has no
    backward flow and is discarded.
    """
    mask = _slow_mask(split, fld)
    m = opB.symbol_on_grid(fld.grid_size, fld.domain_dim)
    if np.max(np.abs(m[mask])) * abs(t) > 600.0:
        raise DomainError("backward horizon too long for the slow block (overflow)")
    out = np.zeros_like(fld.coeffs)
    out[mask] = np.exp(-t * m[mask]) * fld.coeffs[mask]
    return fld.with_coeffs(out)


def contraction_constant(
    L_ftilde: float,
    C_A: float,
    L_g: float,
    C_B: float,
    M_B: float,
    gamma: float,
    delta: float,
    epsilon: float,
    zeta: float,
    omegaA: float,
    lambda0: float,
    N_F: float,
    N_S: float,
):
    """Contraction constant L of the fixed-point operator and the manifold
    Lipschitz constant L_zeta = M_B / (1 - L) when L < 1.

    L = 2^g*Lft*C_A*Gamma(g)/D^g + 2^d*L_g*C_B*Gamma(d)/gap^d
        + 2*L_g*M_B*Gamma(d)/gap,
    D = 2*(eps/zeta - 1)*(eps*omegaA + lambda0) + eps*(N_S + N_F),

    where D/2 = eps*eta - (eps*omegaA + lambda0) is the margin between the
    weight eta and the fast relaxation rate, and gap/2 the margin to the
    slow-block rates.  Returns (L, L_zeta or None).
    """
    gap = N_S - N_F
    denom = 2.0 * (epsilon / zeta - 1.0) * (epsilon * omegaA + lambda0) + epsilon * (N_S + N_F)
    if denom <= 0.0 or gap <= 0.0:
        raise ConfigurationError(
            f"contraction denominators must be positive: D = {denom:.3g}, gap = {gap:.3g}"
        )
    L = (2.0**gamma) * L_ftilde * C_A * GAMMA_FN(gamma) / denom**gamma
    if L_g != 0.0:
        L += (2.0**delta) * L_g * C_B * GAMMA_FN(delta) / gap**delta
        L += 2.0 * L_g * M_B * GAMMA_FN(delta) / gap
    L_zeta = M_B / (1.0 - L) if L < 1.0 else None
    return L, L_zeta


def check_regime(epsilon: float, zeta: float, omegaA: float = 0.0, lambda0: float = -1.0,
                 contraction: float | None = None) -> dict:
    """Diagnostic flags; reporting only, never raises."""
    flags = {
        "eps_over_zeta": epsilon / zeta,
        "eps_zeta_ok": epsilon / zeta < 1.0,
        "dissipativity": epsilon * omegaA + lambda0,
        "dissipativity_ok": epsilon * omegaA + lambda0 < 0.0,
    }
    if contraction is not None:
        flags["contraction"] = contraction
        flags["contraction_ok"] = contraction < 1.0
    flags["ok"] = bool(
        flags["eps_zeta_ok"]
        and flags["dissipativity_ok"]
        and flags.get("contraction_ok", True)
    )
    return flags


def splitting_record(split: SplittingSpec, L: float | None = None, L_zeta: float | None = None,
                     regime: dict | None = None) -> dict:
    """JSON-ready diagnostic block embedded in every experiment report."""
    return {
        "zeta": split.zeta,
        "k0": split.k0,
        "N_F": split.N_F,
        "N_S": split.N_S,
        "gap": split.gap,
        "L": L,
        "L_zeta": L_zeta,
        "regime_flags": regime or {},
    }
