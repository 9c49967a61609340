"""Fourier-spectral fields and diagonal multiplier operators on the torus.

A real scalar field w on [0, 2*pi)^n is stored by its truncated Fourier
coefficients c_k, k in {-K, ..., K}^n, sampled on the uniform grid with
N = 2K + 1 points per axis and normalized so that

    w(x) = sum_k c_k exp(i k.x),      c_{-k} = conj(c_k).

All Sobolev norms use the convention

    ||w||_{H^s}^2 = sum_k (1 + |k|^2)^s |c_k|^2,

whose s = 0 case is the L^2 norm under the measure dx/(2*pi)^n.  Operators
A, B are Fourier multipliers m(|k|^2) acting diagonally on coefficients, so
their semigroups exp(t*m(|k|^2)) are exact (no time-stepping error).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, DomainError, InvariantViolationError

HERMITIAN_TOL = 1e-10


@lru_cache(maxsize=64)
def wavenumbers(grid_size: int) -> np.ndarray:
    """Integer wavenumbers along one axis in numpy FFT order: 0..K, -K..-1."""
    k = np.rint(np.fft.fftfreq(grid_size) * grid_size).astype(np.int64)
    k.setflags(write=False)
    return k


@lru_cache(maxsize=64)
def ksq_grid(grid_size: int, domain_dim: int) -> np.ndarray:
    """|k|^2 on the full mode grid, shape (N,)*n, FFT order per axis."""
    k = wavenumbers(grid_size)
    axes = np.meshgrid(*([k] * domain_dim), indexing="ij")
    ksq = sum(a.astype(np.float64) ** 2 for a in axes)
    ksq.setflags(write=False)
    return ksq


def _conj_reverse(coeffs: np.ndarray) -> np.ndarray:
    """conj(c_{-k}) on an FFT-ordered array (any dimension)."""
    rev = np.flip(coeffs)
    for ax in range(coeffs.ndim):
        rev = np.roll(rev, 1, axis=ax)
    return np.conj(rev)


@dataclass(frozen=True)
class SpectralField:
    """Real field on T^n held as complex coefficients in FFT mode order.

    Immutable: the coefficient array is copied on construction and marked
    read-only, so fields can be shared freely between workers.
    """

    coeffs: np.ndarray
    grid_size: int
    domain_dim: int = 1

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.complex128)
        if self.grid_size < 3 or self.grid_size % 2 == 0:
            raise ConfigurationError(f"grid_size must be odd >= 3, got {self.grid_size}")
        if not 1 <= self.domain_dim <= 3:
            raise ConfigurationError(f"domain_dim must be 1..3, got {self.domain_dim}")
        if c.shape != (self.grid_size,) * self.domain_dim:
            raise ConfigurationError(
                f"coefficient shape {c.shape} does not match grid_size {self.grid_size}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def max_mode(self) -> int:
        return (self.grid_size - 1) // 2

    def same_grid(self, other: "SpectralField") -> bool:
        return self.grid_size == other.grid_size and self.domain_dim == other.domain_dim

    def with_coeffs(self, coeffs: np.ndarray) -> "SpectralField":
        return SpectralField(coeffs, self.grid_size, self.domain_dim)

    def __add__(self, other):
        if not self.same_grid(other):
            raise ConfigurationError("grid mismatch in field addition")
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other):
        if not self.same_grid(other):
            raise ConfigurationError("grid mismatch in field subtraction")
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return self.with_coeffs(self.coeffs * float(scalar))

    __rmul__ = __mul__


def zero_field(max_mode: int, domain_dim: int = 1) -> SpectralField:
    n_pts = 2 * max_mode + 1
    return SpectralField(np.zeros((n_pts,) * domain_dim, dtype=np.complex128), n_pts, domain_dim)


def constant_field(value: float, max_mode: int, domain_dim: int = 1) -> SpectralField:
    f = zero_field(max_mode, domain_dim)
    c = f.coeffs.copy()
    c[(0,) * domain_dim] = value
    return f.with_coeffs(c)


def cosine_field(mode: int, amplitude: float, max_mode: int) -> SpectralField:
    """amplitude * cos(mode * x) on T^1."""
    if not 0 <= mode <= max_mode:
        raise ConfigurationError(f"mode {mode} exceeds max_mode {max_mode}")
    f = zero_field(max_mode, 1)
    c = f.coeffs.copy()
    if mode == 0:
        c[0] = amplitude
    else:
        c[mode] = amplitude / 2.0
        c[-mode] = amplitude / 2.0
    return f.with_coeffs(c)


def grid_points(grid_size: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(grid_size) / grid_size


def to_spectral(samples: np.ndarray, domain_dim: int = 1) -> SpectralField:
    """Forward transform of real grid samples; Hermitian symmetry is enforced."""
    w = np.asarray(samples, dtype=np.float64)
    if w.ndim != domain_dim:
        raise ConfigurationError(f"expected {domain_dim}-dim samples, got {w.ndim}-dim")
    n_pts = w.shape[0]
    if any(s != n_pts for s in w.shape):
        raise ConfigurationError(f"sample array must be square, got shape {w.shape}")
    if n_pts < 3 or n_pts % 2 == 0:
        raise ConfigurationError(f"sample count per axis must be odd >= 3, got {n_pts}")
    c = np.fft.fftn(w) / w.size
    c = 0.5 * (c + _conj_reverse(c))
    return SpectralField(c, n_pts, domain_dim)


def to_physical(fld: SpectralField) -> np.ndarray:
    """Inverse transform to real grid values; rejects broken Hermitian symmetry."""
    scale = max(1.0, float(np.max(np.abs(fld.coeffs)) if fld.coeffs.size else 0.0))
    asym = np.max(np.abs(fld.coeffs - _conj_reverse(fld.coeffs)))
    if asym > HERMITIAN_TOL * scale:
        raise InvariantViolationError(
            f"Hermitian symmetry violated: max |c(-k) - conj(c(k))| = {asym:.3e}"
        )
    w = np.fft.ifftn(fld.coeffs) * fld.coeffs.size
    return np.real(w)


def sobolev_norm(fld: SpectralField, s: float) -> float:
    """H^s norm under the convention sum_k (1+|k|^2)^s |c_k|^2."""
    if s < 0:
        raise ConfigurationError(f"Sobolev index must be >= 0, got {s}")
    weights = (1.0 + ksq_grid(fld.grid_size, fld.domain_dim)) ** s
    return float(np.sqrt(np.sum(weights * np.abs(fld.coeffs) ** 2)))


def grid_l2_norm(samples: np.ndarray) -> float:
    """Discrete L^2 norm under dx/(2*pi)^n, i.e. sqrt(mean of squares)."""
    w = np.asarray(samples, dtype=np.float64)
    return float(np.sqrt(np.mean(w**2)))


@dataclass(frozen=True)
class MultiplierOperator:
    """Diagonal operator with real symbol m = m(|k|^2).

    ``bounded_below`` marks symbols whose infimum over all of Z^n is finite
    (true for constants, false for the Laplacian); it gates backward-time
    semigroup application.
    """

    symbol: object  # callable: |k|^2 array -> m array
    bounded_below: bool = False
    name: str = "multiplier"

    def symbol_on_grid(self, grid_size: int, domain_dim: int = 1) -> np.ndarray:
        ksq = ksq_grid(grid_size, domain_dim)
        m = np.asarray(self.symbol(ksq), dtype=np.float64)
        m = np.broadcast_to(m, ksq.shape)
        return m


def laplacian() -> MultiplierOperator:
    return MultiplierOperator(symbol=lambda ksq: -ksq, bounded_below=False, name="laplacian")


def scalar_operator(value: float, name: str | None = None) -> MultiplierOperator:
    v = float(value)
    return MultiplierOperator(
        symbol=lambda ksq: np.full_like(ksq, v),
        bounded_below=True,
        name=name or f"scalar({v})",
    )


def shifted_laplacian(shift: float) -> MultiplierOperator:
    s = float(shift)
    return MultiplierOperator(
        symbol=lambda ksq: -ksq + s, bounded_below=False, name=f"laplacian+{s}"
    )


def apply_multiplier(op: MultiplierOperator, fld: SpectralField) -> SpectralField:
    m = op.symbol_on_grid(fld.grid_size, fld.domain_dim)
    return fld.with_coeffs(m * fld.coeffs)


def apply_semigroup(op: MultiplierOperator, t: float, fld: SpectralField) -> SpectralField:
    """exp(t*m(|k|^2)) applied coefficient-wise; exact for any t >= 0."""
    if t < 0 and not op.bounded_below:
        raise DomainError(
            f"backward semigroup (t={t}) undefined for symbol '{op.name}' unbounded below"
        )
    m = op.symbol_on_grid(fld.grid_size, fld.domain_dim)
    return fld.with_coeffs(np.exp(t * m) * fld.coeffs)


def dealias_cutoff(max_mode: int) -> int:
    return (2 * max_mode) // 3


@lru_cache(maxsize=64)
def _dealias_mask(grid_size: int, domain_dim: int) -> np.ndarray:
    kmax = dealias_cutoff((grid_size - 1) // 2)
    k = np.abs(wavenumbers(grid_size))
    axes = np.meshgrid(*([k] * domain_dim), indexing="ij")
    keep = np.ones((grid_size,) * domain_dim, dtype=bool)
    for a in axes:
        keep &= a <= kmax
    keep.setflags(write=False)
    return keep


def dealias(fld: SpectralField) -> SpectralField:
    """Two-thirds rule: zero every coefficient with any |k_i| > floor(2K/3)."""
    mask = _dealias_mask(fld.grid_size, fld.domain_dim)
    return fld.with_coeffs(np.where(mask, fld.coeffs, 0.0))


def multiply_fields(a: SpectralField, b: SpectralField) -> SpectralField:
    """Pointwise product in physical space, transformed back and dealiased."""
    if not a.same_grid(b):
        raise ConfigurationError("grid mismatch in pointwise product")
    prod = to_physical(a) * to_physical(b)
    return dealias(to_spectral(prod, a.domain_dim))


def random_band_field(
    max_mode: int,
    rng: np.random.Generator,
    h2_norm: float,
    band: tuple[int, int] = (1, 0),
    decay: float = 2.0,
    domain_dim: int = 1,
) -> SpectralField:
    """Random smooth real field with prescribed H^2 norm (n = 1 only).

    Coefficients are drawn on modes band[0] <= |k| <= band[1] (band[1] = 0
    means max_mode) with envelope (1+k^2)^(-decay), then scaled.
    """
    if domain_dim != 1:
        raise ConfigurationError("random_band_field supports n = 1 only")
    lo, hi = band
    if hi == 0:
        hi = max_mode
    fld = zero_field(max_mode, 1)
    c = fld.coeffs.copy()
    for k in range(lo, hi + 1):
        if k == 0:
            c[0] = rng.standard_normal()
            continue
        z = (rng.standard_normal() + 1j * rng.standard_normal()) / (1.0 + k * k) ** decay
        c[k] = z
        c[-k] = np.conj(z)
    out = fld.with_coeffs(c)
    cur = sobolev_norm(out, 2)
    if cur == 0.0:
        return out
    return out * (h2_norm / cur)


def field_to_record(fld: SpectralField) -> dict:
    """Flat serialization: interleaved (re, im) pairs in mode order -K..K."""
    order = np.fft.fftshift(fld.coeffs)
    flat = order.reshape(-1)
    inter = np.empty(2 * flat.size, dtype=np.float64)
    inter[0::2] = flat.real
    inter[1::2] = flat.imag
    return {
        "grid_size": fld.grid_size,
        "domain_dim": fld.domain_dim,
        "coeffs": inter.tolist(),
    }


def field_from_record(rec: dict) -> SpectralField:
    n_pts = int(rec["grid_size"])
    dim = int(rec["domain_dim"])
    inter = np.asarray(rec["coeffs"], dtype=np.float64)
    if inter.size != 2 * n_pts**dim:
        raise ConfigurationError("serialized coefficient count does not match grid")
    flat = inter[0::2] + 1j * inter[1::2]
    order = flat.reshape((n_pts,) * dim)
    return SpectralField(np.fft.ifftshift(order), n_pts, dim)
