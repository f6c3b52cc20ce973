"""Fourier representation of periodic vector fields on the cube [0, L]^3.

Coefficients are stored as Fourier-series amplitudes ``c_k`` so that

    u(x) = sum_k c_k exp(i (2 pi / L) k . x),

i.e. the forward FFT is scaled by 1/n^3 and the inverse is a plain sum.  With
this convention zero padding needs no rescaling and every norm carries the
volume factor L^3:

    ||u||_H^2  = L^3 sum_k |c_k|^2
    ||u||_V^2  = L^3 sum_k lambda_k |c_k|^2,   lambda_k = (2 pi / L)^2 |k|^2
    ||u||_DA^2 = L^3 sum_k lambda_k^2 |c_k|^2

Arrays have shape ``(3, n, n, n)`` in numpy FFT ordering.  Nyquist planes
(any |k_i| = n/2) carry no sign-consistent projection, so ``leray_project``
discards them; all solver fields live inside the 2/3 band anyway.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Union

import numpy as np
import scipy.fft as sfft

SUPPORTED_PADS = (Fraction(1), Fraction(3, 2), Fraction(2), Fraction(3))

_FFT_WORKERS = 1


def set_fft_workers(workers: int) -> None:
    """Number of threads used by every transform in this process."""
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(workers))


class GridMismatchError(ValueError):
    """Fields defined on different grids were combined."""


class PaddingError(ValueError):
    """Unsupported padding factor or grid size."""


@dataclass(frozen=True, eq=False)
class Grid:
    """Cubic periodic grid with ``n`` points (and modes) per dimension."""

    n: int
    L: float = 2 * math.pi

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError(f"n must be even and >= 8, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        object.__setattr__(self, "L", float(self.L))

    def __eq__(self, other):
        return isinstance(other, Grid) and self.n == other.n and self.L == other.L

    def __hash__(self):
        return hash((self.n, self.L))

    @property
    def scale(self) -> float:
        return 2 * math.pi / self.L

    @property
    def volume(self) -> float:
        return self.L**3

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def lambda1(self) -> float:
        """Smallest positive Stokes eigenvalue (2 pi / L)^2 of the implemented A."""
        return self.scale**2

    @cached_property
    def k1d(self) -> np.ndarray:
        return np.fft.fftfreq(self.n, 1.0 / self.n).astype(np.int64)

    @cached_property
    def kvec(self) -> np.ndarray:
        """Integer wavevectors, shape (3, n, n, n)."""
        kx, ky, kz = np.meshgrid(self.k1d, self.k1d, self.k1d, indexing="ij")
        return np.stack([kx, ky, kz])

    @cached_property
    def k2(self) -> np.ndarray:
        """|k|^2 as integers."""
        return np.sum(self.kvec**2, axis=0)

    @cached_property
    def stokes_eigs(self) -> np.ndarray:
        """lambda_k = (2 pi / L)^2 |k|^2 on every mode."""
        return self.scale**2 * self.k2.astype(float)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        return np.any(np.abs(self.kvec) == self.n // 2, axis=0)

    @cached_property
    def two_thirds_mask(self) -> np.ndarray:
        """True on retained modes: every |k_i| <= n/3."""
        return np.all(3 * np.abs(self.kvec) <= self.n, axis=0)

    @cached_property
    def dealias_kmax(self) -> int:
        return self.n // 3

    @cached_property
    def deriv_k(self) -> np.ndarray:
        """Physical wavevectors (2 pi / L) k with Nyquist components zeroed."""
        k = self.kvec.astype(float) * self.scale
        k[np.abs(self.kvec) == self.n // 2] = 0.0
        return k

    @cached_property
    def proj_k2(self) -> np.ndarray:
        k2 = self.k2.astype(float)
        k2[0, 0, 0] = 1.0
        return k2

    def physical_coords(self) -> np.ndarray:
        x = np.arange(self.n) * self.dx
        return np.stack(np.meshgrid(x, x, x, indexing="ij"))

    def padded_size(self, pad) -> int:
        pad = Fraction(pad).limit_denominator(8)
        if pad not in SUPPORTED_PADS:
            raise PaddingError(f"pad factor {pad} not in {[str(p) for p in SUPPORTED_PADS]}")
        m = pad * self.n
        if m.denominator != 1 or m.numerator % 2:
            raise PaddingError(f"pad {pad} on n={self.n} does not give an even grid")
        return int(m)


def _check_grid(*fields_) -> Grid:
    g = fields_[0].grid
    for f in fields_[1:]:
        if f.grid != g:
            raise GridMismatchError(f"grid mismatch: n={g.n}, L={g.L} vs n={f.grid.n}, L={f.grid.L}")
    return g


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Velocity field as Fourier coefficients, shape (3, n, n, n)."""

    grid: Grid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        n = self.grid.n
        if c.shape != (3, n, n, n):
            raise GridMismatchError(f"coefficient shape {c.shape} does not match grid n={n}")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(grid, np.zeros((3, grid.n, grid.n, grid.n), dtype=complex))

    def __add__(self, other):
        _check_grid(self, other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_grid(self, other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def __mul__(self, c):
        return SpectralField(self.grid, self.coeffs * c)

    __rmul__ = __mul__

    def copy_with(self, coeffs) -> "SpectralField":
        return SpectralField(self.grid, coeffs)

    def band(self) -> int:
        """Largest |k_i| carrying a nonzero coefficient (0 for the zero field)."""
        nz = np.any(self.coeffs != 0, axis=0)
        if not nz.any():
            return 0
        return int(np.abs(self.grid.kvec[:, nz]).max())


@dataclass(frozen=True, eq=False)
class PhysicalField:
    """Real velocity samples, shape (3, m, m, m), on a grid of m points per side."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return self.values.shape[-1]


Field = Union[SpectralField, PhysicalField]


# --- padding / transforms -------------------------------------------------


def _pad_axis(a: np.ndarray, axis: int, m: int) -> np.ndarray:
    n = a.shape[axis]
    if m == n:
        return a
    h = n // 2
    shape = list(a.shape)
    shape[axis] = m
    out = np.zeros(shape, dtype=a.dtype)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim

    def put(s_src, s_dst, scale=1.0):
        src[axis], dst[axis] = s_src, s_dst
        out[tuple(dst)] += scale * a[tuple(src)]

    put(slice(0, h), slice(0, h))
    put(slice(h + 1, n), slice(m - h + 1, m))
    # split the Nyquist coefficient evenly between +n/2 and -n/2
    put(slice(h, h + 1), slice(h, h + 1), 0.5)
    put(slice(h, h + 1), slice(m - h, m - h + 1), 0.5)
    return out


def _truncate_axis(a: np.ndarray, axis: int, n: int) -> np.ndarray:
    m = a.shape[axis]
    if m == n:
        return a
    h = n // 2

    def take(s):
        idx = [slice(None)] * a.ndim
        idx[axis] = s
        return a[tuple(idx)]

    nyq = take(slice(h, h + 1)) + take(slice(m - h, m - h + 1))
    return np.concatenate([take(slice(0, h)), nyq, take(slice(m - h + 1, m))], axis=axis)


def pad_coeffs(c: np.ndarray, m: int) -> np.ndarray:
    for ax in (-3, -2, -1):
        c = _pad_axis(c, ax, m)
    return c


def truncate_coeffs(c: np.ndarray, n: int) -> np.ndarray:
    for ax in (-3, -2, -1):
        c = _truncate_axis(c, ax, n)
    return c


def to_physical(c: np.ndarray, m: int | None = None) -> np.ndarray:
    """Coefficient array -> real samples on an m^3 grid (m >= n)."""
    if m is not None and m != c.shape[-1]:
        c = pad_coeffs(c, m)
    return sfft.ifftn(c, axes=(-3, -2, -1), norm="forward", workers=_FFT_WORKERS).real


def to_spectral(v: np.ndarray, n: int | None = None) -> np.ndarray:
    """Real samples on an m^3 grid -> coefficients, truncated to n^3 if given."""
    c = sfft.fftn(v, axes=(-3, -2, -1), norm="forward", workers=_FFT_WORKERS)
    if n is not None and n != v.shape[-1]:
        c = truncate_coeffs(c, n)
    return c


def transform(u: PhysicalField) -> SpectralField:
    if u.m != u.grid.n:
        return SpectralField(u.grid, to_spectral(u.values, u.grid.n))
    return SpectralField(u.grid, to_spectral(u.values))


def inverse_transform(u: SpectralField, pad=1) -> PhysicalField:
    m = u.grid.padded_size(pad)
    return PhysicalField(u.grid, to_physical(u.coeffs, m))


def exact_pad(grid: Grid, degree: int, band: int | None = None) -> Fraction:
    """Smallest supported pad at which a degree-``degree`` product of fields with
    modes |k_i| <= band is integrated exactly (alias-free) on the padded grid."""
    if band is None:
        band = grid.dealias_kmax
    for p in SUPPORTED_PADS[1:]:
        m = p * grid.n
        if m.denominator == 1 and m.numerator % 2 == 0 and m > degree * band:
            return p
    return SUPPORTED_PADS[-1]


# --- linear operators -----------------------------------------------------


def _project(c: np.ndarray, grid: Grid) -> np.ndarray:
    k = grid.kvec.astype(float)
    kdotc = np.einsum("i...,i...->...", k, c)
    out = c - k * (kdotc / grid.proj_k2)
    out[:, 0, 0, 0] = 0.0
    out[:, grid.nyquist_mask] = 0.0
    return out


def leray_project(f: SpectralField) -> SpectralField:
    """Helmholtz-Hodge projection onto divergence-free, zero-mean fields."""
    return SpectralField(f.grid, _project(f.coeffs, f.grid))


def stokes_apply(u: SpectralField) -> SpectralField:
    return SpectralField(u.grid, u.grid.stokes_eigs * u.coeffs)


def divergence(u: SpectralField) -> np.ndarray:
    """Spectral divergence coefficients (scalar array)."""
    return 1j * np.einsum("i...,i...->...", u.grid.deriv_k, u.coeffs)


def max_divergence_ratio(u: SpectralField) -> float:
    """max_k |k . c_k| / (|k| |c_k|) over nonzero modes."""
    g = u.grid
    k = g.kvec.astype(float)
    num = np.abs(np.einsum("i...,i...->...", k, u.coeffs))
    den = np.sqrt(g.k2) * np.sqrt(np.sum(np.abs(u.coeffs) ** 2, axis=0))
    mask = den > 0
    if not mask.any():
        return 0.0
    return float(np.max(num[mask] / den[mask]))


def dealias(u: SpectralField, rule: str = "two_thirds") -> SpectralField:
    """``two_thirds`` zeroes every mode with some |k_i| > n/3; ``padded`` is the
    identity here because padding happens inside product evaluation."""
    if rule == "two_thirds":
        return SpectralField(u.grid, u.coeffs * u.grid.two_thirds_mask)
    if rule.startswith("padded"):
        return u
    raise ValueError(f"unknown dealiasing rule {rule!r}")


def gradient_physical(c: np.ndarray, grid: Grid, m: int | None = None) -> np.ndarray:
    """du_i/dx_j on the physical grid, shape (3, 3, m, m, m) indexed [i, j]."""
    dc = 1j * c[:, None] * grid.deriv_k[None, :]
    return to_physical(dc, m)


# --- inner products and norms ---------------------------------------------


def inner_product(u: SpectralField, v: SpectralField) -> float:
    """(u, v)_H via Parseval."""
    g = _check_grid(u, v)
    return float(g.volume * np.real(np.vdot(u.coeffs, v.coeffs)))


def _lp_norm_physical(values: np.ndarray, volume: float, p: float) -> float:
    mag = np.sqrt(np.sum(values**2, axis=0))
    npts = mag.size
    if np.isinf(p):
        return float(mag.max())
    if p == 2:
        s = np.sum(mag**2)
    elif float(p).is_integer() and int(p) % 2 == 0:
        s = np.sum((mag * mag) ** (int(p) // 2))
    else:
        s = np.sum(mag**p)
    return float((volume * s / npts) ** (1.0 / p))


def norm(u: Field, kind: str = "H", p: float | None = None, pad=None) -> float:
    """Norm of ``u``.  ``kind`` is one of H, V, DA, or Lp (with ``p``).

    H, V and DA use Parseval.  Lp is a physical-grid quadrature; for spectral
    input it runs on a padded grid (exact for even integer p when possible).
    """
    kind = kind.upper()
    if kind.startswith("L") and kind != "L":
        if p is None:
            p = float(kind[1:])
        kind = "LP"
    if kind == "LP":
        if p is None or p < 1:
            raise ValueError(f"Lp norm needs p >= 1, got {p}")
        if isinstance(u, PhysicalField):
            return _lp_norm_physical(u.values, u.grid.volume, p)
        if pad is None:
            deg = int(math.ceil(p)) if np.isfinite(p) else 2
            pad = exact_pad(u.grid, deg, max(u.band(), 1))
        return _lp_norm_physical(inverse_transform(u, pad).values, u.grid.volume, p)
    if isinstance(u, PhysicalField):
        u = transform(u)
    g = u.grid
    a2 = np.sum(np.abs(u.coeffs) ** 2, axis=0)
    if kind == "H":
        s = np.sum(a2)
    elif kind == "V":
        s = np.sum(g.stokes_eigs * a2)
    elif kind == "DA":
        s = np.sum(g.stokes_eigs**2 * a2)
    else:
        raise ValueError(f"unknown norm kind {kind!r}")
    return float(math.sqrt(g.volume * s))


# --- random fields ---------------------------------------------------------


def random_field(
    grid: Grid,
    rng: np.random.Generator,
    kmax: int | None = None,
    h_norm: float | None = 1.0,
    slope: float = 0.0,
) -> SpectralField:
    """Random divergence-free field supported on 0 < |k_i| <= kmax.

    Amplitudes decay like |k|^slope; the result is rescaled to ``h_norm``
    (unless None).  Hermitian symmetry comes from drawing in physical space.
    """
    if kmax is None:
        kmax = grid.dealias_kmax
    g = grid
    mask = np.all(np.abs(g.kvec) <= kmax, axis=0)
    white = rng.standard_normal((3, g.n, g.n, g.n))
    c = to_spectral(white)
    kk = np.sqrt(np.maximum(g.k2, 1)).astype(float)
    c = c * mask * kk**slope
    c = _project(c, g)
    u = SpectralField(g, c)
    if h_norm is not None:
        nrm = norm(u, "H")
        if nrm > 0:
            u = u * (h_norm / nrm)
    return u


def single_mode(grid: Grid, k, amplitude: float, polarization=None, phase: str = "sin") -> SpectralField:
    """Real transverse mode ``amplitude * e * sin(2 pi k.x / L)`` (or cos).

    ``polarization`` defaults to a unit vector perpendicular to k.
    """
    k = np.asarray(k, dtype=np.int64)
    if not np.any(k):
        raise ValueError("zero wavevector carries no divergence-free mode")
    if polarization is None:
        ref = np.array([1.0, 0.0, 0.0]) if abs(k[0]) < np.linalg.norm(k) * 0.9 else np.array([0.0, 1.0, 0.0])
        e = np.cross(k, ref)
        e = e / np.linalg.norm(e)
    else:
        e = np.asarray(polarization, dtype=float)
        e = e - k * (e @ k) / (k @ k)
        if np.linalg.norm(e) == 0:
            raise ValueError("polarization parallel to k")
        e = e / np.linalg.norm(e)
    n = grid.n
    c = np.zeros((3, n, n, n), dtype=complex)
    idx = tuple(int(ki) % n for ki in k)
    nidx = tuple(int(-ki) % n for ki in k)
    if phase == "sin":
        a, b = -0.5j, 0.5j
    else:
        a, b = 0.5, 0.5
    c[(slice(None),) + idx] += amplitude * a * e
    c[(slice(None),) + nidx] += amplitude * b * e
    return SpectralField(grid, c)
