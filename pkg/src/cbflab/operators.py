"""Nonlinear operators of the damped Navier-Stokes system and checkable probes.

B(u) = P (u.grad) u is evaluated in divergence form with the 2/3 rule, the
Forchheimer term C(u) = P(|u|^{r-1} u) on a padded grid large enough that
its pairing with band-limited test fields is alias free.  Every identity and
inequality used by the energy estimates is exposed as a probe returning an
``OperatorProbeReport``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectral import (
    Grid,
    SpectralField,
    _check_grid,
    _project,
    exact_pad,
    gradient_physical,
    inner_product,
    norm,
    stokes_apply,
    to_physical,
    to_spectral,
)

SUPPORTED_R = (3, 5, 7)


class UnsupportedExponentError(ValueError):
    """Absorption exponent outside the supported odd integers."""


class PreconditionError(ValueError):
    """A probe was requested outside the parameter range where it holds."""


@dataclass(frozen=True)
class OperatorProbeReport:
    """Numeric sides of one identity or inequality check.

    For inequalities ``gap`` is the slack (should be >= -tolerance); for
    identities it is a residual (should satisfy |gap| <= tolerance).
    """

    name: str
    lhs: float
    rhs: float
    gap: float
    passed: bool
    tolerance: float
    kind: str = "inequality"

    @classmethod
    def inequality(cls, name, lhs, rhs, scale, rel_tol):
        """Report for ``lhs <= rhs`` with relative slack ``rel_tol * scale``."""
        tol = rel_tol * max(scale, 0.0)
        gap = rhs - lhs
        return cls(name, float(lhs), float(rhs), float(gap), bool(gap >= -tol), float(tol))

    @classmethod
    def identity(cls, name, lhs, rhs, rel_tol, scale=None):
        """Report for ``lhs == rhs``; gap is the residual relative to ``scale``."""
        if scale is None:
            scale = max(abs(lhs), abs(rhs))
        gap = abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs)
        return cls(name, float(lhs), float(rhs), float(gap), bool(gap <= rel_tol), float(rel_tol), "identity")


def check_exponent(r) -> int:
    if r not in SUPPORTED_R:
        raise UnsupportedExponentError(f"r must be one of {SUPPORTED_R}, got {r}")
    return int(r)


# --- constants --------------------------------------------------------------


def _eta(r, mu, beta, outer, inner):
    """outer(r) * (inner / (beta mu (r - 1)))^{2/(r-3)}, zero for r = 3."""
    r = check_exponent(r)
    if r == 3:
        return 0.0
    return outer(r) * (inner / (beta * mu * (r - 1))) ** (2.0 / (r - 3))


def eta1(mu: float, beta: float, r: int) -> float:
    """Coefficient of ||w||_H^2 when bounding |<B(w, w), u>| against damping."""
    return _eta(r, mu, beta, lambda r: (r - 3) / (mu * (r - 1)), 16.0)


def eta2(mu: float, beta: float, r: int) -> float:
    """Shift that makes G quasi-monotone for r > 3."""
    return _eta(r, mu, beta, lambda r: (r - 3) / (2 * mu * (r - 1)), 2.0)


def eta3(mu: float, beta: float, r: int) -> float:
    """Constant in the V-absorbing radius for r > 3."""
    return _eta(r, mu, beta, lambda r: (r - 3) / (r - 1), 4.0)


def eta4(mu: float, beta: float, r: int) -> float:
    """Growth rate in the vanishing-noise difference estimate for r > 3."""
    return _eta(r, mu, beta, lambda r: (r - 3) / (mu * (r - 1)), 8.0)


# --- band helpers -----------------------------------------------------------


def _two_thirds(c: np.ndarray, grid: Grid) -> np.ndarray:
    return c * grid.two_thirds_mask


def _band(*fields_) -> int:
    return max(1, max(f.band() for f in fields_))


def _padded_size(grid: Grid, degree: int, *fields_) -> int:
    return grid.padded_size(exact_pad(grid, degree, _band(*fields_)))


# --- convective term --------------------------------------------------------


def _convective_coeffs(c: np.ndarray, grid: Grid) -> np.ndarray:
    """div(u u^T) for a 2/3-band field, truncated back to the 2/3 band (unprojected)."""
    u = to_physical(c)
    uu = u[:, None] * u[None, :]
    uu_hat = to_spectral(uu)
    out = 1j * np.einsum("j...,ij...->i...", grid.deriv_k, uu_hat)
    return _two_thirds(out, grid)


def convective(u: SpectralField) -> SpectralField:
    """B(u) = P (u.grad) u on the 2/3-rule band.

    Input modes outside the 2/3 band are discarded first, which makes the
    quadratic product alias free on the n^3 grid.
    """
    g = u.grid
    c = _two_thirds(u.coeffs, g)
    return SpectralField(g, _project(_convective_coeffs(c, g), g))


def trilinear_b(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    """b(u, v, w) = integral of (u.grad) v . w, each input restricted to the 2/3 band."""
    g = _check_grid(u, v, w)
    uc, vc, wc = (_two_thirds(f.coeffs, g) for f in (u, v, w))
    up = to_physical(uc)
    grad_v = gradient_physical(vc, g)  # [i, j] = d v_i / d x_j
    adv = np.einsum("j...,ij...->i...", up, grad_v)
    adv_hat = _two_thirds(to_spectral(adv), g)
    return float(g.volume * np.real(np.vdot(wc, adv_hat)))


def convective_pair(u: SpectralField, v: SpectralField) -> SpectralField:
    """B(u, v) = P (u.grad) v on the 2/3 band."""
    g = _check_grid(u, v)
    uc, vc = _two_thirds(u.coeffs, g), _two_thirds(v.coeffs, g)
    adv = np.einsum("j...,ij...->i...", to_physical(uc), gradient_physical(vc, g))
    return SpectralField(g, _project(_two_thirds(to_spectral(adv), g), g))


# --- Forchheimer term -------------------------------------------------------


def _forchheimer_coeffs(c: np.ndarray, grid: Grid, r: int, m: int) -> np.ndarray:
    u = to_physical(c, m)
    s = np.sum(u * u, axis=0)
    return to_spectral(s ** ((r - 1) // 2) * u, grid.n)


def forchheimer(u: SpectralField, r: int, pad=None) -> SpectralField:
    """C(u) = P(|u|^{r-1} u), product formed on a padded grid.

    The default padding is the smallest supported factor for which degree
    r + 1 products of the field's band are alias free.
    """
    r = check_exponent(r)
    g = u.grid
    m = g.padded_size(pad) if pad is not None else _padded_size(g, r + 1, u)
    return SpectralField(g, _project(_forchheimer_coeffs(u.coeffs, g, r, m), g))


def forchheimer_gateaux(u: SpectralField, v: SpectralField, r: int, pad=None) -> SpectralField:
    """Directional derivative C'(u) v = P(|u|^{r-1} v) + (r-1) P(u |u|^{r-3} (u.v))."""
    if r < 3:
        raise UnsupportedExponentError("only the r >= 3 branch of the derivative is implemented")
    r = check_exponent(r)
    g = _check_grid(u, v)
    m = g.padded_size(pad) if pad is not None else _padded_size(g, r + 1, u, v)
    up, vp = to_physical(u.coeffs, m), to_physical(v.coeffs, m)
    s = np.sum(up * up, axis=0)
    udv = np.sum(up * vp, axis=0)
    prod = s ** ((r - 1) // 2) * vp + (r - 1) * s ** ((r - 3) // 2) * udv * up
    return SpectralField(g, _project(to_spectral(prod, g.n), g))


def g_apply(u: SpectralField, params) -> SpectralField:
    """G(u) = mu A u + B(u) + beta C(u)."""
    out = params.mu * stokes_apply(u) + convective(u)
    if params.beta != 0:
        out = out + params.beta * forchheimer(u, params.r)
    return out


# --- weighted quadratures ---------------------------------------------------


def weighted_norm_sq(weight_field: SpectralField, w: SpectralField, r: int, m: int | None = None) -> float:
    """|| |a|^{(r-1)/2} w ||_H^2 by padded quadrature (exact for band-limited input)."""
    g = _check_grid(weight_field, w)
    if m is None:
        m = _padded_size(g, r + 1, weight_field, w)
    a = to_physical(weight_field.coeffs, m)
    wp = to_physical(w.coeffs, m)
    s = np.sum(a * a, axis=0)
    return float(g.volume * np.mean(s ** ((r - 1) // 2) * np.sum(wp * wp, axis=0)))


def lr1_power(u: SpectralField, r: int) -> float:
    """||u||_{L^{r+1}}^{r+1}."""
    m = _padded_size(u.grid, r + 1, u)
    up = to_physical(u.coeffs, m)
    return float(u.grid.volume * np.mean(np.sum(up * up, axis=0) ** ((r + 1) // 2)))


def dual_norm_exact(g_field: SpectralField) -> float:
    """||g||_{V'} = ||A^{-1/2} g||_H for a field in H."""
    grid = g_field.grid
    eig = grid.stokes_eigs.copy()
    eig[0, 0, 0] = np.inf
    a2 = np.sum(np.abs(g_field.coeffs) ** 2, axis=0)
    return float(math.sqrt(grid.volume * np.sum(a2 / eig)))


def dual_norm_battery(g_field: SpectralField, battery) -> float:
    """Lower bound on ||g||_{V'}: sup of <g, w> over unit-V test fields."""
    return max(abs(inner_product(g_field, w)) for w in battery)


def probe_battery(grid: Grid, rng: np.random.Generator, size: int = 64) -> list[SpectralField]:
    """Fixed randomized set of unit-V divergence-free test fields."""
    from .spectral import random_field

    out = []
    for _ in range(size):
        w = random_field(grid, rng, h_norm=None, slope=rng.uniform(-3.0, 0.0))
        out.append(w * (1.0 / norm(w, "V")))
    return out


# --- probes -----------------------------------------------------------------


def gradient_identity_residual(u: SpectralField, r: int, pad=2, name: str = "gradient_identity") -> OperatorProbeReport:
    """Residual of <-Lap u, |u|^{r-1} u> = int |grad u|^2 |u|^{r-1}
    + 4 (r-1)/(r+1)^2 int |grad |u|^{(r+1)/2}|^2 on the padded grid.

    The gradient of |u|^{(r+1)/2} is obtained by spectral differentiation of
    the composed field, so for r > 3 the residual measures aliasing of a
    non-polynomial function and shrinks under refinement.
    """
    r = check_exponent(r)
    g = u.grid
    m = g.padded_size(pad)
    pg = Grid(m, g.L)
    up = to_physical(u.coeffs, m)
    lap = to_physical(g.stokes_eigs * u.coeffs, m)
    s = np.sum(up * up, axis=0)
    wgt = s ** ((r - 1) // 2)
    vol = g.volume
    lhs = vol * np.mean(wgt * np.sum(lap * up, axis=0))
    grad_u = gradient_physical(u.coeffs, g, m)
    t1 = vol * np.mean(np.sum(grad_u**2, axis=(0, 1)) * wgt)
    phi = s ** ((r + 1) / 4.0)
    phi_hat = to_spectral(phi)
    grad_phi = to_physical(1j * pg.deriv_k * phi_hat[None])
    t2 = vol * np.mean(np.sum(grad_phi**2, axis=0))
    rhs = t1 + 4.0 * (r - 1) / (r + 1) ** 2 * t2
    scale = max(abs(lhs), abs(t1), abs(t2))
    if scale == 0:
        return OperatorProbeReport(name, 0.0, 0.0, 0.0, True, 1e-4, "identity")
    return OperatorProbeReport.identity(name, lhs, rhs, 1e-4, scale)


def monotonicity_gap(u1: SpectralField, u2: SpectralField, params, which: str, rel_tol: float = 1e-9) -> OperatorProbeReport:
    """Slack of one of the monotonicity-type inequalities for the pair (u1, u2).

    which:
        forchheimer_monotone   <C(u1)-C(u2), w> >= 1/2 |||u1|^{(r-1)/2} w||^2 + 1/2 |||u2|^{(r-1)/2} w||^2
        quasi_monotone         <G(u1)-G(u2), w> + eta2 ||w||^2 >= 0                  (r > 3)
        monotone               <G(u1)-G(u2), w> >= 0                                  (r = 3, 2 beta mu >= 1)
        lr1_difference         ||w||_{L^{r+1}}^{r+1} <= 2^{r-2} (|||u1|^{(r-1)/2} w||^2 + |||u2|^{(r-1)/2} w||^2)
        convective_difference  |<B(w, w), u2>| <= mu/4 ||w||_V^2 + beta/8 |||u2|^{(r-1)/2} w||^2 + eta1 ||w||^2
    with w = u1 - u2.
    """
    g = _check_grid(u1, u2)
    mu, beta, r = params.mu, params.beta, check_exponent(params.r)
    w = u1 - u2
    m = _padded_size(g, r + 1, u1, u2)
    if which == "forchheimer_monotone":
        lhs = 0.5 * weighted_norm_sq(u1, w, r, m) + 0.5 * weighted_norm_sq(u2, w, r, m)
        rhs = inner_product(forchheimer(u1, r) - forchheimer(u2, r), w)
        return OperatorProbeReport.inequality(which, lhs, rhs, max(abs(lhs), abs(rhs)), rel_tol)
    if which == "quasi_monotone":
        if r <= 3:
            raise PreconditionError("quasi_monotone requires r > 3")
        pair = inner_product(g_apply(u1, params) - g_apply(u2, params), w)
        shift = eta2(mu, beta, r) * norm(w, "H") ** 2
        scale = mu * norm(w, "V") ** 2 + abs(pair) + shift
        return OperatorProbeReport.inequality(which, 0.0, pair + shift, scale, rel_tol)
    if which == "monotone":
        if r != 3 or 2 * beta * mu < 1:
            raise PreconditionError(f"monotone requires r = 3 and 2*beta*mu >= 1, got r={r}, 2*beta*mu={2 * beta * mu:g}")
        pair = inner_product(g_apply(u1, params) - g_apply(u2, params), w)
        return OperatorProbeReport.inequality(which, 0.0, pair, norm(w, "V") ** 2, rel_tol)
    if which == "lr1_difference":
        lhs = lr1_power(w, r)
        rhs = 2.0 ** (r - 2) * (weighted_norm_sq(u1, w, r, m) + weighted_norm_sq(u2, w, r, m))
        return OperatorProbeReport.inequality(which, lhs, rhs, max(lhs, rhs), rel_tol)
    if which == "convective_difference":
        if r <= 3:
            raise PreconditionError("convective_difference requires r > 3")
        lhs = abs(trilinear_b(w, w, u2))
        rhs = (
            0.25 * mu * norm(w, "V") ** 2
            + beta / 8.0 * weighted_norm_sq(u2, w, r, m)
            + eta1(mu, beta, r) * norm(w, "H") ** 2
        )
        return OperatorProbeReport.inequality(which, lhs, rhs, max(lhs, rhs), rel_tol)
    raise ValueError(f"unknown monotonicity probe {which!r}")


def skew_probes(u: SpectralField, v: SpectralField, w: SpectralField, rel_tol: float = 1e-11) -> list[OperatorProbeReport]:
    """Skew symmetry b(u,v,w) = -b(u,w,v) and annihilation b(u,v,v) = 0."""
    scale = norm(u, "V") * norm(v, "V") * max(norm(v, "V"), norm(w, "V"))
    b_uvw = trilinear_b(u, v, w)
    b_uwv = trilinear_b(u, w, v)
    b_uvv = trilinear_b(u, v, v)
    return [
        OperatorProbeReport.identity("skew_symmetry", b_uvw, -b_uwv, rel_tol, scale),
        OperatorProbeReport.identity("annihilation", b_uvv, 0.0, rel_tol, scale),
    ]


def c_identity(u: SpectralField, r: int, rel_tol: float = 1e-9) -> OperatorProbeReport:
    """<C(u), u> = ||u||_{L^{r+1}}^{r+1}."""
    return OperatorProbeReport.identity("c_identity", inner_product(forchheimer(u, r), u), lr1_power(u, r), rel_tol)


def difference_identity(u1: SpectralField, u2: SpectralField, rel_tol: float = 1e-10) -> OperatorProbeReport:
    """<B(u1)-B(u2), w> = -<B(w, w), u2> with w = u1 - u2."""
    w = u1 - u2
    lhs = inner_product(convective(u1) - convective(u2), w)
    rhs = -trilinear_b(w, w, u2)
    scale = norm(w, "V") * norm(w, "V") * max(norm(u1, "V"), norm(u2, "V"))
    return OperatorProbeReport.identity("b_difference", lhs, rhs, rel_tol, scale)


def convective_interpolation_bound(u1: SpectralField, u2: SpectralField, r: int, rel_tol: float = 1e-9) -> OperatorProbeReport:
    """|<B(u1), u2>| <= ||u1||_{L^{r+1}}^{(r+1)/(r-1)} ||u1||_H^{(r-3)/(r-1)} ||u2||_V."""
    lhs = abs(inner_product(convective(u1), u2))
    lr = lr1_power(u1, r) ** (1.0 / (r + 1))
    rhs = lr ** ((r + 1) / (r - 1)) * norm(u1, "H") ** ((r - 3) / (r - 1)) * norm(u2, "V")
    return OperatorProbeReport.inequality("b_interpolation", lhs, rhs, rhs, rel_tol)


def convective_dual_bound(u: SpectralField, r: int, battery, rel_tol: float = 1e-9) -> OperatorProbeReport:
    """||B(u)||_{V'} <= ||u||_{L^{r+1}} ||u||_{L^{2(r+1)/(r-1)}}, V' norm from a test battery."""
    lhs = dual_norm_battery(convective(u), battery)
    rhs = norm(u, "Lp", p=r + 1) * norm(u, "Lp", p=2 * (r + 1) / (r - 1))
    return OperatorProbeReport.inequality("b_dual", lhs, rhs, rhs, rel_tol)


def ladyzhenskaya(u: SpectralField, rel_tol: float = 1e-9) -> OperatorProbeReport:
    """||u||_{L^4} <= sqrt(2) ||u||_{L^2}^{1/4} ||grad u||_{L^2}^{3/4}."""
    lhs = norm(u, "Lp", p=4)
    rhs = math.sqrt(2.0) * norm(u, "H") ** 0.25 * norm(u, "V") ** 0.75
    return OperatorProbeReport.inequality("ladyzhenskaya", lhs, rhs, rhs, rel_tol)


def gateaux_orders(u: SpectralField, v: SpectralField, r: int, hs=(1e-2, 1e-3, 1e-4)) -> tuple[list[float], list[float]]:
    """Central-difference errors of the Gateaux derivative and observed orders."""
    exact = forchheimer_gateaux(u, v, r)
    ref = norm(exact, "H")
    errs = []
    for h in hs:
        fd = (forchheimer(u + h * v, r) - forchheimer(u - h * v, r)) * (1.0 / (2 * h))
        errs.append(norm(fd - exact, "H") / ref)
    orders = [math.log(errs[i] / errs[i + 1]) / math.log(hs[i] / hs[i + 1]) for i in range(len(hs) - 1)]
    return errs, orders
