"""Finite-dimensional additive noise, Ornstein-Uhlenbeck paths and the
transformed random system.

The noise lives on the divergence-free Fourier modes 0 < |k| <= k_max with
weights q_k = lambda_k^{-2(s+1)}.  Each retained wavevector of the half
lattice carries two real polarizations e and a complex amplitude a, so that
the field is

    z(x) = sum_{k in half} sum_pol (a e e^{i k.x} + conj(a) e e^{-i k.x}) / sqrt(L^3).

With this normalization ||z||_H^2 = 2 sum |a|^2 and the stationary law of the
OU process  dz + (mu A + alpha) z dt = dW  has E|a|^2 = q_k / (2 (mu lambda_k + alpha)).

Paths live on the grid t_j = j dt and every Gaussian draw is addressed by
(seed, tag, j), so time shifts and substeps never desynchronize streams.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .deterministic import CbfParams, Stepper, Trajectory, run_steps, step_count
from .spectral import Grid, SpectralField

logger = logging.getLogger(__name__)

HS_THRESHOLD = 0.75


class NoiseConfigError(ValueError):
    """Noise parameters violate the admissibility condition."""


class PathRangeError(ValueError):
    """Requested time window is not covered by the path."""


class AlphaSearchError(RuntimeError):
    """No tested alpha met the moment target."""


# --- noise model --------------------------------------------------------------


def _half_lattice(k_max: float) -> np.ndarray:
    """Integer vectors with 0 < |k| <= k_max whose first nonzero entry is positive."""
    m = int(math.floor(k_max))
    rng_ = np.arange(-m, m + 1)
    kx, ky, kz = np.meshgrid(rng_, rng_, rng_, indexing="ij")
    k = np.stack([kx.ravel(), ky.ravel(), kz.ravel()], axis=1)
    k2 = np.sum(k**2, axis=1)
    keep = (k2 > 0) & (k2 <= k_max**2 + 1e-9)
    k = k[keep]
    first = np.where(k[:, 0] != 0, k[:, 0], np.where(k[:, 1] != 0, k[:, 1], k[:, 2]))
    k = k[first > 0]
    order = np.lexsort((k[:, 2], k[:, 1], k[:, 0], np.sum(k**2, axis=1)))
    return k[order]


def _polarizations(k: np.ndarray) -> np.ndarray:
    """Two orthonormal real vectors perpendicular to each k, shape (m, 2, 3)."""
    out = np.empty((len(k), 2, 3))
    for i, kv in enumerate(k.astype(float)):
        khat = kv / np.linalg.norm(kv)
        ref = np.array([0.0, 0.0, 1.0]) if abs(khat[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(khat, ref)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(khat, e1)
        out[i, 0], out[i, 1] = e1, e2
    return out


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Spectral noise basis: half-lattice wavevectors, weights and polarizations."""

    grid: Grid
    s_exponent: float
    k_max: float
    kvecs: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    pol: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        """Number of half-lattice wavevectors."""
        return len(self.kvecs)

    @property
    def retained_modes(self) -> np.ndarray:
        """All retained wavevectors, both signs."""
        return np.concatenate([self.kvecs, -self.kvecs])

    def variances(self, mu: float, alpha: float) -> np.ndarray:
        """Stationary E|a|^2 per half-lattice wavevector."""
        return self.weights / (2.0 * (mu * self.lam + alpha))

    def _indices(self, sign: int):
        n = self.grid.n
        k = (sign * self.kvecs) % n
        return k[:, 0], k[:, 1], k[:, 2]

    def to_coeffs(self, a: np.ndarray) -> np.ndarray:
        """Amplitudes (m, 2) -> Fourier coefficient array (3, n, n, n)."""
        n = self.grid.n
        vec = np.einsum("mp,mpi->im", a, self.pol) / math.sqrt(self.grid.volume)
        c = np.zeros((3, n, n, n), dtype=complex)
        ix, iy, iz = self._indices(1)
        c[:, ix, iy, iz] = vec
        jx, jy, jz = self._indices(-1)
        c[:, jx, jy, jz] = np.conj(vec)
        return c

    def to_field(self, a: np.ndarray) -> SpectralField:
        return SpectralField(self.grid, self.to_coeffs(a))

    def amplitudes(self, u: SpectralField) -> np.ndarray:
        """Project a field onto the noise basis, shape (m, 2)."""
        ix, iy, iz = self._indices(1)
        c = u.coeffs[:, ix, iy, iz]
        return np.einsum("im,mpi->mp", c, self.pol) * math.sqrt(self.grid.volume)

    def norm_sq(self, a: np.ndarray, kind: str = "H") -> np.ndarray:
        """Squared H, V or DA norm of amplitude arrays (..., m, 2)."""
        p = np.sum(np.abs(a) ** 2, axis=-1)
        w = {"H": 1.0, "V": self.lam, "DA": self.lam**2}[kind.upper()]
        return 2.0 * np.sum(p * w, axis=-1)


def build_noise_model(grid: Grid, s_exponent: float, k_max: float) -> NoiseModel:
    """Noise basis on 0 < |k| <= k_max with weights lambda_k^{-2(s+1)}.

    The weights satisfy the Hilbert-Schmidt condition needed for an X-valued
    OU process if and only if s > 3/4.
    """
    if not s_exponent > HS_THRESHOLD:
        raise NoiseConfigError(
            f"s_exponent = {s_exponent:g}: the noise covariance is Hilbert-Schmidt "
            f"into the required space if and only if s > 3/4"
        )
    if not 0 < k_max <= grid.n / 3:
        raise NoiseConfigError(f"k_max must lie in (0, n/3] = (0, {grid.n / 3:g}], got {k_max:g}")
    k = _half_lattice(k_max)
    lam = grid.scale**2 * np.sum(k**2, axis=1).astype(float)
    q = lam ** (-2.0 * (s_exponent + 1.0))
    return NoiseModel(grid, float(s_exponent), float(k_max), k, lam, q, _polarizations(k))


@dataclass(frozen=True)
class ShellCheck:
    shells: np.ndarray
    sums: np.ndarray
    slope: float
    decreasing: bool

    @property
    def passed(self) -> bool:
        return self.decreasing and self.slope < -1.0


def shell_sum_check(grid: Grid, s_exponent: float, m_min: int = 4) -> ShellCheck:
    """Finite proxy for sum_k q_k lambda_k^2 < infinity.

    Shell sums S_m of lambda^{-2s} over m <= |k| < m+1 behave like
    m^{2 - 4s}; the series converges iff the log-log slope is below -1,
    i.e. iff s > 3/4.
    """
    k2 = grid.k2.astype(float)
    kk = np.sqrt(k2)
    lam = grid.stokes_eigs
    shells = np.arange(m_min, grid.n // 2)
    sums = []
    for m in shells:
        sel = (kk >= m) & (kk < m + 1)
        sums.append(np.sum(lam[sel] ** (-2.0 * s_exponent)))
    sums = np.asarray(sums)
    slope = float(np.polyfit(np.log(shells), np.log(sums), 1)[0])
    return ShellCheck(shells, sums, slope, bool(np.all(np.diff(sums) < 0)))


# --- OU sampling (amplitude level) --------------------------------------------


def _complex_normal(xi: np.ndarray) -> np.ndarray:
    """(..., 2) real normals -> unit-variance complex normals (E|w|^2 = 1)."""
    return (xi[..., 0] + 1j * xi[..., 1]) / math.sqrt(2.0)


def stationary_amplitudes(model: NoiseModel, mu: float, alpha: float, xi: np.ndarray) -> np.ndarray:
    """Map real normals of shape (..., m, 2, 2) to stationary amplitudes (..., m, 2)."""
    sd = np.sqrt(model.variances(mu, alpha))[:, None]
    return sd * _complex_normal(xi)


def ou_stationary_sample(model: NoiseModel, alpha: float, rng: np.random.Generator, mu: float = 1.0) -> SpectralField:
    """One draw from the stationary OU law."""
    xi = rng.standard_normal((model.size, 2, 2))
    return model.to_field(stationary_amplitudes(model, mu, alpha, xi))


def ou_transition(model: NoiseModel, mu: float, alpha: float, dt: float):
    """Decay factor and innovation standard deviation of the exact OU update."""
    c = mu * model.lam + alpha
    decay = np.exp(-c * dt)
    sd = np.sqrt(model.weights * -np.expm1(-2 * c * dt) / (2 * c))
    return decay[:, None], sd[:, None]


def ou_step_amplitudes(a: np.ndarray, dt: float, model: NoiseModel, mu: float, alpha: float, xi: np.ndarray) -> np.ndarray:
    decay, sd = ou_transition(model, mu, alpha, dt)
    return decay * a + sd * _complex_normal(xi)


def ou_step_exact(z: SpectralField, dt: float, model: NoiseModel, alpha: float, rng: np.random.Generator, mu: float = 1.0) -> SpectralField:
    """Exact-in-distribution OU update over dt."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    xi = rng.standard_normal((model.size, 2, 2))
    return model.to_field(ou_step_amplitudes(model.amplitudes(z), dt, model, mu, alpha, xi))


def _joint_increment_coeffs(model: NoiseModel, mu: float, alpha: float, dt: float):
    """Coefficients turning two normals into the correlated pair (J, I).

    J = int e^{-mu A (t+dt-s)} dW and I = int e^{-(mu A + alpha)(t+dt-s)} dW
    over one step share the same Wiener increments; J does not depend on alpha.
    """
    m = mu * model.lam
    c = m + alpha
    var_j = model.weights * -np.expm1(-2 * m * dt) / (2 * m)
    var_i = model.weights * -np.expm1(-2 * c * dt) / (2 * c)
    cov = model.weights * -np.expm1(-(c + m) * dt) / (c + m)
    sj = np.sqrt(var_j)
    a_i = cov / sj
    b_i = np.sqrt(np.maximum(var_i - a_i**2, 0.0))
    return sj[:, None], a_i[:, None], b_i[:, None]


# --- two-sided paths ------------------------------------------------------------

TAG_STATIONARY = "ou-stationary"
TAG_INCREMENT = "ou-increment"


def _snap(t: float, dt: float, how: str) -> int:
    x = t / dt
    j = round(x)
    if abs(j - x) > 1e-9:
        j = math.floor(x) if how == "down" else math.ceil(x)
        logger.info("time %g snapped to the path grid at %g", t, j * dt)
    return int(j)


class _PathView:
    """Shared interface of OuPath and OmegaShift."""

    def z(self, t: float) -> SpectralField:
        return self.model.to_field(self.amplitudes_at(t))

    def covers(self, t0: float, t1: float) -> bool:
        tol = 1e-9 * max(1.0, abs(t0), abs(t1))
        return t0 >= self.t_min - tol and t1 <= self.t_max + tol


@dataclass(eq=False)
class OuPath(_PathView):
    """Stationary OU path on the grid t_j = j dt, j_min <= j <= j_max.

    ``amps[i]`` is z(t_{j_min + i}) and ``jinc[i]`` the alpha-free stochastic
    convolution increment over [t_{j_min + i}, t_{j_min + i + 1}].
    """

    model: NoiseModel
    alpha: float
    mu: float
    dt: float
    j_min: int
    j_max: int
    seed: int
    amps: np.ndarray = field(repr=False)
    jinc: np.ndarray = field(repr=False)

    @property
    def t_min(self) -> float:
        return self.j_min * self.dt

    @property
    def t_max(self) -> float:
        return self.j_max * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.j_min, self.j_max + 1) * self.dt

    @classmethod
    def zeros(cls, model: NoiseModel, dt: float, t_min: float, t_max: float, mu: float = 1.0, alpha: float = 0.0) -> "OuPath":
        """Path with all innovations suppressed (z identically zero)."""
        j0, j1 = _snap(t_min, dt, "down"), _snap(t_max, dt, "up")
        amps = np.zeros((j1 - j0 + 1, model.size, 2), dtype=complex)
        return cls(model, alpha, mu, dt, j0, j1, 0, amps, np.zeros_like(amps[:-1]))

    def index(self, t: float) -> int:
        """Row of the path array at time t (snapped to the grid)."""
        j = _snap(t, self.dt, "down")
        if not self.j_min <= j <= self.j_max:
            raise PathRangeError(f"t={t:g} outside path window [{self.t_min:g}, {self.t_max:g}]")
        return j - self.j_min

    def amplitudes_at(self, t: float) -> np.ndarray:
        return self.amps[self.index(t)]

    def shift(self, s: float) -> "OmegaShift":
        return OmegaShift(self, s)

    def segment(self, t_start: float, nsteps: int, stride: int):
        """Amplitudes at t_start + k*stride*dt (k = 0..nsteps) and the aggregated
        alpha-free increments over each coarse step."""
        i0 = self.index(t_start)
        i1 = i0 + nsteps * stride
        if i1 > len(self.amps) - 1:
            raise PathRangeError(
                f"window [{t_start:g}, {t_start + nsteps * stride * self.dt:g}] exceeds path end {self.t_max:g}"
            )
        a = self.amps[i0 : i1 + 1 : stride]
        if stride == 1:
            J = self.jinc[i0:i1]
        else:
            E = np.exp(-self.mu * self.model.lam * self.dt)[:, None]
            J = np.zeros((nsteps, self.model.size, 2), dtype=complex)
            for k in range(nsteps):
                acc = np.zeros((self.model.size, 2), dtype=complex)
                for i in range(stride):
                    acc = E * acc + self.jinc[i0 + k * stride + i]
                J[k] = acc
        return a, J


@dataclass(eq=False)
class OmegaShift(_PathView):
    """Time-shifted view: z(theta_s omega)(t) = z(omega)(t + s)."""

    path: OuPath
    s: float

    def __post_init__(self):
        self._js = _snap(self.s, self.path.dt, "down")

    model = property(lambda self: self.path.model)
    alpha = property(lambda self: self.path.alpha)
    mu = property(lambda self: self.path.mu)
    dt = property(lambda self: self.path.dt)
    seed = property(lambda self: self.path.seed)

    @property
    def t_min(self) -> float:
        return (self.path.j_min - self._js) * self.dt

    @property
    def t_max(self) -> float:
        return (self.path.j_max - self._js) * self.dt

    def amplitudes_at(self, t: float) -> np.ndarray:
        return self.path.amplitudes_at(t + self._js * self.dt)

    def shift(self, s: float) -> "OmegaShift":
        return OmegaShift(self.path, self._js * self.dt + s)

    def segment(self, t_start: float, nsteps: int, stride: int):
        return self.path.segment(t_start + self._js * self.dt, nsteps, stride)


def generate_two_sided_path(
    model: NoiseModel, alpha: float, dt: float, t_min: float, t_max: float, seed: int, mu: float = 1.0
) -> OuPath:
    """Stationary OU path on [t_min, t_max] (snapped outward to the dt grid).

    z(t_min) is drawn from the stationary law at address (seed, stationary,
    j_min); the step from t_j to t_{j+1} uses address (seed, increment, j)
    for the correlated pair of alpha-dependent and alpha-free increments.
    """
    if t_min > 0 or t_max < 0:
        raise ValueError(f"need t_min <= 0 <= t_max, got [{t_min:g}, {t_max:g}]")
    if not dt > 0 or alpha < 0:
        raise ValueError("dt must be positive and alpha nonnegative")
    j0, j1 = _snap(t_min, dt, "down"), _snap(t_max, dt, "up")
    m = model.size
    amps = np.empty((j1 - j0 + 1, m, 2), dtype=complex)
    jinc = np.empty((j1 - j0, m, 2), dtype=complex)
    amps[0] = stationary_amplitudes(model, mu, alpha, rngmod.normals(seed, TAG_STATIONARY, j0, (m, 2, 2)))
    decay, _ = ou_transition(model, mu, alpha, dt)
    sj, ai, bi = _joint_increment_coeffs(model, mu, alpha, dt)
    for i, j in enumerate(range(j0, j1)):
        xi = rngmod.normals(seed, TAG_INCREMENT, j, (2, m, 2, 2))
        w1, w2 = _complex_normal(xi[0]), _complex_normal(xi[1])
        jinc[i] = sj * w1
        amps[i + 1] = decay * amps[i] + ai * w1 + bi * w2
    return OuPath(model, float(alpha), float(mu), float(dt), j0, j1, int(seed), amps, jinc)


# --- moment bounds ----------------------------------------------------------------


def x_norm_fourth_moment(model: NoiseModel, mu: float, alpha: float, xi: np.ndarray) -> float:
    """Monte-Carlo E ||z||_X^4 with ||.||_X = ||.||_V + ||A .||_H, from normals xi (N, m, 2, 2)."""
    a = stationary_amplitudes(model, mu, alpha, xi)
    x = np.sqrt(model.norm_sq(a, "V")) + np.sqrt(model.norm_sq(a, "DA"))
    return float(np.mean(x**4))


@dataclass(frozen=True)
class AlphaSearchResult:
    alpha0: float
    target: float
    alphas: tuple
    estimates: tuple


def alpha_grid(max_exponent: int = 64) -> list[float]:
    return [0.0] + [float(2**j) for j in range(max_exponent + 1)]


def alpha_bound_search(
    model: NoiseModel, target: float, mu: float = 1.0, samples: int = 10_000, seed: int = 0, max_exponent: int = 64
) -> AlphaSearchResult:
    """Smallest alpha on {0, 1, 2, 4, ...} with Monte-Carlo E||z_alpha(0)||_X^4 <= target.

    All grid points share the same normals, so the estimates are monotone in
    alpha exactly rather than only within sampling error.
    """
    if not target > 0:
        raise ValueError("target must be positive")
    xi = rngmod.normals(seed, "alpha-search", 0, (samples, model.size, 2, 2))
    alphas, ests = [], []
    for a in alpha_grid(max_exponent):
        e = x_norm_fourth_moment(model, mu, a, xi)
        alphas.append(a)
        ests.append(e)
        if e <= target:
            return AlphaSearchResult(a, target, tuple(alphas), tuple(ests))
    raise AlphaSearchError(f"E||z||_X^4 stays above {target:g} for alpha <= 2^{max_exponent}")


def moment_target(mu: float, lambda1: float) -> float:
    """mu^4 lambda_1 / 432."""
    return mu**4 * lambda1 / 432.0


@dataclass(frozen=True)
class GrowthDiagnostic:
    t: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    t0: float | None


def growth_diagnostic(path, mu: float, lambda1: float, T: float) -> GrowthDiagnostic:
    """(216/mu^3) int_{-t}^0 ||z||_V^4 against mu lambda1 t / 2 for t in (0, T];
    t0 is the first t after which the inequality holds throughout the window."""
    n = step_count(T, path.dt)
    a, _ = path.segment(-n * path.dt, n, 1)
    v4 = path.model.norm_sq(a, "V") ** 2
    v4 = v4[::-1]  # index k now corresponds to time -k dt
    integ = np.concatenate([[0.0], np.cumsum(0.5 * (v4[1:] + v4[:-1]) * path.dt)])
    t = np.arange(n + 1) * path.dt
    lhs = 216.0 / mu**3 * integ
    rhs = mu * lambda1 * t / 2
    bad = np.nonzero(lhs[1:] > rhs[1:])[0]
    if bad.size == 0:
        t0 = float(t[1]) if n else 0.0
    elif bad[-1] + 2 <= n:
        t0 = float(t[bad[-1] + 2])
    else:
        t0 = None
    return GrowthDiagnostic(t[1:], lhs[1:], rhs[1:], t0)


# --- transformed random system ------------------------------------------------------


def integrate_transformed(
    v0: SpectralField,
    path,
    epsilon: float,
    T: float,
    dt: float,
    params: CbfParams,
    t_start: float = 0.0,
    save_every: int | None = None,
    z_offset: SpectralField | None = None,
    keep_v: bool = False,
) -> Trajectory:
    """Integrate dv/dt = -mu A v - B(v + eps z) - beta C(v + eps z) + eps alpha z + f.

    States and ledger describe u = v + eps z.  The eps*alpha*z term is
    integrated exactly through the OU relation, which makes u independent
    of the path's alpha up to round-off.  ``z_offset`` adds a constant field
    to z (perturbed-path experiments).  ``aux['v_final']`` holds v(T).
    """
    if v0.grid != params.grid:
        raise ValueError("initial state and forcing live on different grids")
    if not 0 <= epsilon <= 1:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    nsteps = step_count(T, dt)
    stepper = Stepper(params, dt)
    c0 = v0.coeffs * stepper.mask
    noise = None
    if epsilon != 0:
        if abs(path.mu - params.mu) > 1e-15 * params.mu:
            raise ValueError(f"path generated with mu={path.mu:g}, system has mu={params.mu:g}")
        stride = round(dt / path.dt)
        if stride < 1 or abs(stride * path.dt - dt) > 1e-9 * dt:
            raise ValueError(f"dt={dt:g} is not a multiple of the path step {path.dt:g}")
        if not path.covers(t_start, t_start + T):
            raise PathRangeError(
                f"path window [{path.t_min:g}, {path.t_max:g}] does not cover [{t_start:g}, {t_start + T:g}]"
            )
        model = path.model
        a, J = path.segment(t_start, nsteps, stride)
        E_noise = np.exp(-params.mu * model.lam * dt)[:, None]
        z_coeffs = [model.to_coeffs(a[k]) for k in range(nsteps + 1)]
        extra = None
        if z_offset is not None:
            g = params.grid
            with np.errstate(divide="ignore", invalid="ignore"):
                fac = np.where(g.stokes_eigs > 0, -np.expm1(-params.mu * g.stokes_eigs * dt) / (params.mu * g.stokes_eigs), 0.0)
            extra = path.alpha * fac * z_offset.coeffs
            z_coeffs = [zc + z_offset.coeffs for zc in z_coeffs]

        def lift_of(k):
            lift = model.to_coeffs(E_noise * a[k] - a[k + 1] + J[k])
            return lift if extra is None else lift + extra

        noise = (float(epsilon), lambda k: z_coeffs[k], lift_of)
    ledger, states, times, v_final, v_states = run_steps(stepper, c0, nsteps, t_start, save_every, noise, keep_v)
    g = params.grid
    traj = Trajectory(np.asarray(ledger.t), ledger, [SpectralField(g, c) for c in states], np.asarray(times), dt)
    traj.aux["v_final"] = SpectralField(g, v_final)
    if keep_v:
        traj.aux["v_states"] = [SpectralField(g, c) for c in v_states]
    return traj
