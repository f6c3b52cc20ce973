"""Time integration of the deterministic damped Navier-Stokes system

    du/dt + mu A u + B(u) + beta C(u) = f

and the energy/absorbing-set diagnostics built on it.

The scheme is an integrating-factor Heun method: the Stokes term is
integrated exactly mode by mode, the nonlinear terms and the forcing by an
explicit two-stage second-order rule.  The same stepping core drives the
transformed random system (see ``stochastic``), so that zero noise reproduces
the deterministic flow bit for bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson

from .operators import check_exponent, eta3
from .spectral import (
    Grid,
    SpectralField,
    _project,
    exact_pad,
    inner_product,
    norm,
    to_physical,
    to_spectral,
)

logger = logging.getLogger(__name__)

CFL_SAFETY = 0.5


class StepSizeError(ValueError):
    """Requested dt exceeds the stability bound; ``admissible_dt`` is the bound."""

    def __init__(self, dt: float, admissible_dt: float):
        super().__init__(f"dt={dt:g} exceeds the admissible step {admissible_dt:g}")
        self.dt = dt
        self.admissible_dt = admissible_dt


@dataclass(frozen=True, eq=False)
class CbfParams:
    """Model constants and the time-independent forcing.

    ``beta = 0`` is accepted as a diagnostic mode (damping frozen).  For
    r = 3 with 2 beta mu < 1 the parameters are accepted for simulation but
    listed in ``flags``, since monotonicity-based results do not apply.
    """

    mu: float
    beta: float
    r: int
    forcing: SpectralField
    alpha: float = 0.0

    def __post_init__(self):
        check_exponent(self.r)
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")

    @classmethod
    def unforced(cls, grid: Grid, mu=1.0, beta=1.0, r=3, alpha=0.0) -> "CbfParams":
        return cls(mu, beta, r, SpectralField.zeros(grid), alpha)

    @property
    def grid(self) -> Grid:
        return self.forcing.grid

    @property
    def L(self) -> float:
        return self.grid.L

    @property
    def lambda1(self) -> float:
        return self.grid.lambda1

    @property
    def flags(self) -> list[str]:
        out = []
        if self.beta == 0:
            out.append("beta = 0: damping frozen (diagnostic mode)")
        if self.r == 3 and 2 * self.beta * self.mu < 1:
            out.append(f"2*beta*mu = {2 * self.beta * self.mu:g} < 1 required for r = 3")
        return out

    def with_forcing(self, forcing: SpectralField) -> "CbfParams":
        return CbfParams(self.mu, self.beta, self.r, forcing, self.alpha)

    def with_beta(self, beta: float) -> "CbfParams":
        return CbfParams(self.mu, beta, self.r, self.forcing, self.alpha)


@dataclass
class EnergyLedger:
    """Scalars entering the energy estimates, one row per time level."""

    t: list = field(default_factory=list)
    H2: list = field(default_factory=list)
    V2: list = field(default_factory=list)
    Lr1: list = field(default_factory=list)
    AH2: list = field(default_factory=list)
    fu: list = field(default_factory=list)

    COLUMNS = ("t", "H2", "V2", "Lr1", "AH2", "fu")

    def append(self, t, H2, V2, Lr1, AH2, fu):
        for name, val in zip(self.COLUMNS, (t, H2, V2, Lr1, AH2, fu)):
            getattr(self, name).append(float(val))

    def array(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name))

    def rows(self):
        return zip(*(getattr(self, c) for c in self.COLUMNS))

    def __len__(self):
        return len(self.t)


@dataclass
class Trajectory:
    """Ledger at every step plus stored states at ``state_times``."""

    times: np.ndarray
    ledger: EnergyLedger
    states: list
    state_times: np.ndarray
    dt: float
    aux: dict = field(default_factory=dict)

    @property
    def initial(self) -> SpectralField:
        return self.states[0]

    @property
    def final(self) -> SpectralField:
        return self.states[-1]


# --- stepping core ----------------------------------------------------------


class Stepper:
    """Integrating-factor Heun step for a fixed grid, parameter set and dt."""

    def __init__(self, params: CbfParams, dt: float):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        g = params.grid
        self.params = params
        self.grid = g
        self.dt = float(dt)
        self.decay = np.exp(-params.mu * g.stokes_eigs * self.dt)
        self.mask = g.two_thirds_mask
        self.m = g.padded_size(exact_pad(g, params.r + 1, g.dealias_kmax))
        self.f = _project(params.forcing.coeffs * self.mask, g)
        self._iu = np.triu_indices(3)

    def _convective(self, c: np.ndarray) -> np.ndarray:
        u = to_physical(c)
        i, j = self._iu
        prod = to_spectral(u[i] * u[j])
        n = self.grid.n
        uu = np.empty((3, 3, n, n, n), dtype=complex)
        for a, (p, q) in enumerate(zip(i, j)):
            uu[p, q] = prod[a]
            uu[q, p] = prod[a]
        return 1j * np.einsum("j...,ij...->i...", self.grid.deriv_k, uu)

    def nonlinear(self, c: np.ndarray):
        """P(-B(u) - beta C(u)) + f on the 2/3 band; also max|u| and ||u||_{L^{r+1}}^{r+1}."""
        p = self.params
        up = to_physical(c, self.m)
        s = np.sum(up * up, axis=0)
        half = (p.r - 1) // 2
        w = s**half
        lr1 = self.grid.volume * float(np.mean(w * s))
        umax = math.sqrt(float(s.max()))
        rhs = -self._convective(c)
        if p.beta != 0:
            rhs = rhs - p.beta * to_spectral(w * up, self.grid.n)
        rhs = _project(rhs * self.mask, self.grid) + self.f
        return rhs, umax, lr1

    def admissible_dt(self, umax: float) -> float:
        p = self.params
        bounds = [math.inf]
        if umax > 0:
            bounds.append(self.grid.dx / umax)
            if p.beta > 0:
                bounds.append(1.0 / (p.beta * umax ** (p.r - 1)))
        return CFL_SAFETY * min(bounds)

    def advance(self, v: np.ndarray, eps: float = 0.0, z_n=None, z_np1=None, lift=None):
        """One step of the (possibly transformed) system.

        With eps = 0 this is the deterministic step.  Otherwise the nonlinear
        terms are evaluated at v + eps z and ``lift`` (the exactly integrated
        contribution of the eps*alpha*z term) is added to both stages.
        Returns (v_next, max|u_n|, ||u_n||_{L^{r+1}}^{r+1}).
        """
        E, dt = self.decay, self.dt
        u_n = v if eps == 0 else v + eps * z_n
        k1, umax, lr1 = self.nonlinear(u_n)
        bound = self.admissible_dt(umax)
        if dt > bound:
            raise StepSizeError(dt, bound)
        v_star = E * (v + dt * k1)
        if eps == 0:
            u_star = v_star
        else:
            v_star = v_star + eps * lift
            u_star = v_star + eps * z_np1
        k2, _, _ = self.nonlinear(u_star)
        v_next = E * v + (0.5 * dt) * (E * k1 + k2)
        if eps != 0:
            v_next = v_next + eps * lift
        v_next = _project(v_next * self.mask, self.grid)
        return v_next, umax, lr1

    def lr1(self, c: np.ndarray) -> float:
        up = to_physical(c, self.m)
        return self.grid.volume * float(np.mean(np.sum(up * up, axis=0) ** ((self.params.r + 1) // 2)))

    def record(self, ledger: EnergyLedger, t: float, c: np.ndarray, lr1: float | None = None):
        g = self.grid
        a2 = np.sum(np.abs(c) ** 2, axis=0)
        vol = g.volume
        if lr1 is None:
            lr1 = self.lr1(c)
        ledger.append(
            t,
            vol * np.sum(a2),
            vol * np.sum(g.stokes_eigs * a2),
            lr1,
            vol * np.sum(g.stokes_eigs**2 * a2),
            vol * np.real(np.vdot(self.f, c)),
        )


def step_count(T: float, dt: float) -> int:
    """Number of steps of size dt covering [0, T]; T must be a multiple of dt."""
    if T < 0:
        raise ValueError(f"T must be nonnegative, got {T}")
    k = round(T / dt)
    if abs(k * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"T={T:g} is not a multiple of dt={dt:g}")
    return int(k)


def step(u: SpectralField, dt: float, params: CbfParams) -> SpectralField:
    """One integrating-factor Heun step of the deterministic system."""
    st = Stepper(params, dt)
    c, _, _ = st.advance(u.coeffs)
    return SpectralField(u.grid, c)


def run_steps(stepper: Stepper, c0: np.ndarray, nsteps: int, t0: float, save_every, noise=None, keep_v=False):
    """Step loop shared by the deterministic and the transformed system.

    ``noise`` is None or a tuple (eps, z_coeffs(k), lift_coeffs(k)) of callables.
    Returns (ledger, states of u, state times, final v, optional v states).
    """
    dt = stepper.dt
    ledger = EnergyLedger()
    v = c0
    if noise is not None:
        eps, z_of, lift_of = noise

    def u_of(k, vv):
        return vv if noise is None else vv + eps * z_of(k)

    states, times = [u_of(0, v)], [t0]
    v_states = [v] if keep_v else None
    for k in range(nsteps):
        if noise is None:
            v_next, _, lr1 = stepper.advance(v)
            u_k = v
        else:
            zk, zk1 = z_of(k), z_of(k + 1)
            v_next, _, lr1 = stepper.advance(v, eps, zk, zk1, lift_of(k))
            u_k = v + eps * zk
        stepper.record(ledger, t0 + k * dt, u_k, lr1)
        v = v_next
        if keep_v:
            v_states.append(v)
        if save_every and (k + 1) % save_every == 0 and k + 1 < nsteps:
            states.append(u_of(k + 1, v))
            times.append(t0 + (k + 1) * dt)
    u_final = u_of(nsteps, v)
    stepper.record(ledger, t0 + nsteps * dt, u_final)
    if nsteps > 0:
        states.append(u_final)
        times.append(t0 + nsteps * dt)
    return ledger, states, times, v, v_states



def integrate(x0: SpectralField, T: float, dt: float, params: CbfParams, save_every: int | None = None) -> Trajectory:
    """Integrate from x0 over [0, T]; the ledger is filled at every step.

    States are stored every ``save_every`` steps (default: first and last only).
    """
    if x0.grid != params.grid:
        raise ValueError("initial state and forcing live on different grids")
    nsteps = step_count(T, dt)
    st = Stepper(params, dt)
    ledger, states, times, _, _ = run_steps(st, x0.coeffs * st.mask, nsteps, 0.0, save_every)
    g = params.grid
    return Trajectory(np.asarray(ledger.t), ledger, [SpectralField(g, c) for c in states], np.asarray(times), dt)


# --- diagnostics --------------------------------------------------------------


def grashof(params: CbfParams) -> float:
    """G = ||f||_H / (mu^2 lambda_1)."""
    if params.mu == 0:
        raise ValueError("mu = 0")
    return norm(params.forcing, "H") / (params.mu**2 * params.lambda1)


@dataclass(frozen=True)
class AbsorbingRadii:
    rho0: float
    grashof: float
    M0: float
    M1: float
    M2: float
    eta3: float
    r: int

    @property
    def v_radius(self) -> float:
        """Radius of the V-absorbing ball appropriate to r."""
        return self.M2 if self.r == 3 else self.M1


def absorbing_radii(params: CbfParams, M0_margin: float = 1.1) -> AbsorbingRadii:
    """H and V absorbing radii; for r = 3 the V radius is M2 (M1 is reported equal to it)."""
    if not M0_margin > 1:
        raise ValueError("M0_margin must exceed 1")
    mu, lam = params.mu, params.lambda1
    f2 = norm(params.forcing, "H") ** 2
    rho0 = math.sqrt(f2) / (mu * lam)
    M0 = M0_margin * rho0
    e3 = eta3(mu, params.beta, params.r) if params.r > 3 else 0.0
    M2 = math.sqrt(M0**2 / mu + f2 / (mu**2 * lam))
    if params.r > 3:
        M1 = math.sqrt((2 * e3 + 1) * M0**2 / mu + f2 / (mu**2 * lam))
    else:
        logger.info("r = 3: the V-radius is M2; M1 reported as M2")
        M1 = M2
    return AbsorbingRadii(rho0, grashof(params), M0, M1, M2, e3, params.r)


def envelope(t, x_norm_sq: float, params: CbfParams):
    """Upper bound ||x||^2 e^{-mu lambda1 t} + rho0^2 (1 - e^{-mu lambda1 t}) on ||u(t)||_H^2."""
    rad = absorbing_radii(params)
    e = np.exp(-params.mu * params.lambda1 * np.asarray(t))
    return x_norm_sq * e + rad.rho0**2 * (1 - e)


def envelope_entry_time(x_norm_sq: float, params: CbfParams, M0_margin: float = 1.1) -> float:
    """Time at which the envelope reaches M0^2 (0 if it starts inside)."""
    rad = absorbing_radii(params, M0_margin)
    if x_norm_sq <= rad.M0**2:
        return 0.0
    return math.log((x_norm_sq - rad.rho0**2) / (rad.M0**2 - rad.rho0**2)) / (params.mu * params.lambda1)


def entry_time(traj: Trajectory, radius: float, window: float) -> float | None:
    """First ledger time after which ||u||_H <= radius holds for the rest of the run,
    provided at least ``window`` time units of the run remain; else None."""
    h = np.sqrt(traj.ledger.array("H2"))
    t = traj.times
    outside = np.nonzero(h > radius)[0]
    idx = 0 if outside.size == 0 else outside[-1] + 1
    if idx >= len(t) or t[-1] - t[idx] < window:
        return None
    return float(t[idx])


@dataclass(frozen=True)
class EnvelopeCheck:
    report: "object"
    entry_time: float | None
    envelope_entry_time: float
    absorbed: bool


def gronwall_envelope_check(traj: Trajectory, params: CbfParams, c_dt: float = 0.0, M0_margin: float = 1.1):
    """Check ||u(t)||^2 <= envelope(t) + c_dt dt^2 t at every ledger time, and
    absorption into the M0 ball over a trailing window of 5/(mu lambda1)."""
    from .operators import OperatorProbeReport

    h2 = traj.ledger.array("H2")
    t = traj.times
    x2 = h2[0]
    bound = envelope(t, x2, params) + c_dt * traj.dt**2 * t
    slack = bound - h2
    worst = int(np.argmin(slack))
    rad = absorbing_radii(params, M0_margin)
    window = 5.0 / (params.mu * params.lambda1)
    t_in = entry_time(traj, rad.M0, window)
    absorbed = t_in is not None
    scale = max(x2, rad.rho0**2)
    rep = OperatorProbeReport(
        "gronwall_envelope",
        float(h2[worst]),
        float(bound[worst]),
        float(slack[worst]),
        bool(slack[worst] >= -1e-12 * scale and absorbed),
        1e-12 * scale,
    )
    return EnvelopeCheck(rep, t_in, envelope_entry_time(x2, params, M0_margin), absorbed)


def _trapezoid(y: np.ndarray, t: np.ndarray) -> float:
    return float(np.trapezoid(y, t)) if hasattr(np, "trapezoid") else float(np.trapz(y, t))


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def _cumulative(y: np.ndarray, t: np.ndarray, quadrature: str) -> np.ndarray:
    if quadrature == "trapezoid" or len(t) < 3:
        return _cumtrapz(y, t)
    if quadrature == "simpson":
        return np.concatenate([[0.0], cumulative_simpson(y, x=t)])
    raise ValueError(f"unknown quadrature {quadrature!r}")


def energy_equality_residual(traj: Trajectory, params: CbfParams, quadrature: str = "simpson") -> float:
    """max_t |balance(t)| / max(||x||^2, ||u(t)||^2) for the energy equality.

    Simpson quadrature keeps the time integrals' own error below the
    scheme's; with the trapezoid rule the quadrature error of fast-decaying
    modes dominates the residual.
    """
    led = traj.ledger
    t = traj.times
    h2 = led.array("H2")
    bal = (
        h2
        + 2 * params.mu * _cumulative(led.array("V2"), t, quadrature)
        + 2 * params.beta * _cumulative(led.array("Lr1"), t, quadrature)
        - h2[0]
        - 2 * _cumulative(led.array("fu"), t, quadrature)
    )
    scale = np.maximum(h2[0], h2)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale > 0, np.abs(bal) / np.where(scale > 0, scale, 1.0), 0.0)
    return float(rel.max()) if rel.size else 0.0


@dataclass(frozen=True)
class TimeAverageReport:
    window: tuple
    mean_V2: float
    mean_Lr1: float
    mean_AH2: float
    bound_V2: float
    bound_Lr1: float
    bound_AH2: float
    factor: float

    @property
    def passed_V2(self) -> bool:
        return self.mean_V2 <= self.factor * self.bound_V2

    @property
    def passed_Lr1(self) -> bool:
        return self.mean_Lr1 <= self.factor * self.bound_Lr1

    @property
    def passed_AH2(self) -> bool:
        return self.mean_AH2 <= self.factor * self.bound_AH2

    @property
    def passed(self) -> bool:
        return self.passed_V2 and self.passed_Lr1 and self.passed_AH2


def time_average_report(traj: Trajectory, params: CbfParams, window, factor: float = 1.05) -> TimeAverageReport:
    """Window means of ||u||_V^2, ||u||_{L^{r+1}}^{r+1}, ||Au||^2 against their long-time bounds."""
    t0, t1 = window
    t = traj.times
    tol = 1e-9 * max(1.0, abs(t[-1]))
    if t0 < t[0] - tol or t1 > t[-1] + tol or t1 <= t0:
        raise ValueError(f"window [{t0:g}, {t1:g}] outside trajectory [{t[0]:g}, {t[-1]:g}]")
    sel = (t >= t0 - tol) & (t <= t1 + tol)
    ts = t[sel]
    span = ts[-1] - ts[0]
    led = traj.ledger

    def mean(name):
        return _trapezoid(led.array(name)[sel], ts) / span

    mu, beta, lam = params.mu, params.beta, params.lambda1
    f2 = norm(params.forcing, "H") ** 2
    e3 = eta3(mu, beta, params.r) if params.r > 3 else 0.0
    bound_lr1 = f2 / (beta * mu * lam) if beta > 0 else math.inf
    return TimeAverageReport(
        (float(ts[0]), float(ts[-1])),
        mean("V2"),
        mean("Lr1"),
        mean("AH2"),
        f2 / (mu**2 * lam),
        bound_lr1,
        (e3 / (lam * mu) + 1) * 2 * f2 / mu,
        factor,
    )

