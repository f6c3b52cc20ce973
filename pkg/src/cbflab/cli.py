"""``cbflab`` command line: one subcommand per experiment.

Every subcommand reads an optional YAML config (the reference configuration
otherwise), writes CSV tables and binary snapshots carrying the config hash
into ``--out``, and prints a short verdict block.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import attractor as lab
from . import io
from . import rng as rngmod
from .config import ConfigError, RunConfig, load_config, reference_config
from .deterministic import (
    EnergyLedger,
    absorbing_radii,
    energy_equality_residual,
    gronwall_envelope_check,
    integrate,
    step_count,
)
from .spectral import max_divergence_ratio, norm, random_field, set_fft_workers
from .stochastic import alpha_bound_search, generate_two_sided_path, growth_diagnostic, moment_target
from .suite import run_suite

logger = logging.getLogger("cbflab")

TAG_INITIAL = "initial-data"


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _config(args, allow_noise_gate: bool = False) -> RunConfig:
    if args.config:
        cfg = load_config(args.config, allow_noise_gate)
    else:
        cfg = reference_config(allow_noise_gate)
    return cfg.with_overrides(
        allow_noise_gate,
        seed_omega=args.seed_omega,
        seed_init=args.seed_init,
        output=args.out,
        dt=getattr(args, "dt", None),
        T=getattr(args, "T", None),
        t0=getattr(args, "t0", None),
        epsilon=getattr(args, "epsilon", None),
    )


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _verdict(out: Path, title: str, lines: list[str], ok: bool) -> int:
    text = "\n".join([f"== {title} ==", *lines, "VERDICT " + ("PASS" if ok else "FAIL")]) + "\n"
    (out / f"{title}.verdict.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0 if ok else 1


def _initial(cfg: RunConfig, params, index: int = 0):
    """Seeded initial datum with H-norm equal to the attractor cloud radius."""
    gen = rngmod.generator(cfg.seed_init, TAG_INITIAL, index)
    return random_field(cfg.grid(), gen, h_norm=lab.cloud_radius(params, cfg.M0_margin), slope=-1.0)


# --- subcommands -----------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out, h = _out(cfg), cfg.config_hash()
    params = cfg.params()
    x0 = _initial(cfg, params)
    traj = integrate(x0, cfg.T, cfg.dt, params, save_every=step_count(cfg.T, cfg.dt))
    io.write_csv(out / "ledger.csv", EnergyLedger.COLUMNS, list(traj.ledger.rows()), h)
    io.write_snapshot(out / "final.cbf", [traj.final], cfg.r, float(traj.times[-1]), h)
    env = gronwall_envelope_check(traj, params, c_dt=1.0, M0_margin=cfg.M0_margin)
    res = energy_equality_residual(traj, params)
    half = integrate(x0, cfg.T, cfg.dt / 2, params, save_every=2 * step_count(cfg.T, cfg.dt))
    res_half = energy_equality_residual(half, params)
    order = math.log2(res / res_half) if res > 0 and res_half > 0 else math.inf
    div = max_divergence_ratio(traj.final)
    rad = absorbing_radii(params, cfg.M0_margin)
    probes = [
        ("gronwall_envelope", env.report.lhs, env.report.rhs, env.report.gap, env.report.gap >= -env.report.tolerance),
        ("energy_residual_order", order, 2.0, order - 2.0, order >= 2.0),
        ("divergence_ratio", div, 1e-12, 1e-12 - div, div <= 1e-12),
    ]
    io.write_csv(out / "probes.csv", ("name", "lhs", "rhs", "gap", "passed"), probes, h)
    lines = [
        f"T = {cfg.T:g}, dt = {cfg.dt:g}, steps = {len(traj.times) - 1}",
        f"G = {rad.grashof:.4g}, rho0 = {rad.rho0:.4g}, M0 = {rad.M0:.4g}",
        f"||u(T)||_H = {norm(traj.final, 'H'):.6g}",
        f"energy residual {res:.3e} at dt, {res_half:.3e} at dt/2",
        *(f"{p[0]}: lhs={p[1]:.3e} rhs={p[2]:.3e} {'ok' if p[4] else 'VIOLATED'}" for p in probes),
    ]
    return _verdict(out, "simulate", lines, all(p[4] for p in probes))


def cmd_ou_path(args) -> int:
    cfg = _config(args)
    out, h = _out(cfg), cfg.config_hash()
    model = cfg.noise_model()
    path = generate_two_sided_path(model, cfg.alpha_ou, cfg.dt, 0.0, cfg.T, cfg.seed_omega, cfg.mu)
    target = model.variances(cfg.mu, cfg.alpha_ou)
    emp = np.mean(np.abs(path.amps) ** 2, axis=(0, 2))
    rows = [
        (int(k[0]), int(k[1]), int(k[2]), float(lam), float(t), float(e), float(abs(e - t) / t))
        for k, lam, t, e in zip(model.kvecs, model.lam, target, emp)
    ]
    io.write_csv(out / "mode_variance.csv", ("kx", "ky", "kz", "lambda", "target", "time_average", "rel_err"), rows, h)
    H2 = model.norm_sq(path.amps, "H")
    V2 = model.norm_sq(path.amps, "V")
    io.write_csv(out / "path_norms.csv", ("t", "H2", "V2"), zip(path.times.tolist(), H2.tolist(), V2.tolist()), h)
    io.write_snapshot(out / "z_final.cbf", [path.z(path.t_max)], cfg.r, path.t_max, h)
    ens = float(2 * np.sum(2 * target))
    lines = [
        f"modes = {model.size} half-lattice wavevectors, s = {cfg.s_exponent:g}, alpha = {cfg.alpha_ou:g}",
        f"window [0, {path.t_max:g}] with dt = {cfg.dt:g}",
        f"time-average ||z||_H^2 = {float(np.mean(H2)):.6g}, stationary mean = {ens:.6g}",
        f"median per-mode variance rel err = {float(np.median([r[-1] for r in rows])):.3g}",
    ]
    return _verdict(out, "ou-path", lines, True)


def cmd_pullback(args) -> int:
    cfg = _config(args)
    out, h = _out(cfg), cfg.config_hash()
    params = cfg.params()
    path = generate_two_sided_path(cfg.noise_model(), cfg.alpha_ou, cfg.dt, -cfg.t0, 0.0, cfg.seed_omega, cfg.mu)
    initial = lab.ball_cloud(cfg.grid(), args.cloud_size, lab.cloud_radius(params, cfg.M0_margin), cfg.seed_init)
    snap = lab.pullback_snapshot(initial, path, cfg.epsilon, cfg.t0, params, cfg.dt)
    io.write_snapshot(out / "cloud.cbf", snap.states, cfg.r, 0.0, h)
    rows = [(i, norm(x, "H"), norm(y, "H"), norm(y, "V")) for i, (x, y) in enumerate(zip(initial.states, snap.states))]
    io.write_csv(out / "pullback.csv", ("point", "H_initial", "H_final", "V_final"), rows, h)
    spread = lab.semidistance(snap, lab.PointCloud(snap.states[:1], "first")) if len(snap) > 1 else 0.0
    lines = [
        f"cloud of {len(snap)} points pulled back over t0 = {cfg.t0:g} at eps = {cfg.epsilon:g}",
        f"initial H-radius {max(r[1] for r in rows):.4g} -> final {max(r[2] for r in rows):.4g}",
        f"spread of the snapshot (H) = {spread:.3e}",
    ]
    return _verdict(out, "pullback", lines, True)


def cmd_usc(args) -> int:
    cfg = _config(args)
    out, h = _out(cfg), cfg.config_hash()
    params = cfg.params()
    eps = _floats(args.eps)
    rep = lab.usc_experiment(
        eps,
        cfg.seed_omega,
        cfg.t0,
        params,
        args.cloud_size,
        cfg.noise_model(),
        dt=cfg.dt,
        alpha=cfg.alpha_ou,
        seed_init=cfg.seed_init,
        M0_margin=cfg.M0_margin,
    )
    io.write_csv(out / "usc.csv", ("epsilon", "distance"), zip(rep.epsilons, rep.distances), h)
    lines = [
        f"seed = {rep.seed}, t0 = {rep.t0:g}",
        *(f"eps = {e:<8g} d = {d:.6e}" for e, d in zip(rep.epsilons, rep.distances)),
        f"V-ball K radius = {rep.k_radius:.4g}, contains attractor sample: {rep.k_contains_attractor}",
        f"d/eps max/min ratio = {lab.linear_scaling_ratio(rep.epsilons, rep.distances):.4g}",
    ]
    return _verdict(out, "usc-experiment", lines, rep.verdict)


def cmd_cocycle(args) -> int:
    cfg = _config(args)
    out, h = _out(cfg), cfg.config_hash()
    params = cfg.params()
    model = cfg.noise_model()
    x = _initial(cfg, params)
    pairs = [(1.0, 1.0), (2.0, 1.0), (1.0, 3.0)]
    path = generate_two_sided_path(model, cfg.alpha_ou, cfg.dt, 0.0, max(t + s for t, s in pairs), cfg.seed_omega, cfg.mu)
    rows = []
    for t, s in pairs:
        res = lab.cocycle_residual(x, t, s, cfg.seed_omega, cfg.epsilon, params, model, cfg.dt, cfg.alpha_ou, path=path)
        tol = 1e-10 * max(1.0, norm(x, "H"))
        rows.append((t, s, res, tol, res <= tol))
    io.write_csv(out / "cocycle.csv", ("t", "s", "residual", "allowance", "passed"), rows, h)
    lines = [f"(t, s) = ({t:g}, {s:g}): residual {res:.3e} (allowance {tol:.1e})" for t, s, res, tol, _ in rows]
    return _verdict(out, "cocycle", lines, all(r[-1] for r in rows))


def cmd_continuity(args) -> int:
    cfg = _config(args)
    out, h = _out(cfg), cfg.config_hash()
    params = cfg.params()
    x = _initial(cfg, params)
    deltas = _floats(args.deltas)
    rows = lab.rds_continuity_experiment(x, deltas, cfg.seed_omega, cfg.T, params, cfg.noise_model(), cfg.epsilon, cfg.dt, cfg.alpha_ou)
    cols = ("delta", "sup_H", "int_V2", "int_Lr1", "envelope", "within_envelope")
    io.write_csv(out / "continuity.csv", cols, [(r.delta, r.sup_H, r.int_V2, r.int_Lr1, r.envelope, r.within_envelope) for r in rows], h)
    nz = [r for r in rows if r.delta > 0]
    orders = lab.observed_orders([r.delta for r in nz], [r.sup_H for r in nz]) if len(nz) > 1 else []
    ok = all(r.within_envelope for r in rows) and all(o >= 1 - 1e-9 for o in orders)
    lines = [
        *(f"delta = {r.delta:<8g} sup||y||_H = {r.sup_H:.3e}  envelope^(1/2) = {math.sqrt(r.envelope):.3e}" for r in nz),
        "observed orders: " + ", ".join(f"{o:.4f}" for o in orders),
    ]
    return _verdict(out, "continuity", lines, ok)


def cmd_kappa(args) -> int:
    cfg = _config(args)
    out, h = _out(cfg), cfg.config_hash()
    params = cfg.params()
    T_list = sorted(_floats(args.T_list))
    model = cfg.noise_model()
    alpha = cfg.alpha_ou
    if alpha == 0:
        # the radii are finite only once E||z||_X^4 meets the moment bound
        alpha = alpha_bound_search(model, moment_target(cfg.mu, params.lambda1), cfg.mu, 2000, cfg.seed_omega).alpha0
    path = generate_two_sided_path(model, alpha, cfg.dt, -T_list[-1], 0.0, cfg.seed_omega, cfg.mu)
    rep = lab.kappa_report(path, params, T_list)
    keys = sorted(rep.kappa_sq)
    rows = [(T, *(rep.kappa_sq[k][i] for k in keys), rep.weighted_integral[i], rep.tail[i]) for i, T in enumerate(rep.T_list)]
    io.write_csv(out / "kappa.csv", ("T", *keys, "weighted_integral", "tail"), rows, h)
    growth = growth_diagnostic(path, cfg.mu, params.lambda1, T_list[-1])
    lines = [
        f"alpha = {alpha:g}",
        *(f"{k}: {rep.kappa_sq[k][-1]:.6g} (relative change {rep.relative_change.get(k, float('nan')):.2e})" for k in keys),
        f"tail at T = {T_list[-1]:g}: {rep.tail[-1]:.3e}",
        "growth condition holds from t = " + (f"{growth.t0:g}" if growth.t0 is not None else "never in the window"),
    ]
    return _verdict(out, "kappa", lines, rep.tail[-1] < 1e-6 * max(1.0, rep.kappa_sq["kappa2"][-1]))


def cmd_verify(args) -> int:
    cfg = _config(args, allow_noise_gate=True)
    only = set(args.only.split(",")) if args.only else None
    if only:
        only = {int(o) if o.isdigit() else o for o in only}
    res = run_suite(cfg, out_dir=_out(cfg), only=only)
    sys.stdout.write(res.summary())
    return res.exit_code


# --- parser --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (reference configuration if omitted)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed-omega", type=int, help="noise path seed")
    common.add_argument("--seed-init", type=int, help="initial data seed")
    common.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    timing = argparse.ArgumentParser(add_help=False)
    timing.add_argument("--dt", type=float)
    timing.add_argument("--T", type=float, help="integration length")

    parser = argparse.ArgumentParser(prog="cbflab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common, timing], help="deterministic run with energy ledger")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ou-path", parents=[common, timing], help="sample an OU path and its statistics")
    p.set_defaults(func=cmd_ou_path)

    p = sub.add_parser("pullback", parents=[common, timing], help="pullback snapshot of an initial cloud")
    p.add_argument("--t0", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--cloud-size", type=int, default=4)
    p.set_defaults(func=cmd_pullback)

    p = sub.add_parser("usc-experiment", parents=[common, timing], help="distance to the attractor as eps -> 0")
    p.add_argument("--t0", type=float)
    p.add_argument("--eps", default="0.4,0.2,0.1,0.05", help="decreasing comma-separated list")
    p.add_argument("--cloud-size", type=int, default=3)
    p.set_defaults(func=cmd_usc)

    p = sub.add_parser("cocycle", parents=[common, timing], help="cocycle residuals on a frozen path")
    p.add_argument("--epsilon", type=float)
    p.set_defaults(func=cmd_cocycle)

    p = sub.add_parser("continuity", parents=[common, timing], help="continuity in initial data, noise and forcing")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--deltas", default="0.1,0.01,0.001")
    p.set_defaults(func=cmd_continuity)

    p = sub.add_parser("kappa", parents=[common, timing], help="tempered radii over growing windows")
    p.add_argument("--T-list", dest="T_list", default="25,50,100")
    p.set_defaults(func=cmd_kappa)

    p = sub.add_parser("verify", parents=[common], help="run the full verification battery")
    p.add_argument("--only", help="comma-separated check names or criterion numbers")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    set_fft_workers(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"{exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
