"""Command-line experiment runner.

    magkg <subcommand> [--config FILE] [--set section.key=value ...]
                       [--out DIR] [--seed N] [--oracle]

Every run writes ``config.ini`` (the resolved configuration),
``summary.json`` (per-check values, tolerances and verdicts) and
``checks.csv`` into the output directory, plus subcommand data files.
Exit status: 0 when every gate passes, 1 when a gate fails, 2 for
configuration errors, 3 for runtime errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from magkg import __version__, kernels
from magkg.config import Config, ConfigError, load_config

log = logging.getLogger("magkg")

SCHEMA_VERSION = 1


@dataclass
class Check:
    name: str
    value: float | None
    tolerance: str
    passed: bool | None  # None marks an informational entry

    def as_dict(self) -> dict:
        v = self.value
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        return {"name": self.name, "value": v, "tolerance": self.tolerance, "passed": self.passed}


@dataclass
class RunResult:
    checks: list[Check] = field(default_factory=list)
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def gate(self, name, value, ok, tolerance):
        self.checks.append(Check(name, None if value is None else float(value), tolerance, bool(ok)))

    def info(self, name, value, note=""):
        self.checks.append(Check(name, None if value is None else float(value), note, None))


# -- shared builders -----------------------------------------------------------

def build_grid(cfg: Config):
    from magkg.grid import make_grid
    return make_grid(cfg["grid"]["n"], cfg["grid"]["L"])


def build_potential(cfg: Config, grid):
    from magkg.potentials import make_potential
    c = cfg["potential"]
    kind = c["kind"]
    params = {"m": c["m"], "beta": c["beta"]}
    if kind == "gaussian-bump":
        params.update(a=c["a"], w=c["w"], c=c["c"], v0=c["v0"])
        if c["wV"] is not None:
            params["wV"] = c["wV"]
    elif kind == "scaled-well":
        params.update(g=c["g"], w=c["w"])
    return make_potential(kind, params, grid)


def build_state(cfg: Config, grid, rng):
    from magkg.grid import StateVector, gaussian, random_field
    d = cfg["data"]
    if d["kind"] == "gaussian":
        psi = gaussian(grid, d["width"], d["center"])
    else:
        psi = random_field(grid, rng, kcut=0.5 * np.pi / grid.h, envelope=d["width"])
    return StateVector(psi, np.zeros_like(psi))


def krylov_spec(cfg: Config):
    from magkg.krylov import KrylovSpec
    e = cfg["evolution"]
    return KrylovSpec(max_dim=e["max_dim"], tol=e["krylov_tol"])


def evolution_plan(cfg: Config):
    from magkg.evolution import EvolutionPlan
    e = cfg["evolution"]
    return EvolutionPlan(e["method"], e["dt"], spec=krylov_spec(cfg))


def band_cutoff(cfg: Config, m: float):
    from magkg.evolution import CutoffSpec
    s = cfg["spectral_rep"]
    return CutoffSpec("band", m, lo=max(s["lo"], m), hi=s["hi"], ramp=s["ramp"])


# -- subcommands -----------------------------------------------------------------

def cmd_check_potential(cfg, args, rng) -> RunResult:
    from magkg.potentials import check_admissible
    grid = build_grid(cfg)
    p = build_potential(cfg, grid)
    C, rep = check_admissible(p, cfg["potential"]["beta"])
    r = RunResult()
    r.gate("admissible", C, rep.admissible and np.isfinite(C), "finite C, beta > 3")
    r.gate("max_off_boundary", float(rep.on_boundary), not rep.on_boundary, "maximum away from faces")
    r.extra["admissibility"] = rep.as_dict()
    r.tables["admissibility.csv"] = (["C_fit", "beta", "x", "y", "z", "on_boundary"],
                                     [[C, rep.beta, *rep.location, int(rep.on_boundary)]])
    return r


def _series(cfg, rng):
    from magkg.analysis import run_decay_experiment
    grid = build_grid(cfg)
    p = build_potential(cfg, grid)
    state = build_state(cfg, grid, rng)
    d = cfg["decay"]
    out = []
    for sigma in d["sigma"]:
        branches = run_decay_experiment(p, state, sigma, evolution_plan(cfg), d["split"],
                                        t_lo=d["t_lo"], t_max=d["t_max"],
                                        per_decade=d["per_decade"], config_hash=cfg.hash)
        out.extend(branches.values())
    return out


def _series_table(series):
    rows = [[repr(float(t)), repr(float(v)), s.sigma, s.branch, s.config_hash]
            for s in series for t, v in zip(s.times, s.norms)]
    return ["t", "norm", "sigma", "branch", "config_hash"], rows


def cmd_evolve(cfg, args, rng) -> RunResult:
    series = _series(cfg, rng)
    r = RunResult()
    for s in series:
        r.info(f"norm_t0[{s.branch},sigma={s.sigma:g}]", s.norms[0])
        r.info(f"norm_tmax[{s.branch},sigma={s.sigma:g}]", s.norms[-1], f"t={s.t_max:.4g}")
    r.tables["series.csv"] = _series_table(series)
    return r


def cmd_decay_fit(cfg, args, rng) -> RunResult:
    from magkg.analysis import fit_decay
    d = cfg["decay"]
    series = _series(cfg, rng)
    r = RunResult()
    rows = []
    for s in series:
        fit = fit_decay(s, d["window"], r2_min=d["r2_min"], expect_decay=True)
        tag = f"[{s.branch},sigma={s.sigma:g}]"
        if s.branch in ("full", "low"):
            r.gate("exponent" + tag, fit.exponent, d["expect_lo"] <= fit.exponent <= d["expect_hi"],
                   f"[{d['expect_lo']}, {d['expect_hi']}]")
            r.gate("r2" + tag, fit.r2, fit.r2 >= d["r2_min"], f">= {d['r2_min']}")
        else:
            r.info("exponent" + tag, fit.exponent, "reported, not gated")
        rows.append([s.branch, s.sigma, fit.exponent, fit.amplitude, *fit.window, fit.r2, fit.samples])
    r.tables["series.csv"] = _series_table(series)
    r.tables["fits.csv"] = (["branch", "sigma", "exponent", "amplitude", "t_lo", "t_hi", "r2", "samples"],
                            rows)
    return r


def cmd_resolvent_scan(cfg, args, rng) -> RunResult:
    from magkg.resolvent import (expected_exponent, fit_loglog, low_energy_derivative_norm,
                                 ray_point, target_operator_norm)
    grid = build_grid(cfg)
    p = build_potential(cfg, grid)
    s = cfg["scan"]
    name, *rest = s["target"]
    target = (name, *[int(v) for v in rest])
    radii = np.geomspace(s["r_min"], s["r_max"], s["samples"])
    if name == "Zca":
        # low-energy branch: omega -> 0 along the negative axis, whole-space solves
        omegas = [complex(-r) for r in radii]
        norms = [low_energy_derivative_norm(p, -r, s["sigma"], target[1], rng, s["probes"])
                 for r in radii]
    else:
        omegas = [ray_point(s["ray"], r) for r in radii]
        norms = [target_operator_norm(p, target, w, s["sigma"], rng, s["probes"],
                                      tol=cfg["resolvent"]["tol"]) for w in omegas]
    fit = fit_loglog(np.abs(np.asarray(omegas)), np.asarray(norms))
    exp = expected_exponent(target)
    r = RunResult()
    r.gate("slope", fit.exponent, abs(fit.exponent - exp) <= s["slope_tol"],
           f"{exp:+.3f} +- {s['slope_tol']}")
    r.gate("r2", fit.r2, fit.r2 >= s["r2_min"], f">= {s['r2_min']}")
    r.tables["scan.csv"] = (["omega_re", "omega_im", "abs_omega", "norm"],
                            [[w.real, w.imag, abs(w), v] for w, v in zip(omegas, norms)])
    return r


def cmd_lap(cfg, args, rng) -> RunResult:
    from magkg.grid import random_field
    from magkg.operators import DENSE_MAX_N, dense_oracle
    from magkg.resolvent import LapSchedule, lap_limit, stone_surrogate
    from magkg.grid import weighted_norm
    grid = build_grid(cfg)
    p = build_potential(cfg, grid)
    c = cfg["lap"]
    f = random_field(grid, rng, kcut=0.5 * np.pi / grid.h, envelope=0.4 * grid.L)
    res = lap_limit(p, c["omega"], c["side"], f, LapSchedule(c["eps0"], c["ratio"], c["count"]),
                    c["sigma"], whole_space=c["whole_space"])
    r = RunResult()
    run = best = 0
    for q in res.ratios:
        run = run + 1 if q <= c["ratio_max"] else 0
        best = max(best, run)
    r.gate("decreasing_steps", best, best >= c["min_steps"],
           f">= {c['min_steps']} consecutive ratios <= {c['ratio_max']}")
    r.info("failure_flag", float(res.failed))
    r.info("observed_order", res.order)
    if args.oracle and grid.n <= DENSE_MAX_N and not c["whole_space"]:
        H = dense_oracle(p, "H")
        eta = float(res.eps[-1])
        ref = stone_surrogate(H, c["omega"], c["side"], f, eta)
        err = weighted_norm(grid, res.u_limit - ref, 0, -c["sigma"]) / weighted_norm(grid, ref, 0, -c["sigma"])
        r.gate("stone_match", err, err <= 0.05, "<= 5e-2 relative")
    r.tables["lap.csv"] = (["j", "eps", "d", "ratio"], [list(row.values()) for row in res.table()])
    return r


def _dense_born_residual(p, omega, F, sigma):
    """Series identity with every resolvent from a dense solve."""
    from magkg.grid import StateVector
    from magkg.operators import dense_oracle
    from magkg.resolvent import state_norm
    grid = p.grid
    N = grid.size
    I2 = np.eye(2 * N)
    R = np.linalg.inv(dense_oracle(p, "K") - omega * I2)
    R0 = np.linalg.inv(dense_oracle(p.without_V(), "K") - omega * I2)
    Vm = np.zeros((2 * N, 2 * N), dtype=complex)
    Vm[N:, :N] = -1j * np.diag(p.V.ravel())
    x = F.stacked()
    lhs = R @ x
    rhs = R0 @ x - R0 @ (Vm @ (R0 @ x)) + R0 @ (Vm @ (R0 @ (Vm @ lhs)))
    diff = StateVector.from_stacked(grid, lhs - rhs)
    return state_norm(grid, diff, -sigma) / state_norm(grid, StateVector.from_stacked(grid, lhs), -sigma)


def cmd_born_check(cfg, args, rng) -> RunResult:
    from magkg.grid import StateVector, random_field
    from magkg.operators import DENSE_MAX_N
    from magkg.resolvent import ResolventQuery, born_series_residual, born_splitting_check
    grid = build_grid(cfg)
    p = build_potential(cfg, grid)
    b = cfg["born"]
    tol = cfg["resolvent"]["tol"]
    lim = b["tol_factor"] * tol
    f = random_field(grid, rng, kcut=0.5 * np.pi / grid.h, envelope=0.4 * grid.L)
    F = StateVector(f, random_field(grid, rng, kcut=0.5 * np.pi / grid.h, envelope=0.4 * grid.L))
    dense = args.oracle and grid.n <= DENSE_MAX_N
    r = RunResult()
    rows = []
    for z in b["z"]:
        wk = np.sqrt(complex(z) + p.m**2)  # principal branch: upper half plane off the real axis
        rep = born_series_residual(p, ResolventQuery(wk, tol), F, b["sigma"])
        spl = born_splitting_check(p, ResolventQuery(complex(z), tol), f)
        r.gate(f"series[z={z}]", rep.series_residual, rep.series_residual <= lim, f"<= {lim:.1e}")
        r.gate(f"splitting[z={z}]", spl.residual, spl.residual <= lim, f"<= {lim:.1e}")
        dres = float("nan")
        if dense:
            dres = _dense_born_residual(p, wk, F, b["sigma"])
            r.gate(f"series_oracle[z={z}]", dres, dres <= lim, f"<= {lim:.1e}")
        rows.append([z.real, z.imag, wk.real, wk.imag, rep.series_residual, rep.one_step_residual,
                     spl.residual, spl.inner_iterations, dres])
    r.tables["born.csv"] = (["z_re", "z_im", "omega_re", "omega_im", "series", "one_step",
                             "splitting", "iterations", "series_oracle"], rows)
    return r


def cmd_rkg_check(cfg, args, rng) -> RunResult:
    from magkg.grid import StateVector, random_field
    from magkg.operators import DENSE_MAX_N, dense_oracle
    from magkg.resolvent import ResolventQuery, kg_resolvent, state_norm
    grid = build_grid(cfg)
    p = build_potential(cfg, grid)
    k = cfg["rkg"]
    tol = cfg["resolvent"]["tol"]
    F = StateVector(random_field(grid, rng, kcut=0.5 * np.pi / grid.h),
                    random_field(grid, rng, kcut=0.5 * np.pi / grid.h))
    r = RunResult()
    rows = []
    Kd = dense_oracle(p, "K") if args.oracle and grid.n <= DENSE_MAX_N else None
    for w in k["omega"]:
        res = kg_resolvent(p, ResolventQuery(complex(w), tol), F)
        lim = k["tol_factor"] * tol
        r.gate(f"cross_method[omega={w}]", res.discrepancy, res.discrepancy <= lim, f"<= {lim:.1e}")
        odisc = float("nan")
        if Kd is not None:
            x = np.linalg.solve(Kd - complex(w) * np.eye(Kd.shape[0]), F.stacked())
            ref = StateVector.from_stacked(grid, x)
            odisc = state_norm(grid, res.state - ref) / state_norm(grid, ref)
            r.gate(f"oracle[omega={w}]", odisc, odisc <= k["oracle_tol"], f"<= {k['oracle_tol']:.0e}")
        rows.append([complex(w).real, complex(w).imag, res.discrepancy, odisc])
    r.tables["rkg.csv"] = (["omega_re", "omega_im", "cross_method", "oracle"], rows)
    return r


def cmd_mourre_check(cfg, args, rng) -> RunResult:
    from magkg import mourre
    from magkg.grid import make_grid
    from magkg.potentials import make_potential
    grid = build_grid(cfg)
    p = build_potential(cfg, grid)
    c = cfg["mourre"]
    r = RunResult()
    # a1 runs on its own well-resolved grid, where the boundary-mass rule can hold
    ga = make_grid(c["a1_n"], c["a1_L"])
    cal = mourre.calibrate_P(ga, p.m)
    r.info("calibration_c", cal.c, f"fit residual {cal.residual:.2e}")
    f = mourre.packet(ga, (0.3, 0.0, 0.0), mourre.balanced_width(ga))
    a1 = mourre.commutator_a1(make_potential("zero", {"m": p.m}, ga), f, cal.c)
    r.gate("a1_A0", a1.residual, a1.residual <= c["a1_tol"], f"<= {c['a1_tol']:.0e}")
    f8 = mourre.packet(grid, (0.0, 0.0, 0.0), 0.8)
    sq = mourre.sqr_residual(p, f8, c["nodes"])
    r.gate("sqr", sq, sq <= c["sqr_tol"], f"<= {c['sqr_tol']:.0e}")
    k1 = mourre.commutator_k1(p, None, cal.c, c["nodes"])
    r.gate("k1_two_path", k1.residual, k1.residual <= c["k1_tol"], f"<= {c['k1_tol']:.0e}")
    bound = mourre.mourre_bound(p, c["lam"], c["mu"], c["delta"], c=cal.c, nodes=c["nodes"])
    r.gate("ME1", bound.min_eig - bound.rhs, bound.passed, f"min_eig >= {bound.rhs:.6f}")
    r.info("ME1_min_eig", bound.min_eig)
    r.info("matrix_commutator_min_eig", bound.details["matrix_min_eig"], "zero-diagonal reference")
    r.extra["reports"] = [a1.as_dict(), k1.as_dict(), bound.as_dict()]
    r.tables["mourre.csv"] = (["identity", "residual", "min_eig", "rhs"],
                              [["a1", a1.residual, "", ""], ["sqr", sq, "", ""],
                               ["k1", k1.residual, "", ""], ["ME1", "", bound.min_eig, bound.rhs]])
    return r


def cmd_zero_mode_scan(cfg, args, rng) -> RunResult:
    from magkg.resolvent import zero_mode_scan
    grid = build_grid(cfg)
    z = cfg["zero_mode"]
    pc = cfg["potential"]
    params = ({"w": pc["w"], "m": pc["m"]} if z["family"] == "scaled-well"
              else {"a": pc["a"], "w": pc["w"], "v0": pc["v0"], "m": pc["m"]})
    scan = zero_mode_scan(grid, z["g"], z["sigma"], z["family"], params, z["method"])
    r = RunResult()
    r.gate("finite_curve", float(np.max(scan.sigma_min)), np.all(np.isfinite(scan.sigma_min)), "finite")
    r.info("argmin_g", scan.argmin)
    r.info("min_sigma", float(np.min(scan.sigma_min)), f"dip threshold {z['threshold']}")
    r.extra["dips"] = scan.dips(z["threshold"]).tolist()
    r.tables["zero_mode.csv"] = (["g", "sigma_min"], [[g, s] for g, s in zip(scan.g, scan.sigma_min)])
    return r


def cmd_spectral_rep_check(cfg, args, rng) -> RunResult:
    from magkg.evolution import spectral_rep_check
    grid = build_grid(cfg)
    p = build_potential(cfg, grid)
    s = cfg["spectral_rep"]
    state = build_state(cfg, grid, rng)
    chi = band_cutoff(cfg, p.m)
    res = spectral_rep_check(p, s["t"], state, chi, s["nodes"], s["sigma"],
                             tol=cfg["resolvent"]["tol"], spec=krylov_spec(cfg))
    r = RunResult()
    r.gate("rel_err", res.rel_err, res.rel_err <= s["tol"], f"<= {s['tol']:.1e}")
    r.tables["spectral_rep.csv"] = (["nodes", "eps", "rel_err"],
                                    [[res.nodes, ";".join(f"{e:.6g}" for e in res.eps), res.rel_err]])
    return r


def cmd_oracle_dump(cfg, args, rng) -> RunResult:
    from magkg.operators import dense_oracle
    grid = build_grid(cfg)
    p = build_potential(cfg, grid)
    out = Path(args.out)
    r = RunResult()
    rows = []
    for kind in cfg["oracle"]["kinds"]:
        M = dense_oracle(p, kind)
        fname = f"oracle_{kind}.npy"
        np.save(out / fname, M)
        if kind == "K":
            # K is self-adjoint for the energy form G = diag(H + m^2, 1)
            N = grid.size
            G = np.zeros_like(M)
            G[:N, :N] = dense_oracle(p, "H") + p.m**2 * np.eye(N)
            G[N:, N:] = np.eye(N)
            M = G @ M
        herm = float(np.linalg.norm(M - M.conj().T) / np.linalg.norm(M))
        r.info(f"hermitian_defect[{kind}]", herm, "energy form" if kind == "K" else "")
        rows.append([kind, fname, M.shape[0], M.shape[1], str(M.dtype)])
    r.tables["oracle_manifest.csv"] = (["kind", "file", "rows", "cols", "dtype"], rows)
    return r


COMMANDS = {
    "check-potential": cmd_check_potential,
    "evolve": cmd_evolve,
    "decay-fit": cmd_decay_fit,
    "resolvent-scan": cmd_resolvent_scan,
    "lap": cmd_lap,
    "born-check": cmd_born_check,
    "rkg-check": cmd_rkg_check,
    "mourre-check": cmd_mourre_check,
    "zero-mode-scan": cmd_zero_mode_scan,
    "spectral-rep-check": cmd_spectral_rep_check,
    "oracle-dump": cmd_oracle_dump,
}


def _write_outputs(out: Path, cfg: Config, sub: str, res: RunResult, seconds: float) -> bool:
    gates = [c for c in res.checks if c.passed is not None]
    ok = all(c.passed for c in gates)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "subcommand": sub,
        "config_hash": cfg.hash,
        "seed": cfg["run"]["seed"],
        "backend": kernels.BACKEND,
        "passed": ok,
        "checks": [c.as_dict() for c in res.checks],
        "tolerances": {c.name: c.tolerance for c in res.checks},
        "seconds": round(seconds, 3),
    }
    summary.update({k: v for k, v in res.extra.items() if k not in summary})
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n",
                                      encoding="utf-8")
    tables = dict(res.tables)
    tables["checks.csv"] = (["name", "value", "tolerance", "passed"],
                            [[c.name, c.value, c.tolerance, c.passed] for c in res.checks])
    for name, (header, rows) in tables.items():
        with open(out / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    return ok


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="magkg", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"magkg {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable)")
        sp.add_argument("--out", default="magkg-out", help="output directory")
        sp.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
        sp.add_argument("--oracle", action="store_true",
                        help="add dense-oracle cross-checks where the grid permits")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set, args.seed)
        build_potential(cfg, build_grid(cfg))
    except (ConfigError, ValueError) as exc:
        print(f"magkg: configuration error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg["run"]["seed"])
    t0 = time.perf_counter()
    try:
        res = COMMANDS[args.command](cfg, args, rng)
    except Exception as exc:  # reported with module context, never swallowed silently
        mod = type(exc).__module__
        print(f"magkg {args.command}: {mod}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    ok = _write_outputs(out, cfg, args.command, res, time.perf_counter() - t0)
    for c in res.checks:
        mark = "info" if c.passed is None else ("PASS" if c.passed else "FAIL")
        val = "-" if c.value is None else f"{c.value:.6g}"
        print(f"[{mark}] {c.name} = {val}  ({c.tolerance})")
    print(f"summary: {out / 'summary.json'} ({'all gates pass' if ok else 'gate failure'})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
