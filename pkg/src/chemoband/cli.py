"""Command-line entry point.

Every subcommand writes a main table (CSV or JSON), a JSON summary and a
manifest that lists each output with its SHA-256.  Exit codes: 0 success,
2 invalid input, 3 numerical failure, 4 I/O error.  Errors are also
reported on stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import bands, io, pde, sensitivity, stability, walk
from .config import PRESETS, RunSpec, parse_config
from .errors import ChemobandError, NumericalError, OverflowGuard, ValidationError
from .model import Grid1D, Regime

logger = logging.getLogger("chemoband")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class Outputs:
    """Resolves output paths from ``--out``.

    A path ending in ``.csv`` or ``.json`` names the main table; the summary
    and manifest go beside it.  Anything else is a directory.
    """

    def __init__(self, out: str, command: str, fmt: str):
        path = Path(out)
        self.fmt = fmt
        if path.suffix.lower() in (".csv", ".json"):
            self.dir = path.parent
            self.stem = path.stem
            self.table = path
        else:
            self.dir = path
            self.stem = command
            self.table = path / f"{command}.{fmt}"
        self.written: List[Path] = []

    def named(self, suffix: str) -> Path:
        return self.dir / f"{self.stem}_{suffix}"

    def table_out(self, rows, columns=None) -> Path:
        p = io.write_table(self.table, rows, self.fmt, columns)
        self.written.append(p)
        return p

    def extra_table(self, name: str, rows, columns=None) -> Path:
        p = io.write_table(self.named(f"{name}.{self.fmt}"), rows, self.fmt, columns)
        self.written.append(p)
        return p

    def json(self, name: str, obj) -> Path:
        p = io.write_json(self.named(f"{name}.json"), obj)
        self.written.append(p)
        return p

    def jsonl(self, name: str, records) -> Path:
        p = self.named(f"{name}.jsonl")
        p.parent.mkdir(parents=True, exist_ok=True)
        with p.open("w") as fh:
            for rec in records:
                fh.write(json.dumps(io.to_jsonable(rec), sort_keys=True) + "\n")
        self.written.append(p)
        return p


# -- subcommands ------------------------------------------------------------------

def _zeta(spec: RunSpec) -> np.ndarray:
    b = spec["band"]
    return np.linspace(b["zeta_min"], b["zeta_max"], b["n_points"])


def cmd_band(spec: RunSpec, out: Outputs) -> dict:
    mp, bp = spec.model_params(), spec.band_params()
    der = bands.validate(mp, bp)
    zeta = _zeta(spec)
    prof = bands.eval_band(mp, bp, zeta)
    q = bands.normalization(mp, bp)
    rows = io.columns_to_rows({
        "zeta": zeta,
        "zeta_bar": bp.c * zeta / mp.mu,
        "u": prof.u_vals,
        "v": prof.v_vals,
        "u_norm": prof.u_vals / q,
        "v_norm": prof.v_vals / bp.v_inf,
    })
    out.table_out(rows)
    res = bands.traveling_ode_residual(mp, bp, prof)
    summary = {
        "regime": bp.regime.value,
        "d": der.d_ratio,
        "c3": der.c3,
        "c4": der.c4,
        "normalization": q,
        "residual_rel_u": res.rel_u,
        "residual_rel_v": res.rel_v,
        "n_clamped": prof.n_clamped,
    }
    if bp.regime.is_unlimited:
        ext = bands.band_extrema(mp, bp, verify=False)
        num = bands.numeric_band_max(mp, bp)
        speed = bands.band_speed_from_mass(mp, bp)
        summary.update({
            "u_max": ext.u_max,
            "zeta0": ext.zeta0,
            "u_max_numeric": num.u_max,
            "zeta0_numeric": num.zeta0,
            "c_from_mass": speed.c_est,
            "c_from_mass_error": speed.error,
        })
    return summary


def cmd_ode_oracle(spec: RunSpec, out: Outputs) -> dict:
    mp, bp = spec.model_params(), spec.band_params()
    zeta = _zeta(spec)
    exact = bands.eval_band(mp, bp, zeta)
    if bp.regime is Regime.LIMITED:
        start, span = 0, (zeta[0], zeta[-1])
    else:
        start, span = -1, (zeta[-1], zeta[0])
    ic = (exact.u_vals[start], exact.v_vals[start])
    ode = bands.integrate_band_ode(mp, bp, ic, span, zeta_eval=zeta)
    rows = io.columns_to_rows({
        "zeta": ode.zeta,
        "u_ode": ode.u_vals,
        "v_ode": ode.v_vals,
        "u_exact": exact.u_vals,
        "v_exact": exact.v_vals,
    })
    out.table_out(rows)
    return {
        "regime": bp.regime.value,
        "case": ode.meta.get("case"),
        "sup_err_u": float(np.max(np.abs(ode.u_vals - exact.u_vals))),
        "sup_err_v": float(np.max(np.abs(ode.v_vals - exact.v_vals))),
    }


def cmd_simulate(spec: RunSpec, out: Outputs) -> dict:
    mp, bp = spec.model_params(), spec.band_params()
    s = spec["solver"]
    grid = Grid1D.from_spacing(s["x_min"], s["x_max"], s["h"])
    dt = s["dt"] if s["dt"] is not None else 0.25 * grid.h
    t_out = np.linspace(0.0, s["t_end"], max(s["n_snapshots"], 2))[1:]
    cfg = pde.SolverConfig(
        grid=grid,
        dt=dt,
        t_end=s["t_end"],
        scheme=s["scheme"],
        imex=s["imex"],
        theta=s["theta"],
        bc_left=pde.traced_band(mp, bp, grid.x0),
        bc_right=pde.traced_band(mp, bp, grid.x1),
        output_times=tuple(t_out),
    )
    consumption = pde.Consumption.LIMITED if bp.regime is Regime.LIMITED else pde.Consumption.UNLIMITED

    def initial(x):
        p = bands.eval_band(mp, bp, x)
        return p.u_vals, p.v_vals

    traj = pde.run(cfg, initial, mp, consumption)
    rows = []
    for snap in traj.snapshots:
        rows.extend({"t": snap.t, "x": x, "u": u, "v": v} for x, u, v in zip(grid.x, snap.u, snap.v))
    out.table_out(rows, ["t", "x", "u", "v"])
    out.jsonl("diagnostics", traj.diagnostics)
    final = traj.snapshots[-1]
    exact = bands.eval_band(mp, bp, grid.x - bp.c * final.t)
    w = grid.trapezoid_weights()
    rel_l2 = math.sqrt(w @ (final.u - exact.u_vals) ** 2) / math.sqrt(w @ exact.u_vals ** 2)
    summary = {"n_steps": traj.meta["n_steps"], "dt": traj.meta["dt"], "rel_l2_error_u": rel_l2}
    try:
        summary["c_measured"] = pde.measure_wave_speed(traj)
    except ChemobandError as exc:
        summary["c_measured"] = None
        summary["c_measured_error"] = str(exc)
    return summary


def cmd_linstab(spec: RunSpec, out: Outputs) -> dict:
    mp, pp = spec.model_params(), spec.perturb_params()
    modes = range(spec["perturb"]["n_max"] + 1)
    results = stability.dispersion_sweep(mp, pp, modes)
    out.table_out([r.row() for r in results])
    cert = stability.energy_certificate(mp, pp)
    return {
        "a": pp.a,
        "thresholds": {str(n): stability.instability_threshold(mp, pp, n) for n in modes},
        "classes": {str(r.n): r.stability.value for r in results},
        "certificate": cert.to_dict(),
    }


def _smooth_initial(rng, ell, n_modes=4):
    cu = rng.standard_normal(n_modes)
    cv = rng.standard_normal(n_modes)

    def initial(x):
        m = np.arange(n_modes)[:, None]
        basis = np.sin((m + 0.5) * np.pi * x[None, :] / ell) / (m + 1.0)
        return cu @ basis, cv @ basis

    return initial


def cmd_energy(spec: RunSpec, out: Outputs) -> dict:
    mp, pp = spec.model_params(), spec.perturb_params()
    s = spec["solver"]
    grid = Grid1D.from_spacing(0.0, pp.ell, s["h"])
    dt = s["dt"] if s["dt"] is not None else 0.25 * grid.h
    n_out = max(s["n_snapshots"], 3)
    cfg = pde.SolverConfig(
        grid=grid,
        dt=dt,
        t_end=s["t_end"],
        scheme=s["scheme"],
        theta=s["theta"],
        bc_left=pde.Dirichlet(),
        bc_right=pde.Neumann(),
        output_times=tuple(np.linspace(0.0, s["t_end"], n_out)[1:]),
    )
    rng = np.random.default_rng(spec.seed)
    traj = pde.run(cfg, _smooth_initial(rng, pp.ell), mp, pp=pp)
    trace = stability.EnergyTrace.from_states(traj.snapshots)
    out.table_out(io.columns_to_rows({
        "t": trace.times, "l2_sq": trace.l2_sq, "h1_sq": trace.h1_sq, "sup_norm": trace.sup_norm,
    }))
    cert = stability.energy_certificate(mp, pp)
    summary = {
        "certificate": cert.to_dict(),
        "fitted_rate_l2": stability.fit_decay_rate(trace, "l2_sq"),
        "fitted_rate_h1": stability.fit_decay_rate(trace, "h1_sq"),
    }
    if cert.holds:
        l2_bound = trace.l2_sq[0] * np.exp(-cert.rate_l2 * trace.times)
        sup_bound = cert.sup_bound_coeff * math.sqrt(trace.h1_sq[0]) * np.exp(-0.5 * cert.rate_h1 * trace.times)
        summary["max_l2_over_bound"] = float(np.max(trace.l2_sq / l2_bound))
        summary["max_sup_over_bound"] = float(np.max(trace.sup_norm / sup_bound))
    return summary


def _lipschitz_box(spec: RunSpec) -> sensitivity.ParamBox:
    mp, bp = spec.model_params(), spec.band_params()

    def around(x):
        return (0.9 * x, 1.1 * x)

    common = {"k": around(mp.k), "tau": around(mp.tau), "mu": around(mp.mu), "c": around(bp.c), "v_inf": around(bp.v_inf)}
    if bp.regime is Regime.LIMITED:
        c0 = (max(1.0 + 1e-3, 0.9 * bp.c0), 1.1 * bp.c0)
        return sensitivity.ParamBox({**common, "c0": c0, "beta": around(mp.beta)}, limited=True)
    d = mp.d_ratio
    d_box = (1.0 + 0.5 * (d - 1.0), 1.0 + 1.5 * (d - 1.0)) if d > 1.0 + 1e-6 else (1.001, 1.1)
    return sensitivity.ParamBox({**common, "c0": around(bp.c0), "d": d_box})


def cmd_sensitivity(spec: RunSpec, out: Outputs) -> dict:
    mp, bp = spec.model_params(), spec.band_params()
    r = spec["run"]
    deltas = r["delta_start"] / 2.0 ** np.arange(r["n_halvings"] + 1)
    conv = sensitivity.uniform_convergence_probe(mp, bp, deltas)
    out.table_out(list(conv.rows()))
    box = _lipschitz_box(spec)
    lip = sensitivity.lipschitz_probe(box, r["n_pairs"], seed=spec.seed)
    worst = lip.worst_pair
    return {
        "v_decreasing": conv.v_decreasing,
        "u_decreasing": conv.u_decreasing,
        "err_over_delta_within_factor4": conv.within_band(4.0),
        "lipschitz_box": {k: box.bounds(k) for k in box.keys},
        "k_emp_u": lip.k_u,
        "k_emp_v": lip.k_v,
        "worst_pair": None if worst is None else {"w1": worst[0], "w2": worst[1], "keys": list(box.keys)},
        "pairs_evaluated": lip.n_evaluated,
        "pairs_skipped": lip.n_skipped,
    }


def cmd_walk(spec: RunSpec, out: Outputs) -> dict:
    mp = spec.model_params()
    r = spec["run"]
    spread = math.sqrt(max(r["n_steps"], 1) * mp.mu)
    half = 6.0 * spread
    if r["walk_drift"] == "log_v":
        ell2 = r["walk_ell"] ** 2
        table_x = np.linspace(-2.0 * half, 2.0 * half, 4001)
        drift = walk.DriftField.from_function(lambda x: -mp.beta * x / ell2, table_x)
    else:
        drift = walk.DriftField.zero()
    cfg = walk.WalkConfig(
        n_particles=r["n_particles"],
        tau_step=mp.tau,
        variance=mp.mu,
        n_steps=r["n_steps"],
        bin_width=r["bin_width"],
        hist_range=(-half, half),
        drift=drift,
    )
    series = walk.simulate_walk(cfg, 0.0, seed=spec.seed)
    out.table_out(list(series.final.rows()))
    summary = {
        "t": series.final.t,
        "mean": series.mean[-1],
        "var": series.var[-1],
        "skew": series.skew[-1],
        "n_in_range": series.final.n_in_range,
        "n_particles": series.n_particles,
    }
    if r["walk_drift"] == "none" and r["n_steps"] > 0:
        from scipy.special import erf

        edges = series.final.edges
        sd = math.sqrt(r["n_steps"] * mp.mu)
        cdf = 0.5 * (1.0 + erf(edges / (sd * math.sqrt(2.0))))
        ref = np.diff(cdf) / np.diff(edges)
        centers = series.final.centers
        # compare bin averages of the heat kernel with the histogram
        l1 = float(np.abs(series.final.density - ref / (ref @ series.final.widths)) @ series.final.widths)
        summary["l1_vs_heat_kernel"] = l1
        summary["n_bins"] = int(centers.size)
    return summary


COMMANDS: Dict[str, Callable[[RunSpec, Outputs], dict]] = {
    "band": cmd_band,
    "ode-oracle": cmd_ode_oracle,
    "simulate": cmd_simulate,
    "linstab": cmd_linstab,
    "energy": cmd_energy,
    "sensitivity": cmd_sensitivity,
    "walk": cmd_walk,
}

HELP = {
    "band": "analytic band profile, extrema and speed identity",
    "ode-oracle": "compare the numerical band ODE with the closed form",
    "simulate": "nonlinear PDE run started from the analytic band",
    "linstab": "dispersion sweep, thresholds and energy certificate",
    "energy": "linearized run with energy traces and decay fits",
    "sensitivity": "convergence and Lipschitz probes",
    "walk": "Monte Carlo jump process histogram",
}


# -- argument handling -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON or TOML config, or a previous manifest")
    common.add_argument("--preset", choices=sorted(PRESETS), help="named parameter set")
    common.add_argument("--out", metavar="PATH", default="chemoband_out",
                        help="output directory, or a .csv/.json file for the main table")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--format", choices=("csv", "json"), help="main table format")
    common.add_argument("--d", type=float, help="override d = 2 beta / mu")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="chemoband", description="Traveling chemotactic bands toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, (NumericalError, ArithmeticError)):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_NUMERICAL


def _report(exc: BaseException, code: int) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("field", "line", "column", "t"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(io.to_jsonable(payload), sort_keys=True) + "\n")


def run_command(command: str, spec: RunSpec, out_path: str) -> Outputs:
    out = Outputs(out_path, command, spec["run"]["format"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OverflowGuard)
        summary = COMMANDS[command](spec, out)
    out.json("summary", summary)
    manifest = out.named("manifest.json")
    io.write_manifest(manifest, command, spec.to_dict(), spec.seed, out.written)
    out.manifest = manifest
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {
        "model": {"d": args.d} if args.d is not None else {},
        "run": {k: v for k, v in (("seed", args.seed), ("format", args.format)) if v is not None},
    }
    try:
        spec = parse_config(args.config, args.preset, overrides)
        out = run_command(args.command, spec, args.out)
    except (ChemobandError, ValueError, ArithmeticError, OSError) as exc:
        code = _exit_code(exc)
        _report(exc, code)
        return code
    for path in out.written + [out.manifest]:
        print(path)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
