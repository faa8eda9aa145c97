"""Command-line experiment runner.

Eight subcommands cover the pipeline end to end: draw Gaussian paths
(`sample`), audit a mixed lift (`lift-check`), cross-check the two rough
integration routes (`integrate-xcheck`), run the coupled solver (`solve`),
tabulate the averaged drift (`fbar`), measure decorrelation (`probe`), run
the scale sweep (`converge`), and turn a sweep report into plain plot data
(`report`). Every subcommand reads one JSON config plus flag overrides,
writes its artifacts under a run directory named by the config hash, and
leaves a manifest. Exit codes: 0 success, 2 validation problem, 3 numeric
divergence beyond the exclusion budget (or a failed lift audit).
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from .averaging import (
    AveragedDrift,
    ConvergenceReport,
    ConvergenceRow,
    convergence_experiment,
    delta_gap_probe,
    mixing_probe,
)
from .config import ExperimentConfig, RunManifest
from .errors import ConfigurationError, DivergenceError, DomainError
from .integrate import TripletView, compensated_riemann, frac_integral
from .lift import diagnose, lift_mixed, save_lift
from .paths import Grid, sample_bm, sample_fbm, save_path
from .presets import get_preset
from .solver import solve_fast_slow


# ----------------------------------------------------------- plot exports

def emit_plots_data(report: ConvergenceReport, directory: str,
                    khasminskii=None) -> "list[str]":
    """Write plain CSV series for external plotting: the scale sweep curve
    (eps vs mean sup-error with error bars) and, when freezing-gap rows are
    supplied, the block-length curve (delta vs mean square gap). Returns the
    files written; an empty report is an error and writes nothing."""
    if not report.rows:
        raise ConfigurationError("report: no rows to emit")
    os.makedirs(directory, exist_ok=True)
    files = []
    with_exclusions = any(r.excluded > 0 for r in report.rows)
    header = "eps,delta,mean,stderr,n"
    if with_exclusions:
        header += ",excluded"
    lines = [header]
    for r in report.rows:
        cells = [repr(float(r.eps)), repr(float(r.delta)),
                 repr(float(r.mean_sup_error)), repr(float(r.std_error)),
                 str(int(r.replicas))]
        if with_exclusions:
            cells.append(str(int(r.excluded)))
        lines.append(",".join(cells))
    eps_path = os.path.join(directory, "eps_curve.csv")
    with open(eps_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    files.append(eps_path)

    if khasminskii:
        lines = ["delta,mean_sq_gap,stderr,n"]
        for row in khasminskii:
            if not isinstance(row, dict):
                row = {"delta": row.delta,
                       "sup_mean_sq_gap": row.sup_mean_sq_gap,
                       "std_error": row.std_error,
                       "replicas": row.replicas}
            lines.append(",".join([
                repr(float(row["delta"])),
                repr(float(row["sup_mean_sq_gap"])),
                repr(float(row["std_error"])),
                str(int(row["replicas"])),
            ]))
        delta_path = os.path.join(directory, "delta_curve.csv")
        with open(delta_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        files.append(delta_path)
    return files


# ------------------------------------------------------------- subcommands

def _write_json(run_dir: str, name: str, payload: dict) -> str:
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, name)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _relative(run_dir: str, paths: "list[str]") -> "list[str]":
    return [os.path.relpath(p, run_dir) for p in paths]


def cmd_sample(cfg: ExperimentConfig) -> int:
    run_dir = cfg.run_dir("sample")
    manifest = RunManifest.start("sample", cfg, seed_ledger=[
        {"kind": cfg.sample_kind, "seed": str(cfg.seed),
         "stream": [str(cfg.seed),
                    "fbm-path" if cfg.sample_kind == "fbm" else "bm-path"]},
    ])
    manifest.write(run_dir)
    fine = Grid(0.0, cfg.t_end, cfg.n_coarse * cfg.fine_factor)
    if cfg.sample_kind == "fbm":
        path = sample_fbm(cfg.hurst, fine, cfg.seed, dim=cfg.sample_dim)
    else:
        path = sample_bm(cfg.sample_dim, fine, cfg.seed)
    files = save_path(path, os.path.join(run_dir, "sample"))
    manifest.finish(run_dir, _relative(run_dir, files))
    print(f"wrote {', '.join(files)}")
    return 0


def cmd_lift_check(cfg: ExperimentConfig) -> int:
    run_dir = cfg.run_dir("lift-check")
    manifest = RunManifest.start("lift-check", cfg, seed_ledger=[
        {"kind": "fbm", "stream": [str(cfg.seed), "fbm-path"]},
        {"kind": "bm", "stream": [str(cfg.seed), "bm-path"]},
    ])
    manifest.write(run_dir)
    coarse = Grid(0.0, cfg.t_end, cfg.n_coarse)
    fine = coarse.refined(cfg.fine_factor)
    b = sample_fbm(cfg.hurst, fine, cfg.seed)
    w = sample_bm(1, fine, cfg.seed)
    lift = lift_mixed(b, w, coarse, cfg.fine_factor)
    diag = diagnose(lift, tol=cfg.lift_tol)
    print(diag.to_json())
    diag_path = os.path.join(run_dir, "diagnostics.json")
    os.makedirs(run_dir, exist_ok=True)
    with open(diag_path, "w") as fh:
        fh.write(diag.to_json() + "\n")
    lift_files = save_lift(lift, os.path.join(run_dir, "lift"))
    manifest.finish(run_dir, _relative(run_dir, [diag_path] + lift_files))
    return 0 if diag.passed else 3


def _smooth_triplet() -> TripletView:
    # x = sin t integrated against omega = cos t, with the closed-form
    # cross second level; the pair every quadrature knob can be judged on.
    def exact_v(s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        val = (-((t - s) / 2 - (np.sin(2 * t) - np.sin(2 * s)) / 4)
               + np.sin(s) * (np.cos(s) - np.cos(t)))
        return val[..., None, None]

    return TripletView(
        x=lambda t: np.sin(np.asarray(t, float))[..., None],
        omega=lambda t: np.cos(np.asarray(t, float))[..., None],
        v=exact_v,
        beta=0.5,
    )


def cmd_integrate_xcheck(cfg: ExperimentConfig) -> int:
    run_dir = cfg.run_dir("integrate-xcheck")
    manifest = RunManifest.start("integrate-xcheck", cfg, seed_ledger=[
        {"kind": "fbm", "stream": [f"{cfg.seed}:xcheck-b", "fbm-path"]},
        {"kind": "bm", "stream": [f"{cfg.seed}:xcheck-w", "bm-path"]},
    ])
    manifest.write(run_dir)

    def section(triplet, sigma, jac, a, b, n_riemann, quad_points):
        riemann = float(compensated_riemann(triplet, sigma, a, b, n_riemann,
                                            jac_sigma=jac)[0])
        frac = float(frac_integral(triplet, sigma, a, b,
                                   quad_points=quad_points,
                                   jac_sigma=jac)[0])
        gap = abs(frac - riemann)
        return {
            "riemann": riemann,
            "frac": frac,
            "abs_gap": gap,
            "rel_gap": gap / max(abs(riemann), 1e-300),
            "params": {"a": a, "b": b, "n_riemann": n_riemann,
                       "quad_points": quad_points},
        }

    smooth = section(
        _smooth_triplet(),
        lambda x: x[..., None],
        lambda x: np.ones(x.shape + (1, 1)),
        0.1, 1.1, 512, cfg.xcheck_quad_points,
    )

    n_c = cfg.xcheck_n_coarse
    fine = Grid(0.0, cfg.t_end, n_c * cfg.fine_factor)
    coarse = Grid(0.0, cfg.t_end, n_c)
    b_vals = sample_fbm(cfg.hurst, fine, f"{cfg.seed}:xcheck-b").values
    w_vals = sample_bm(1, fine, f"{cfg.seed}:xcheck-w").values
    from .lift import lift_from_arrays

    lift = lift_from_arrays(b_vals, w_vals, coarse, cfg.fine_factor,
                            hurst=cfg.hurst)
    rough = section(
        TripletView.from_lift(lift.b_block()),
        lambda x: np.sin(x)[..., None],
        lambda x: np.cos(x)[..., None, None],
        0.0, cfg.t_end, n_c, cfg.xcheck_quad_points,
    )
    rough["params"].update({"hurst": cfg.hurst, "seed": str(cfg.seed),
                            "fine_factor": cfg.fine_factor})

    payload = {"smooth": smooth, "fbm": rough}
    path = _write_json(run_dir, "xcheck.json", payload)
    manifest.finish(run_dir, _relative(run_dir, [path]))
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_solve(cfg: ExperimentConfig) -> int:
    run_dir = cfg.run_dir("solve")
    manifest = RunManifest.start("solve", cfg, seed_ledger=[
        {"kind": "fbm", "stream": [f"{cfg.seed}:solve-b", "fbm-path"]},
        {"kind": "bm", "stream": [f"{cfg.seed}:solve-w", "bm-path"]},
    ])
    manifest.write(run_dir)
    preset = get_preset(cfg.preset)
    coarse = Grid(0.0, cfg.t_end, cfg.n_coarse)
    fine = coarse.refined(cfg.fine_factor)
    b = sample_fbm(cfg.hurst, fine, f"{cfg.seed}:solve-b")
    w = sample_bm(preset.coeffs.dims[3], fine, f"{cfg.seed}:solve-w")
    lift = lift_mixed(b, w, coarse, cfg.fine_factor)
    sol = solve_fast_slow(preset.coeffs, cfg.eps, lift, preset.x0, preset.y0,
                          substep_factor=cfg.substep_factor)
    sf = sol.substep_factor
    t = coarse.points()
    x = sol.x_slow
    y = sol.y_substeps[::sf]
    m, n_dim = x.shape[-1], y.shape[-1]
    csv_path = os.path.join(run_dir, "solution.csv")
    with open(csv_path, "w") as fh:
        cols = ([f"x_{i+1}" for i in range(m)]
                + [f"y_{j+1}" for j in range(n_dim)])
        fh.write("t," + ",".join(cols) + "\n")
        for k in range(t.size):
            cells = [repr(float(t[k]))]
            cells += [repr(float(v)) for v in x[k]]
            cells += [repr(float(v)) for v in y[k]]
            fh.write(",".join(cells) + "\n")
    meta = {
        "preset": cfg.preset,
        "eps": cfg.eps,
        "hurst": cfg.hurst,
        "t_end": cfg.t_end,
        "n_coarse": cfg.n_coarse,
        "fine_factor": cfg.fine_factor,
        "substep_factor": sf,
        "seed": str(cfg.seed),
    }
    meta_path = _write_json(run_dir, "solution.json", meta)
    manifest.finish(run_dir, _relative(run_dir, [csv_path, meta_path]))
    print(f"wrote {csv_path}")
    return 0


def cmd_fbar(cfg: ExperimentConfig) -> int:
    run_dir = cfg.run_dir("fbar")
    manifest = RunManifest.start("fbar", cfg, seed_ledger=[
        {"role": "lattice", "stream": [f"{cfg.seed}:fbar-table",
                                       "fbar-node", "<node index>"]},
    ])
    manifest.write(run_dir)
    preset = get_preset(cfg.preset)
    drift = AveragedDrift.tabulated(
        preset.coeffs, preset.fbar_box, lattice_points=cfg.fbar_lattice,
        burn_in=cfg.fbar_burn_in, horizon=cfg.fbar_horizon,
        replicas=cfg.fbar_replicas, seed=f"{cfg.seed}:fbar-table",
    )
    payload = drift.table_payload()
    payload["preset"] = cfg.preset
    path = _write_json(run_dir, "fbar.json", payload)
    manifest.finish(run_dir, _relative(run_dir, [path]))
    print(f"wrote {path}")
    return 0


def cmd_probe(cfg: ExperimentConfig) -> int:
    run_dir = cfg.run_dir("probe")
    manifest = RunManifest.start("probe", cfg, seed_ledger=[
        {"role": "mixing", "stream": [str(cfg.seed), "mixing"]},
    ])
    manifest.write(run_dir)
    preset = get_preset(cfg.preset)
    xi = np.asarray(cfg.probe_xi if cfg.probe_xi is not None else preset.x0,
                    dtype=float)
    report = mixing_probe(preset.coeffs, xi, cfg.probe_lags,
                          replicas=cfg.probe_replicas, seed=cfg.seed)
    payload = report.payload()
    payload["preset"] = cfg.preset
    payload["xi"] = xi.tolist()
    path = _write_json(run_dir, "probe.json", payload)
    manifest.finish(run_dir, _relative(run_dir, [path]))
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_converge(cfg: ExperimentConfig) -> int:
    run_dir = cfg.run_dir("converge")
    ledger = [
        {"eps": e, "eps_index": i, "replica": r,
         "stream": [str(cfg.seed), "converge", i, r]}
        for i, e in enumerate(cfg.eps_schedule)
        for r in range(cfg.replicas)
    ]
    manifest = RunManifest.start("converge", cfg, seed_ledger=ledger)
    manifest.write(run_dir)
    preset = get_preset(cfg.preset)
    report = convergence_experiment(
        preset.coeffs, cfg.eps_schedule, cfg.replicas, cfg.hurst,
        (cfg.n_coarse, cfg.fine_factor), cfg.seed, preset.x0, preset.y0,
        fbar_box=preset.fbar_box, t_end=cfg.t_end,
        delta_override=cfg.delta_override,
    )
    payload = report.payload()
    probe_rows = None
    if cfg.with_delta_probe:
        probe_rows = delta_gap_probe(
            preset.coeffs, cfg.delta_probe_eps, cfg.delta_probe_deltas,
            cfg.delta_probe_replicas, cfg.hurst, cfg.delta_probe_grid,
            cfg.seed, preset.x0, preset.y0,
        )
        payload["khasminskii"] = [
            {"delta": r.delta, "sup_mean_sq_gap": r.sup_mean_sq_gap,
             "std_error": r.std_error, "replicas": r.replicas}
            for r in probe_rows
        ]
    json_path = _write_json(run_dir, "report.json", payload)
    csv_files = emit_plots_data(report, run_dir, khasminskii=probe_rows)
    manifest.finish(run_dir, _relative(run_dir, [json_path] + csv_files))
    for row in report.rows:
        print(f"eps {row.eps}: mean sup error {row.mean_sup_error:.6f} "
              f"(stderr {row.std_error:.6f}, n {row.replicas}, "
              f"excluded {row.excluded})")
    requested = cfg.replicas * len(cfg.eps_schedule)
    excluded = sum(r.excluded for r in report.rows)
    if excluded > cfg.exclusion_budget * requested:
        print(f"error: {excluded} of {requested} replicas diverged, over "
              f"the exclusion budget {cfg.exclusion_budget:.1%}",
              file=sys.stderr)
        return 3
    return 0


def cmd_report(cfg: ExperimentConfig, input_path: str) -> int:
    try:
        with open(input_path) as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(
            f"input: no such report file {input_path!r}"
        ) from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"input: {input_path!r} is not valid JSON ({exc})"
        ) from None
    rows = [
        ConvergenceRow(
            eps=float(r["eps"]), delta=float(r["delta"]),
            replicas=int(r["replicas"]), excluded=int(r.get("excluded", 0)),
            mean_sup_error=float(r["mean_sup_error"]),
            std_error=float(r["std_error"]),
            runtime=float(r.get("runtime", 0.0)),
        )
        for r in payload.get("rows", [])
    ]
    if not rows:
        raise ConfigurationError("report: no rows to emit")
    report = ConvergenceReport(rows=rows,
                               schedule=payload.get("schedule", "unknown"),
                               params=payload.get("params", {}))
    run_dir = cfg.run_dir("report")
    manifest = RunManifest.start("report", cfg)
    manifest.write(run_dir)
    files = emit_plots_data(report, run_dir,
                            khasminskii=payload.get("khasminskii"))
    manifest.finish(run_dir, _relative(run_dir, files))
    print(f"wrote {', '.join(files)}")
    return 0


# ------------------------------------------------------------ entry point

def _floats(text: str) -> "tuple[float, ...]":
    try:
        return tuple(float(part) for part in text.split(",") if part != "")
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated numbers, got {text!r}"
        ) from None


def _ints(text: str) -> "tuple[int, ...]":
    try:
        return tuple(int(part) for part in text.split(",") if part != "")
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}"
        ) from None


def _seed(text: str) -> "int | str":
    try:
        return int(text)
    except ValueError:
        return text


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON config file; flags override")
    shared.add_argument("--preset", help="coefficient preset name")
    shared.add_argument("--hurst", type=float, help="Hurst index in (1/3, 1/2]")
    shared.add_argument("--t-end", dest="t_end", type=float, help="horizon T")
    shared.add_argument("--n-coarse", dest="n_coarse", type=int,
                        help="coarse grid steps")
    shared.add_argument("--fine-factor", dest="fine_factor", type=int,
                        help="fine steps per coarse step")
    shared.add_argument("--seed", type=_seed, help="master seed")
    shared.add_argument("--out-dir", dest="out_dir", help="output root")

    parser = argparse.ArgumentParser(
        prog="roughavg",
        description="Fast-slow averaging experiments driven by mixed "
                    "fractional/Brownian rough paths.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", parents=[shared],
                       help="draw one Gaussian path and save CSV + JSON")
    p.add_argument("--kind", dest="sample_kind", choices=("fbm", "bm"))
    p.add_argument("--dim", dest="sample_dim", type=int)

    p = sub.add_parser("lift-check", parents=[shared],
                       help="build a mixed lift and print its diagnostics")
    p.add_argument("--tol", dest="lift_tol", type=float,
                   help="relative residual tolerance")

    p = sub.add_parser("integrate-xcheck", parents=[shared],
                       help="compare the two rough-integral routes")
    p.add_argument("--quad-points", dest="xcheck_quad_points", type=int)
    p.add_argument("--xcheck-n-coarse", dest="xcheck_n_coarse", type=int)

    p = sub.add_parser("solve", parents=[shared],
                       help="solve the coupled fast-slow system once")
    p.add_argument("--eps", type=float, help="scale separation")
    p.add_argument("--substep-factor", dest="substep_factor", type=int)

    p = sub.add_parser("fbar", parents=[shared],
                       help="tabulate the averaged drift on a lattice")
    p.add_argument("--lattice", dest="fbar_lattice", type=int)
    p.add_argument("--fbar-replicas", dest="fbar_replicas", type=int)
    p.add_argument("--horizon", dest="fbar_horizon", type=float)
    p.add_argument("--burn-in", dest="fbar_burn_in", type=float)

    p = sub.add_parser("probe", parents=[shared],
                       help="measure decorrelation of the pinned fast flow")
    p.add_argument("--lags", dest="probe_lags", type=_floats)
    p.add_argument("--probe-replicas", dest="probe_replicas", type=int)
    p.add_argument("--xi", dest="probe_xi", type=_floats)

    p = sub.add_parser("converge", parents=[shared],
                       help="run the scale sweep and emit CSV + JSON")
    p.add_argument("--eps-schedule", dest="eps_schedule", type=_floats)
    p.add_argument("--replicas", type=int)
    p.add_argument("--delta-override", dest="delta_override", type=_floats)
    p.add_argument("--with-delta-probe", dest="with_delta_probe",
                   action="store_true", default=None)
    p.add_argument("--exclusion-budget", dest="exclusion_budget", type=float)

    p = sub.add_parser("report", parents=[shared],
                       help="turn a sweep report JSON into plot CSVs")
    p.add_argument("--input", required=True,
                   help="report.json from a converge run")

    return parser


_CONFIG_KEYS = set(ExperimentConfig.field_names())


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig()
    overrides = {
        key: value
        for key, value in vars(args).items()
        if key in _CONFIG_KEYS and value is not None
    }
    if overrides.get("delta_override") is not None and len(
            overrides["delta_override"]) == 1:
        overrides["delta_override"] = overrides["delta_override"][0]
    return cfg.with_overrides(**overrides).validate()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "sample":
            return cmd_sample(cfg)
        if args.command == "lift-check":
            return cmd_lift_check(cfg)
        if args.command == "integrate-xcheck":
            return cmd_integrate_xcheck(cfg)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "fbar":
            return cmd_fbar(cfg)
        if args.command == "probe":
            return cmd_probe(cfg)
        if args.command == "converge":
            return cmd_converge(cfg)
        if args.command == "report":
            return cmd_report(cfg, args.input)
        raise ConfigurationError(f"command: unknown {args.command!r}")
    except (ConfigurationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
