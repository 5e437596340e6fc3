"""Experiment runner: one deterministic seed in, JSON reports (and CSV path
dumps) out.

Subcommands mirror the experiment names: kernel-check, bounds-check,
bridge-sample, markov-test, semimart-test, lift-run, accept-all; `run`
executes an experiment described by a JSON config file. Flag precedence is
CLI flag > config file > BRIDGELAB_SEED environment variable > default 42.

Exit status: 0 all checks passed, 1 an experiment check failed (the report
is still written), 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import replace
from importlib import resources

import numpy as np

from . import __version__
from . import accept as AC
from . import bounds as BND
from . import bridge as BR
from . import heatkernel as HK
from . import lift as LF
from . import semimart as SM
from .geometry import model_from_name, model_names
from .rng import RngStream

EXPERIMENTS = (
    "kernel-check",
    "bounds-check",
    "bridge-sample",
    "markov-test",
    "semimart-test",
    "lift-run",
    "accept-all",
)


class UsageError(ValueError):
    pass


def _schema():
    with resources.files("bridgelab.schemas").joinpath("report.schema.json").open() as fh:
        return json.load(fh)


def validate_report(report: dict):
    import jsonschema

    jsonschema.validate(report, _schema())


def write_report(report: dict, out_path: str):
    validate_report(report)
    text = json.dumps(report, sort_keys=True, indent=2)
    with open(out_path, "w") as fh:
        fh.write(text + "\n")


def _report(experiment, config, seed, passed, results, t0):
    return {
        "experiment": experiment,
        "config": config,
        "library_version": __version__,
        "seed": int(seed),
        "pass": bool(passed),
        "results": results,
        "wall_time_s": round(time.time() - t0, 3),
    }


def _parse_coords(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError as exc:
        raise UsageError(f"cannot parse coordinates {text!r}: {exc}") from exc


def _resolve_model(name: str):
    try:
        return model_from_name(name)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _bridge_spec(model, args) -> BR.BridgeSpec:
    if args.T <= 0:
        raise UsageError("T must be positive")
    x = _parse_coords(args.x) if args.x else None
    y = _parse_coords(args.y) if args.y else None
    if x is None or y is None:
        dx, dy = AC._bridge_config(model)
        x = dx if x is None else x
        y = dy if y is None else y
    return BR.BridgeSpec(model, x, y, args.T)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def run_kernel_check(args, seed) -> tuple[dict, bool]:
    model = _resolve_model(args.model)
    results = {}
    ok = True
    ts = np.geomspace(args.t_min, args.t_max, args.n_t)
    gen = RngStream(seed, f"kernel-check/{model.kind}").generator()
    pts = model.random_points(24, gen)
    qs = model.random_points(24, gen)
    for t in ts:
        d = np.asarray(model.distance(pts, qs))
        if model.kind == "s2":
            d = np.minimum(d, math.sqrt(2.0 * float(t) * (HK.LOG_EPS - 13.0)) - 1e-9)
        logp, _ = HK.radial_log_kernel(model, float(t), d)
        if np.any(~np.isfinite(logp)):
            ok = False
    results["log_kernel_finite"] = bool(ok)
    mass = HK.kernel_mass(model, float(ts[len(ts) // 2]))
    results["mass"] = {"value": mass.value, "error_estimate": mass.error_estimate}
    mass_ok = abs(mass.value - 1.0) <= 1e-6
    ok = ok and mass_ok
    if model.kind == "s1":
        worst = 0.0
        angles = np.linspace(0.0, 2.0 * math.pi, 20, endpoint=False)
        for t in ts:
            pw, _ = HK.circle_wrapped_value(float(t), angles)
            pf, _ = HK.circle_fourier_value(float(t), angles)
            worst = max(worst, float(np.max(np.abs(pw - pf))))
        results["dual_series_worst"] = worst
        ok = ok and worst <= 1e-10
    x, y = AC._bridge_config(model)
    resid = HK.heat_equation_residual(model, float(np.clip(1.0, ts[0], ts[-1])), x, y)
    results["heat_equation_residual"] = resid
    ok = ok and resid <= 1e-5
    return results, ok


def run_bounds_check(args, seed) -> tuple[dict, bool]:
    model = _resolve_model(args.model)
    n_t, n_pairs = args.grid
    region, t_grid, xy = BND.default_grids(model, n_t=n_t, n_pairs=n_pairs, seed=seed)
    if args.t_min is not None or args.t_max is not None:
        lo = args.t_min if args.t_min is not None else float(t_grid.min())
        hi = args.t_max if args.t_max is not None else float(t_grid.max())
        if lo <= 0 or hi <= lo:
            raise UsageError("need 0 < t-min < t-max")
        t_grid = BND.log_t_grid(lo, min(hi, region.radius), n_t)
    which = args.inequality
    certs = {}
    if which in ("gaussian", "all"):
        certs["gaussian"] = BND.gaussian_bound_check(model, region, t_grid, xy, fit=True)
    if which in ("gradient", "all"):
        certs["gradient"] = BND.gradient_bound_check(
            model, region, BND.gradient_t_grid(model, t_grid), xy
        )
    if which in ("arnaudon-thalmaier", "all"):
        certs["arnaudon_thalmaier"] = BND.arnaudon_thalmaier_check(model, region, t_grid, xy)
    if which in ("localized", "all"):
        lo_cert, up_cert = BND.localized_bound_check(model, region, t_grid, xy)
        certs["localized_lower"] = lo_cert
        certs["localized_upper"] = up_cert
    if which in ("cheeger-gromov", "volume-doubling", "all"):
        s_max = min(2.0, 0.95 * model.injectivity_radius)
        s_grid = np.linspace(0.1 * s_max, s_max, 12)
        if which in ("cheeger-gromov", "all"):
            certs["cheeger_gromov"] = BND.cheeger_gromov_check(model, s_grid)
        if which in ("volume-doubling", "all"):
            pairs = [(s, f * s) for s in s_grid[2:] for f in (0.3, 0.6)]
            certs["volume_doubling"] = BND.volume_doubling_check(model, pairs)
    if not certs:
        raise UsageError(f"unknown inequality {which!r}")
    ok = all(c.passed for c in certs.values())
    return {"certificates": {k: c.to_dict() for k, c in certs.items()}}, ok


def _write_paths_csv(path_file: str, ens: BR.PathEnsemble):
    model = ens.spec.model
    k = model.ambient_dim
    with open(path_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t"] + [f"coord_{i}" for i in range(k)])
        times = ens.grid.times
        for i in range(ens.n_paths):
            for j, t in enumerate(times):
                w.writerow([i, repr(float(t))] + [repr(float(v)) for v in ens.points[i, j]])


def read_paths_csv(path_file: str, model) -> BR.PathEnsemble:
    data: dict[int, list] = {}
    with open(path_file) as fh:
        r = csv.reader(fh)
        header = next(r)
        k = len(header) - 2
        if k != model.ambient_dim:
            raise UsageError(
                f"CSV has {k} coordinates but model {model.kind} needs {model.ambient_dim}"
            )
        for row in r:
            data.setdefault(int(row[0]), []).append([float(v) for v in row[1:]])
    ids = sorted(data)
    rows0 = np.array(data[ids[0]])
    times = rows0[:, 0]
    pts = np.stack([np.array(data[i])[:, 1:] for i in ids])
    grid = BR.TimeGrid(times)
    spec = BR.BridgeSpec(model, pts[0, 0], pts[0, -1], grid.T)
    return BR.PathEnsemble(
        spec=spec, grid=grid, points=pts, stream_id=f"csv:{os.path.basename(path_file)}",
        terminal_snap=True,
    )


def run_bridge_sample(args, seed) -> tuple[dict, bool]:
    model = _resolve_model(args.model)
    if args.dt <= 0:
        raise UsageError("dt must be positive")
    if args.paths <= 0:
        raise UsageError("paths must be positive")
    spec = _bridge_spec(model, args)
    n_steps = max(2, round(spec.T / args.dt))
    grid = BR.TimeGrid.uniform(spec.T, n_steps)
    stream = RngStream(seed, f"bridge-sample/{model.kind}/{args.sampler}")
    if args.sampler == "sde":
        if n_steps < 8:
            raise UsageError("sde sampler needs at least 8 steps (reduce dt)")
        ens = BR.sample_bridge_sde_ensemble(spec, grid, args.paths, stream)
    else:
        ens = BR.sample_bridge_exact_ensemble(spec, grid, args.paths, stream)
    if args.out:
        _write_paths_csv(args.out, ens)
    results = {
        "n_paths": ens.n_paths,
        "n_steps": grid.n_steps,
        "sampler": args.sampler,
        "stream_id": ens.stream_id,
        "metadata": ens.metadata,
        "csv": args.out or "",
    }
    return results, True


def run_markov_test(args, seed) -> tuple[dict, bool]:
    model = _resolve_model(args.model)
    spec = _bridge_spec(model, args)
    T = spec.T
    S = args.S if args.S is not None else T / 2.0
    phi_t = args.phi_time if args.phi_time is not None else S / 2.0
    psi_t = args.psi_time if args.psi_time is not None else (S + T) / 2.0
    if not (0.0 < phi_t <= S <= psi_t <= T):
        raise UsageError("need 0 < phi-time <= S <= psi-time <= T")
    grid = BR.TimeGrid(np.unique([0.0, phi_t, S, psi_t, T]))
    ens = BR.sample_bridge_exact_ensemble(
        spec, grid, args.paths, RngStream(seed, f"markov/{model.kind}/outer")
    )
    if model.kind == "s1":
        phi = lambda v: np.cos(v[:, 0, 0])
        psi = lambda v: np.cos(v[:, 0, 0])
    else:
        phi = lambda v: v[:, 0, 0]
        psi = lambda v: v[:, 0, 0]
    md = BR.markov_defect(
        ens, S, [phi_t], [psi_t], phi, psi,
        inner_size=args.inner, stream=RngStream(seed, f"markov/{model.kind}/inner"),
    )
    results = {
        "defect": md.defect,
        "se": md.se,
        "n_outer": md.n_outer,
        "inner_size": md.inner_size,
        "S": S,
        "phi_time": phi_t,
        "psi_time": psi_t,
    }
    return results, md.passed


def _parse_f(model, spec, text: str) -> SM.TestFunction:
    if not text or text == "suite":
        return None
    if not text.startswith("bump:"):
        raise UsageError("test function must be 'suite' or 'bump:center=<s>,radius=<r>'")
    params = dict(kv.split("=") for kv in text[len("bump:") :].split(","))
    s = float(params.get("center", 0.5))
    r = float(params.get("radius", 0.3))
    center = model.geopoint(spec.x, spec.y, s)
    return SM.radial_bump(model, center, r, fid=f"bump:center={s:g},radius={r:g}")


def run_semimart_test(args, seed) -> tuple[dict, bool]:
    model = _resolve_model(args.model)
    if args.dt <= 0:
        raise UsageError("dt must be positive")
    spec = _bridge_spec(model, args)
    n_steps = max(8, round(spec.T / args.dt))
    grid = BR.TimeGrid.uniform(spec.T, n_steps)
    f = _parse_f(model, spec, args.f)
    fs = [f] if f is not None else SM.standard_bumps(model, spec.x, spec.y)
    T = spec.T

    def snap(t):  # battery times must sit on the grid
        return float(grid.times[int(np.argmin(np.abs(grid.times - t)))])

    pairs = [(snap(0.5 * T), snap(0.25 * T)), (snap(0.75 * T), snap(0.5 * T)),
             (T, snap(0.5 * T)), (T, snap(0.75 * T))]
    ens = BR.sample_bridge_exact_ensemble(
        spec, grid, args.paths, RngStream(seed, f"semimart/{model.kind}")
    )
    reports = {}
    ok = True
    for fn in fs:
        rep = SM.martingale_test(ens, fn, pairs)
        reports[fn.id] = rep.to_dict()
        ok = ok and rep.passed
    return {"martingale_reports": reports, "n_paths": args.paths, "dt": args.dt}, ok


def run_lift_run(args, seed) -> tuple[dict, bool]:
    model = _resolve_model(args.model)
    if not args.paths_csv:
        raise UsageError("lift-run requires --paths <csv>")
    ens = read_paths_csv(args.paths_csv, model)
    m = model.dim
    worst_defect = 0.0
    projections = 0
    rows = []
    for i in range(ens.n_paths):
        path = ens.path(i)
        lifted = LF.horizontal_lift(path, LF.identity_frame(model, path.points[0]))
        worst_defect = max(worst_defect, lifted.orthonormality_defect)
        projections += lifted.projections
        for j, t in enumerate(ens.grid.times):
            rows.append([i, repr(float(t))] + [repr(float(v)) for v in lifted.frames[j].ravel()])
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["path_id", "t"] + [f"frame_{a}_{b}" for a in range(m) for b in range(m)]
            )
            w.writerows(rows)
    results = {
        "n_paths": ens.n_paths,
        "worst_orthonormality_defect": worst_defect,
        "projections": projections,
        "csv": args.out or "",
    }
    return results, worst_defect <= 1e-3


def run_accept_all(args, seed) -> tuple[dict, bool]:
    sizes = AC.REDUCED if args.reduced else AC.FULL
    sizes = replace(
        sizes,
        seed=seed,
        paths_large=args.paths or sizes.paths_large,
        dt=args.dt or sizes.dt,
        markov_outer=args.markov_outer or sizes.markov_outer,
        markov_inner=args.markov_inner or sizes.markov_inner,
        gradient_samples=args.grad_samples or sizes.gradient_samples,
    )
    which = tuple(args.criteria.split(",")) if args.criteria else None
    report, ok = AC.run_suite(sizes, which=which, threads=max(0, args.threads))
    return report, ok


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser(suppress_defaults: bool = False) -> argparse.ArgumentParser:
    kw = {"argument_default": argparse.SUPPRESS} if suppress_defaults else {}
    p = argparse.ArgumentParser(
        prog="bridgelab",
        description="Brownian bridges, heat kernels, bound certificates, and "
        "frame-bundle lifts on model manifolds",
        **kw,
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="experiment", parser_class=lambda **k: argparse.ArgumentParser(**{**k, **kw}))

    def common(sp, model_default="euclidean:1"):
        sp.add_argument("--model", default=model_default, help=f"one of {', '.join(model_names())}")
        sp.add_argument("--seed", type=int, default=None, help="64-bit experiment seed")
        sp.add_argument("--config", default=None, help="JSON config file (flags win)")
        sp.add_argument("--out", default=None, help="output file (CSV for samplers)")
        sp.add_argument("--report", default=None, help="report JSON path")
        sp.add_argument("--threads", type=int, default=0, help="0 = auto")

    sp = sub.add_parser("kernel-check", help="kernel identities and normalization sweeps")
    common(sp, "s1")
    sp.add_argument("--t-min", type=float, default=0.05)
    sp.add_argument("--t-max", type=float, default=5.0)
    sp.add_argument("--n-t", type=int, default=20)

    sp = sub.add_parser("bounds-check", help="inequality certificates on grids")
    common(sp, "s2")
    sp.add_argument(
        "--inequality",
        default="all",
        choices=["gaussian", "gradient", "arnaudon-thalmaier", "localized",
                 "cheeger-gromov", "volume-doubling", "all"],
    )
    sp.add_argument("--t-min", type=float, default=None)
    sp.add_argument("--t-max", type=float, default=None)
    sp.add_argument("--grid", type=str, default="40x40", help="AxB: time points x point pairs")

    sp = sub.add_parser("bridge-sample", help="sample pinned paths to CSV")
    common(sp)
    sp.add_argument("--x", default=None, help="chart coordinates, comma separated")
    sp.add_argument("--y", default=None)
    sp.add_argument("-T", type=float, default=1.0)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--paths", type=int, default=1000)
    sp.add_argument("--sampler", choices=["sde", "exact"], default="sde")

    sp = sub.add_parser("markov-test", help="nested Monte Carlo Markov-property check")
    common(sp)
    sp.add_argument("--x", default=None)
    sp.add_argument("--y", default=None)
    sp.add_argument("-T", type=float, default=1.0)
    sp.add_argument("--S", type=float, default=None)
    sp.add_argument("--phi-time", type=float, default=None)
    sp.add_argument("--psi-time", type=float, default=None)
    sp.add_argument("--paths", type=int, default=10_000)
    sp.add_argument("--inner", type=int, default=100)

    sp = sub.add_parser("semimart-test", help="martingale battery for the compensated process")
    common(sp)
    sp.add_argument("--x", default=None)
    sp.add_argument("--y", default=None)
    sp.add_argument("-T", type=float, default=1.0)
    sp.add_argument("--f", default="suite", help="'suite' or bump:center=<s>,radius=<r>")
    sp.add_argument("--paths", type=int, default=10_000)
    sp.add_argument("--dt", type=float, default=1e-2)

    sp = sub.add_parser("lift-run", help="horizontal lift of sampled paths")
    common(sp)
    sp.add_argument("--paths", dest="paths_csv", default=None, help="input path CSV")

    sp = sub.add_parser("accept-all", help="the full acceptance suite")
    common(sp)
    sp.add_argument("--reduced", action="store_true", help="desk-scale smoke sizes")
    sp.add_argument("--criteria", default=None, help="comma-separated criterion ids")
    sp.add_argument("--paths", type=int, default=None)
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--markov-outer", type=int, default=None)
    sp.add_argument("--markov-inner", type=int, default=None)
    sp.add_argument("--grad-samples", type=int, default=None)

    sp = sub.add_parser("run", help="run an experiment from a JSON config file")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--report", default=None)
    return p


RUNNERS = {
    "kernel-check": run_kernel_check,
    "bounds-check": run_bounds_check,
    "bridge-sample": run_bridge_sample,
    "markov-test": run_markov_test,
    "semimart-test": run_semimart_test,
    "lift-run": run_lift_run,
    "accept-all": run_accept_all,
}


def _apply_config_file(args, explicit: set):
    """Config file overrides parser defaults; explicitly typed flags win."""
    if getattr(args, "config", None) is None:
        return args
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    if args.experiment == "run":
        exp = cfg.get("experiment")
        if exp not in RUNNERS:
            raise UsageError(f"config experiment must be one of {EXPERIMENTS}")
        base = _build_parser().parse_args([exp])
        for k in explicit:
            if hasattr(base, k):
                setattr(base, k, getattr(args, k))
        args = base
        args.experiment = exp
    for key, value in cfg.items():
        if key == "experiment":
            continue
        attr = key.replace("-", "_")
        if hasattr(args, attr) and attr not in explicit:
            setattr(args, attr, value)
    return args


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.experiment is None:
        parser.print_help()
        return 2
    explicit = set(vars(_build_parser(suppress_defaults=True).parse_args(argv)))
    t0 = time.time()
    try:
        args = _apply_config_file(args, explicit)
        seed = args.seed
        if seed is None:
            env = os.environ.get("BRIDGELAB_SEED")
            seed = int(env) if env else 42
        if args.experiment == "bounds-check" and isinstance(args.grid, str):
            try:
                a, b = args.grid.lower().split("x")
                args.grid = (int(a), int(b))
            except ValueError as exc:
                raise UsageError(f"--grid must look like 40x40, got {args.grid!r}") from exc
        runner = RUNNERS[args.experiment]
        results, ok = runner(args, seed)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if "model" in str(exc):
            print(f"valid models: {', '.join(model_names())}", file=sys.stderr)
        return 2
    config = {
        k: v
        for k, v in vars(args).items()
        if k not in ("experiment",) and isinstance(v, (int, float, str, bool, type(None)))
    }
    if args.experiment == "accept-all":
        report = dict(results)
        report = _report("accept-all", config, seed, ok, {"suite": report}, t0)
    else:
        report = _report(args.experiment, config, seed, ok, results, t0)
    report_path = args.report or (
        args.out + ".report.json" if args.out else f"{args.experiment}.report.json"
    )
    write_report(report, report_path)
    print(f"{args.experiment}: {'PASS' if ok else 'FAIL'} (report: {report_path})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
