"""Command-line entry point ``cuspsource``.

Exit status: 0 on success, 2 when the scenario fails validation (the
condition report is printed), 1 on any other error. Output files default to
the directory in ``CUSPSOURCE_OUT_DIR`` (or the working directory).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CuspSourceError, ScenarioValidationError
from .estimators import GridSpec, bayes_estimate, mle_estimate, two_step_estimate
from .geometry import validate_scenario
from .harness import StudyConfig, bound_checks, fdd_check, run_study
from .likelihood import normalized_field
from .limit_field import (
    UGrid,
    default_grid,
    rate_constants,
    unit_rate_closed_form,
    zeta_batch,
)
from .geometry import local_geometry
from .scenario import PlanarPoint, Scenario, canonical_scenario
from .simulate import ObservationSet, simulate

OUT_ENV = "CUSPSOURCE_OUT_DIR"


def _out_path(arg: str | None, default_name: str) -> Path:
    if arg:
        p = Path(arg)
        if not p.is_absolute() and OUT_ENV in os.environ and p.parent == Path("."):
            return Path(os.environ[OUT_ENV]) / p
        return p
    return Path(os.environ.get(OUT_ENV, ".")) / default_name


def _load_scenario(args) -> Scenario:
    if getattr(args, "scenario", None):
        sc = Scenario.load(args.scenario)
    else:
        sc = canonical_scenario()
    if getattr(args, "n", None) is not None:
        sc = sc.with_(n=float(args.n))
    return sc


def _checked(sc: Scenario) -> Scenario:
    report = validate_scenario(sc)
    if not report.ok:
        raise ScenarioValidationError(report)
    return sc


def _print_config(name: str, args, extra: dict | None = None) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    cfg["command"] = name
    if extra:
        cfg.update(extra)
    print("config: " + json.dumps(cfg, sort_keys=True, default=str))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    print(f"wrote {path}")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _points(text: str) -> np.ndarray:
    """``"x1,y1;x2,y2"`` into an ``(m, 2)`` array."""
    return np.array([PlanarPoint.parse(p) for p in text.split(";") if p.strip()], dtype=float)


# ------------------------------------------------------------------ commands


def cmd_validate(args) -> int:
    sc = _load_scenario(args)
    _print_config("validate", args, {"scenario_hash": sc.digest()})
    report = validate_scenario(sc)
    print(report.format())
    if args.out:
        _write(_out_path(args.out, "validation.json"), _dump(report.to_dict()))
    return 0 if report.ok else 2


def cmd_simulate(args) -> int:
    sc = _checked(_load_scenario(args))
    windows = None if args.windows == "full" else "informative"
    _print_config("simulate", args, {"scenario_hash": sc.digest()})
    obs = simulate(sc, args.seed, windows=windows)
    out = _out_path(args.out, "obs.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    side = obs.save(out)
    print(f"wrote {out}\nwrote {side}")
    print("counts: " + ",".join(str(c) for c in obs.counts))
    return 0


def _load_obs(args) -> ObservationSet:
    sc = Scenario.load(args.scenario) if args.scenario else None
    obs = ObservationSet.load(args.obs, sc)
    _checked(obs.scenario)
    return obs


def cmd_estimate(args) -> int:
    obs = _load_obs(args)
    _print_config("estimate", args)
    if args.method == "bayes":
        res = bayes_estimate(obs, grid=GridSpec.parse(args.grid) if args.grid else None)
    elif args.method == "mle":
        res = mle_estimate(obs, grid=GridSpec.parse(args.grid, levels=4) if args.grid else None)
    else:
        res = two_step_estimate(obs)
    text = _dump(res.to_dict())
    print(f"theta_hat: {res.theta_hat[0]!r},{res.theta_hat[1]!r}")
    _write(_out_path(args.out, "estimate.json"), text)
    return 0


def cmd_field(args) -> int:
    obs = _load_obs(args)
    theta0 = PlanarPoint.parse(args.theta0) if args.theta0 else obs.scenario.source
    nx, ny = (GridSpec.parse(args.grid).resolution if args.grid else (21, 21))
    _print_config("field", args, {"theta0": list(theta0), "nodes": [nx, ny]})
    ax = np.linspace(-args.half_width, args.half_width, nx)
    ay = np.linspace(-args.half_width, args.half_width, ny)
    X, Y = np.meshgrid(ax, ay)
    nf = normalized_field(obs, theta0, np.column_stack([X.ravel(), Y.ravel()]))
    _write(_out_path(args.out, "field.csv"), nf.to_csv())
    return 0


def cmd_constants(args) -> int:
    _print_config("constants", args)
    rc = rate_constants(args.gamma, args.kappa)
    out = {
        "kappa": args.kappa,
        "gamma": args.gamma,
        "R_minus": rc.R_minus,
        "R_plus": rc.R_plus,
        "closed_form": args.gamma**2 * unit_rate_closed_form(args.kappa),
        "truncation": 1e4,
    }
    text = _dump(out)
    sys.stdout.write(text)
    if args.out:
        _write(_out_path(args.out, "constants.json"), text)
    return 0


def cmd_limit_field(args) -> int:
    sc = _checked(_load_scenario(args))
    geom = local_geometry(sc)
    if args.half_width:
        grid, pilot = UGrid(args.half_width, args.grid), None
    else:
        grid, pilot = default_grid(sc, geom, args.seed + 1, resolution=args.grid)
    _print_config("limit-field", args, {"grid": grid.to_dict(), "pilot": pilot.to_dict() if pilot else None})
    z, edge = zeta_batch(geom, sc.kappa, sc.nu, grid, args.reps, args.seed, threads=args.threads)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replicate", "zeta_x", "zeta_y", "boundary_mass"])
    for i, (zi, ei) in enumerate(zip(z, edge)):
        w.writerow([i, repr(float(zi[0])), repr(float(zi[1])), repr(float(ei))])
    _write(_out_path(args.out, "zeta.csv"), buf.getvalue())
    sq = np.sum(z**2, axis=1)
    print(f"E|zeta|^2: {sq.mean()!r} +- {sq.std(ddof=1) / np.sqrt(len(sq))!r}")
    return 0


def cmd_rate_study(args) -> int:
    if args.config:
        cfg = StudyConfig.load(args.config)
    else:
        d = {"scenario": _load_scenario(args).to_dict(), "reps": args.reps or 200, "seed": args.seed}
        if args.n_list:
            d["n_list"] = _floats(args.n_list)
        if args.method:
            d["estimators"] = ["bayes"] if args.method == "bayes" else ["bayes", "two_step"]
        cfg = StudyConfig.from_dict(d)
    if args.reps and args.config:
        cfg = StudyConfig.from_dict({**cfg.to_dict(), "reps": args.reps})
    _checked(cfg.scenario)
    _print_config("rate-study", args, {"study": cfg.to_dict()})
    report = run_study(cfg, threads=args.threads)
    for p in report.save(_out_path(args.out, "report")):
        print(f"wrote {p}")
    print(f"slope: {report.slope!r} +- {report.slope_se!r}")
    return 0


def cmd_fdd_check(args) -> int:
    sc = _checked(_load_scenario(args))
    u = _points(args.u)
    _print_config("fdd-check", args)
    rep = fdd_check(sc, u, sc.n, args.reps, args.seed, threads=args.threads)
    for p in rep["points"]:
        print(f"u={p['u']} ks={p['ks_statistic']:.4f} p={p['p_value']:.4g}")
    _write(_out_path(args.out, "fdd.json"), _dump(rep))
    return 0


def cmd_bound_check(args) -> int:
    sc = _checked(_load_scenario(args))
    _print_config("bound-check", args)
    rep = bound_checks(sc, rays=args.rays, reps=args.reps, seed=args.seed, threads=args.threads)
    print(f"trend p (increase): {rep['holder']['trend_p_value']:.4g}")
    print(f"min ray exponent: {rep['rays']['min_exponent']:.4f}")
    _write(_out_path(args.out, "bounds.json"), _dump(rep))
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cuspsource", description="Cusp-signal source localisation toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_, scenario=True, seed=False, threads=True):
        sp = sub.add_parser(name, help=help_)
        if scenario:
            sp.add_argument("--scenario", help="scenario JSON (canonical scenario if omitted)")
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if threads:
            sp.add_argument("--threads", type=int, default=1, help="worker process cap (serial commands ignore it)")
        sp.add_argument("--out", help=f"output path (default under ${OUT_ENV})")
        sp.set_defaults(func=func)
        return sp

    sp = add("validate", cmd_validate, "check conditions C1-C5")
    sp.add_argument("--n", type=float)

    sp = add("simulate", cmd_simulate, "simulate detector events", seed=True)
    sp.add_argument("--n", type=float)
    sp.add_argument("--windows", choices=("full", "informative"), default="full")

    sp = add("estimate", cmd_estimate, "estimate the source position")
    sp.add_argument("--obs", required=True)
    sp.add_argument("--method", choices=("bayes", "mle", "two-step"), default="bayes")
    sp.add_argument("--grid", help="NX,NY nodes per zoom level")

    sp = add("field", cmd_field, "normalised log-likelihood ratio field")
    sp.add_argument("--obs", required=True)
    sp.add_argument("--theta0", help="x,y (default: the true source)")
    sp.add_argument("--grid", help="NX,NY nodes of the u-grid")
    sp.add_argument("--half-width", type=float, default=2.0)

    sp = add("constants", cmd_constants, "rate constants R_-, R_+", scenario=False)
    sp.add_argument("--kappa", type=float, required=True)
    sp.add_argument("--gamma", type=float, default=1.0)

    sp = add("limit-field", cmd_limit_field, "sample the limit vector zeta", seed=True)
    sp.add_argument("--reps", type=int, default=2000)
    sp.add_argument("--grid", type=int, default=101, help="nodes per axis")
    sp.add_argument("--half-width", type=float, help="u-grid half width (pilot-sized if omitted)")

    sp = add("rate-study", cmd_rate_study, "Monte Carlo rate study", seed=True, threads=True)
    sp.add_argument("--config", help="study config JSON")
    sp.add_argument("--n-list", help="comma-separated sample sizes")
    sp.add_argument("--reps", type=int)
    sp.add_argument("--method", choices=("bayes", "two-step"))

    sp = add("fdd-check", cmd_fdd_check, "finite-dimensional limit check", seed=True, threads=True)
    sp.add_argument("--n", type=float, default=1e4)
    sp.add_argument("--reps", type=int, default=2000)
    sp.add_argument("--u", default="0.4,0.2;-0.3,0.5;0.2,-0.6", help="points 'x,y;x,y;...'")

    sp = add("bound-check", cmd_bound_check, "increment and growth bounds", seed=True, threads=True)
    sp.add_argument("--n", type=float, default=1e3)
    sp.add_argument("--reps", type=int, default=1000)
    sp.add_argument("--rays", type=int, default=8)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except ScenarioValidationError as exc:
        print(exc.report.format(), file=sys.stderr)
        return 2
    except (CuspSourceError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
