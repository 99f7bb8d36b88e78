"""Monte Carlo experiments: rate studies, fdd checks, bound checks, efficiency.

Replicate ``i`` at sample size ``n`` always uses the seed
``derive_seed(master, n, i)``, so adding sample sizes or replicates never
changes existing results. Replicates run in a process pool when
``threads > 1``; results are reduced in replicate order, so reports are
identical for every thread count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ConfigurationError, InvalidParameterError
from .estimators import GridSpec, bayes_estimate, two_step_estimate
from .geometry import collinear, local_geometry
from .likelihood import LikelihoodEvaluator, local_points, normalising_rate
from .limit_field import UGrid, efficiency_bound, rate_constants
from .parallel import parallel_map as _parallel_map
from .rng import derive_seed
from .scenario import PlanarPoint, Scenario
from .signal import hellinger_integral
from .simulate import local_windows, simulate

REPORT_SCHEMA_VERSION = 1
MIN_REPLICATES = 30


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()) if len(x) else float("nan"), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


# ---------------------------------------------------------------- rate study


@dataclass(frozen=True)
class StudyConfig:
    scenario: Scenario
    n_list: tuple[float, ...] = (200.0, 2000.0, 20000.0)
    reps: int = 200
    seed: int = 0
    estimators: tuple[str, ...] = ("bayes",)
    windows: str = "informative"
    grid: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self):
        object.__setattr__(self, "n_list", tuple(float(n) for n in self.n_list))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if len(self.n_list) < 3 or list(self.n_list) != sorted(set(self.n_list)):
            raise ConfigurationError("n_list must hold at least three ascending distinct values")
        if self.reps < MIN_REPLICATES:
            raise ConfigurationError(f"at least {MIN_REPLICATES} replicates per n are required")
        bad = set(self.estimators) - {"bayes", "two_step"}
        if bad or "bayes" not in self.estimators:
            raise ConfigurationError(f"estimators must include 'bayes' and may add 'two_step', got {self.estimators}")
        if self.windows not in ("informative", "full"):
            raise ConfigurationError(f"windows must be 'informative' or 'full', got {self.windows!r}")

    def to_dict(self) -> dict:
        g = self.grid
        return {
            "scenario": self.scenario.to_dict(),
            "n_list": list(self.n_list),
            "reps": self.reps,
            "seed": self.seed,
            "estimators": list(self.estimators),
            "windows": self.windows,
            "grid": {"resolution": list(g.resolution), "levels": g.levels,
                     "coarse": list(g.coarse) if g.coarse else None, "pad": g.pad},
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "StudyConfig":
        sc = d.get("scenario")
        if isinstance(sc, str):
            path = Path(sc)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            scenario = Scenario.load(path)
        elif isinstance(sc, dict):
            scenario = Scenario.from_dict(sc)
        else:
            raise ConfigurationError("study config needs a scenario (path or object)")
        g = d.get("grid") or {}
        coarse = g.get("coarse", (17, 17))
        grid = GridSpec(
            resolution=tuple(g.get("resolution", (33, 33))),
            levels=int(g.get("levels", 8)),
            coarse=tuple(coarse) if coarse else None,
            pad=int(g.get("pad", 2)),
        )
        return cls(
            scenario=scenario,
            n_list=tuple(d.get("n_list", (200, 2000, 20000))),
            reps=int(d.get("reps", 200)),
            seed=int(d.get("seed", 0)),
            estimators=tuple(d.get("estimators", ("bayes",))),
            windows=str(d.get("windows", "informative")),
            grid=grid,
        )

    @classmethod
    def load(cls, path) -> "StudyConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)


@dataclass(frozen=True)
class ReplicateResult:
    n: float
    index: int
    seed: int
    bayes: tuple[float, float]
    two_step: tuple[float, float] | None
    boundary_warning: bool
    truncation_warning: bool


def _run_replicate(task) -> ReplicateResult:
    scenario, index, seed, windows, grid, with_two_step = task
    obs = simulate(scenario, seed, windows=None if windows == "full" else windows, validate=False)
    be = bayes_estimate(obs, grid=grid)
    ts = None
    if with_two_step:
        ts = tuple(float(v) for v in two_step_estimate(obs).theta_hat)
    return ReplicateResult(
        scenario.n, index, seed, (float(be.theta_hat[0]), float(be.theta_hat[1])), ts,
        bool(be.diagnostics["boundary_warning"]), bool(be.diagnostics["truncation_warning"]),
    )


@dataclass(frozen=True)
class RateStudyRow:
    n: float
    replicates: int
    mse_bayes: float
    se_bayes: float
    mean_error_bayes: float
    se_mean_error_bayes: float
    mse_two_step: float | None = None
    se_two_step: float | None = None
    boundary_warnings: int = 0
    truncation_warnings: int = 0

    CSV_FIELDS = (
        "n", "replicates", "mse_bayes", "se_bayes", "mean_error_bayes", "se_mean_error_bayes",
        "mse_two_step", "se_two_step", "boundary_warnings", "truncation_warnings",
    )


def fit_loglog(n, mse, se) -> dict:
    """OLS slope of ``ln mse`` on ``ln n`` with Monte Carlo and residual errors."""
    x = np.log(np.asarray(n, dtype=float))
    y = np.log(np.asarray(mse, dtype=float))
    var_y = (np.asarray(se, dtype=float) / np.asarray(mse, dtype=float)) ** 2
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ y / sxx)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    dof = len(x) - 2
    resid_se = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else float("nan")
    return {
        "slope": slope,
        "intercept": intercept,
        "slope_se": math.sqrt(float((xc / sxx) ** 2 @ var_y)),
        "slope_residual_se": resid_se,
        "residuals": [float(r) for r in resid],
    }


@dataclass
class StudyReport:
    config: StudyConfig
    rows: list[RateStudyRow]
    fit: dict
    fit_two_step: dict | None
    replicates: list[ReplicateResult]

    @property
    def slope(self) -> float:
        return self.fit["slope"]

    @property
    def slope_se(self) -> float:
        return self.fit["slope_se"]

    def to_dict(self) -> dict:
        k = self.config.scenario.kappa
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "scenario_hash": self.config.scenario.digest(),
            "config": self.config.to_dict(),
            "seeds": {"master": self.config.seed, "scheme": "derive_seed(master, n, replicate)"},
            "theoretical_slope": -2.0 / (2.0 * k + 1.0),
            "fit": self.fit,
            "fit_two_step": self.fit_two_step,
            "rows": [asdict(r) for r in self.rows],
            "warnings": {
                "boundary": sum(r.boundary_warnings for r in self.rows),
                "truncation": sum(r.truncation_warnings for r in self.rows),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RateStudyRow.CSV_FIELDS)
        for r in self.rows:
            w.writerow(["" if getattr(r, f) is None else repr(getattr(r, f)) for f in RateStudyRow.CSV_FIELDS])
        return buf.getvalue()

    def replicates_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "replicate", "seed", "bayes_x", "bayes_y", "two_step_x", "two_step_y",
                    "boundary_warning", "truncation_warning"])
        for r in self.replicates:
            ts = r.two_step or ("", "")
            w.writerow([repr(r.n), r.index, r.seed, repr(r.bayes[0]), repr(r.bayes[1]),
                        *(repr(v) if v != "" else "" for v in ts), int(r.boundary_warning), int(r.truncation_warning)])
        return buf.getvalue()

    def save(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {"report.json": self.to_json(), "rows.csv": self.rows_csv(), "replicates.csv": self.replicates_csv()}
        for name, text in files.items():
            (out / name).write_text(text)
        return [out / n for n in files]


def _row(n: float, results: list[ReplicateResult], theta0: np.ndarray) -> RateStudyRow:
    be = np.array([r.bayes for r in results]) - theta0
    sq = np.sum(be**2, axis=1)
    mse, se = _mean_se(sq)
    me, mse_se = _mean_se(np.sqrt(sq))
    ts_mse = ts_se = None
    if results[0].two_step is not None:
        ts = np.array([r.two_step for r in results]) - theta0
        ts_mse, ts_se = _mean_se(np.sum(ts**2, axis=1))
    return RateStudyRow(
        n, len(results), mse, se, me, mse_se, ts_mse, ts_se,
        sum(r.boundary_warning for r in results), sum(r.truncation_warning for r in results),
    )


def run_study(config: StudyConfig, threads: int = 1) -> StudyReport:
    sc = config.scenario
    theta0 = sc.source.as_array()
    with_ts = "two_step" in config.estimators
    tasks = []
    for n in config.n_list:
        scn = sc.with_(n=n)
        windows = "full" if config.windows == "full" else "informative"
        for i in range(config.reps):
            tasks.append((scn, i, derive_seed(config.seed, int(round(n)), i), windows, config.grid, with_ts))
    results = _parallel_map(_run_replicate, tasks, threads)
    rows = []
    for b, n in enumerate(config.n_list):
        rows.append(_row(n, results[b * config.reps : (b + 1) * config.reps], theta0))
    ns = [r.n for r in rows]
    fit = fit_loglog(ns, [r.mse_bayes for r in rows], [r.se_bayes for r in rows])
    fit_ts = None
    if with_ts:
        fit_ts = fit_loglog(ns, [r.mse_two_step for r in rows], [r.se_two_step for r in rows])
    return StudyReport(config, rows, fit, fit_ts, results)


def rate_study(scenario: Scenario, n_list, reps: int, seed: int, threads: int = 1, **kw) -> StudyReport:
    return run_study(StudyConfig(scenario, tuple(n_list), reps, seed, **kw), threads)


# ---------------------------------------------------------- local log Z_n(u)


def _local_log_z(task) -> np.ndarray:
    scenario, theta0, u, seed = task
    pts = local_points(scenario, theta0, u)
    obs = simulate(scenario, seed, windows=local_windows(scenario, pts), validate=False)
    vals = LikelihoodEvaluator(obs)(np.vstack([np.asarray(theta0, dtype=float)[None, :], pts]))
    out = vals[1:] - vals[0]
    out[np.all(np.asarray(u) == 0, axis=1)] = 0.0
    return out


def sample_local_log_z(scenario: Scenario, u_points, reps: int, seed: int, threads: int = 1) -> np.ndarray:
    """``log Z_n(u)`` at every ``u`` for ``reps`` datasets simulated at the source; shape ``(reps, m)``."""
    u = np.atleast_2d(np.asarray(u_points, dtype=float))
    theta0 = tuple(scenario.source)
    nkey = int(round(scenario.n))
    tasks = [(scenario, theta0, u, derive_seed(seed, nkey, i)) for i in range(reps)]
    return np.array(_parallel_map(_local_log_z, tasks, threads))


def limit_log_z_moments(scenario: Scenario, u_points) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian limit of ``log Z(u)``: means ``-v/2`` and variances ``v``."""
    geom = local_geometry(scenario)
    u = np.atleast_2d(np.asarray(u_points, dtype=float))
    var = np.zeros(len(u))
    for j in range(geom.k):
        rc = rate_constants(float(geom.gamma[j]), scenario.kappa)
        var += rc.variance(u @ geom.m[j])
    return -0.5 * var, var


def fdd_check(scenario: Scenario, u_points, n: float, reps: int, seed: int, threads: int = 1) -> dict:
    """Kolmogorov-Smirnov comparison of ``log Z_n(u)`` with its Gaussian limit."""
    sc = scenario.with_(n=n)
    u = np.atleast_2d(np.asarray(u_points, dtype=float))
    logs = sample_local_log_z(sc, u, reps, seed, threads)
    mean, var = limit_log_z_moments(sc, u)
    out = []
    for i, ui in enumerate(u):
        x = logs[:, i]
        entry = {
            "u": [float(v) for v in ui],
            "limit_mean": float(mean[i]),
            "limit_variance": float(var[i]),
            "sample_mean": float(x.mean()),
            "sample_variance": float(x.var(ddof=1)),
        }
        if var[i] == 0:
            ok = bool(np.all(x == 0))
            entry.update(degenerate=True, exact_zero=ok, ks_statistic=0.0 if ok else 1.0, p_value=1.0 if ok else 0.0)
        else:
            ks = stats.kstest(x, "norm", args=(mean[i], math.sqrt(var[i])))
            entry.update(degenerate=False, ks_statistic=float(ks.statistic), p_value=float(ks.pvalue))
        out.append(entry)
    return {"n": float(n), "reps": reps, "seed": seed, "points": out}


def hellinger_check(scenario: Scenario, u_points, n: float, reps: int, seed: int, threads: int = 1) -> dict:
    """Monte Carlo ``E sqrt(Z_n(u))`` against ``exp(-H / 2)`` at each ``u``."""
    sc = scenario.with_(n=n)
    u = np.atleast_2d(np.asarray(u_points, dtype=float))
    logs = sample_local_log_z(sc, u, reps, seed, threads)
    pts = local_points(sc, sc.source, u)
    out = []
    for i, ui in enumerate(u):
        m, se = _mean_se(np.exp(0.5 * logs[:, i]))
        exact = math.exp(-0.5 * hellinger_integral(sc, sc.source, pts[i]))
        out.append({"u": [float(v) for v in ui], "mc_mean": m, "mc_se": se, "exact": exact,
                    "z_score": (m - exact) / se if se > 0 else 0.0})
    return {"n": float(n), "reps": reps, "seed": seed, "points": out}


# -------------------------------------------------------------- bound checks


def _directions(count: int) -> np.ndarray:
    a = 2 * math.pi * np.arange(count) / count
    return np.column_stack([np.cos(a), np.sin(a)])


def ray_growth(scenario: Scenario, directions: int = 8, fit_range=(1e-4, 1e-1), bound_range=(0.01, 0.5),
               points_per_decade: int = 4) -> dict:
    """Deterministic Hellinger growth ``H(theta0, theta0 + r e)`` along rays.

    The exponent is the log-log slope over ``fit_range * diam``; the constant
    is the minimum of ``H / r^(2 kappa + 1)`` over ``bound_range * diam``.
    """
    sc = scenario
    diam = sc.domain.diameter
    k = sc.kappa
    theta0 = sc.source.as_array()
    lo, hi = fit_range
    r_fit = diam * np.logspace(math.log10(lo), math.log10(hi), int(points_per_decade * math.log10(hi / lo)) + 1)
    r_bnd = diam * np.logspace(math.log10(bound_range[0]), math.log10(bound_range[1]), 12)
    rays = []
    for e in _directions(directions):
        h_fit = np.array([hellinger_integral(sc, theta0, theta0 + r * e) for r in r_fit])
        h_bnd = np.array([hellinger_integral(sc, theta0, theta0 + r * e) for r in r_bnd])
        slope = float(np.polyfit(np.log(r_fit), np.log(h_fit), 1)[0])
        rays.append({
            "direction": [float(v) for v in e],
            "exponent": slope,
            "min_ratio": float(np.min(h_bnd / r_bnd ** (2 * k + 1))),
        })
    return {
        "target_exponent": 2 * k + 1,
        "min_exponent": min(r["exponent"] for r in rays),
        "min_constant": min(r["min_ratio"] for r in rays),
        "rays": rays,
    }


def mirror_point(scenario: Scenario) -> np.ndarray | None:
    """Reflection of the source across the detector line, when detectors are collinear."""
    pos = scenario.detector_positions()
    if not collinear(pos):
        return None
    c = pos.mean(axis=0)
    d = np.linalg.svd(pos - c)[2][0]
    p = scenario.source.as_array() - c
    return c + 2 * (p @ d) * d - p


def holder_pairs(scales: int = 20, base=(0.3, -0.2), direction=(0.6, 0.8), lo: float = 0.05, hi: float = 3.0):
    base = np.asarray(base, dtype=float)
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    d = np.logspace(math.log10(lo), math.log10(hi), scales)
    return [(base, base + di * e) for di in d]


def bound_checks(scenario: Scenario, pairs=None, rays: int = 8, n: float | None = None, reps: int = 1000,
                 seed: int = 0, threads: int = 1) -> dict:
    """Hoelder-type increment bound (Monte Carlo) and ray growth (exact)."""
    sc = scenario if n is None else scenario.with_(n=n)
    k = sc.kappa
    pairs = holder_pairs() if pairs is None else [(np.asarray(a, float), np.asarray(b, float)) for a, b in pairs]
    u = np.array([p for pair in pairs for p in pair])
    logs = sample_local_log_z(sc, u, reps, seed, threads)
    pts = local_points(sc, sc.source, u)
    holder = []
    for i, (u1, u2) in enumerate(pairs):
        dist = float(np.linalg.norm(u1 - u2))
        if dist == 0:
            holder.append({"u1": u1.tolist(), "u2": u2.tolist(), "distance": 0.0, "ratio": 0.0, "se": 0.0, "exact_ratio": 0.0})
            continue
        inc = (np.exp(0.5 * logs[:, 2 * i]) - np.exp(0.5 * logs[:, 2 * i + 1])) ** 2
        m, se = _mean_se(inc)
        exact = 2.0 * (1.0 - math.exp(-0.5 * hellinger_integral(sc, pts[2 * i], pts[2 * i + 1])))
        scale = dist ** (2 * k + 1)
        holder.append({"u1": u1.tolist(), "u2": u2.tolist(), "distance": dist,
                       "ratio": m / scale, "se": se / scale, "exact_ratio": exact / scale})
    live = [h for h in holder if h["distance"] > 0]
    if len(live) >= 3:
        rho, p_two = stats.spearmanr([h["distance"] for h in live], [h["ratio"] for h in live])
        res = stats.spearmanr([h["distance"] for h in live], [h["ratio"] for h in live], alternative="greater")
        trend_p = float(res.pvalue)
        rho = float(rho)
    else:
        rho, trend_p = float("nan"), float("nan")
    report = {
        "n": float(sc.n),
        "reps": reps,
        "seed": seed,
        "holder": {"pairs": holder, "max_ratio": max(h["ratio"] for h in live) if live else 0.0,
                   "spearman_rho": rho, "trend_p_value": trend_p},
        "rays": ray_growth(sc, directions=rays),
    }
    mirror = mirror_point(sc)
    if mirror is not None:
        report["mirror"] = {"point": mirror.tolist(), "hellinger": hellinger_integral(sc, sc.source, mirror)}
    return report


# ---------------------------------------------------------- efficiency check


def efficiency_check(scenario: Scenario, n_list=None, reps: int = 200, grid: UGrid | None = None, seed: int = 0,
                     field_reps: int = 2000, study: StudyReport | None = None, threads: int = 1) -> dict:
    """Scaled Bayes risk ``n^(p/(2 kappa+1)) E|err|^p`` against ``E|zeta|^p`` for ``p = 1, 2``."""
    if study is None:
        if n_list is None:
            raise InvalidParameterError("give n_list or a finished study")
        study = rate_study(scenario, n_list, reps, seed, threads)
    k = study.config.scenario.kappa
    bound = efficiency_bound(study.config.scenario, field_reps, grid, derive_seed(seed, 0xEFF), threads=threads)
    e1, s1 = bound.moments[1]
    e2, s2 = bound.moments[2]
    traj = []
    for r in study.rows:
        c2 = r.n ** (2 / (2 * k + 1))
        c1 = r.n ** (1 / (2 * k + 1))
        a2, sa2 = c2 * r.mse_bayes, c2 * r.se_bayes
        a1, sa1 = c1 * r.mean_error_bayes, c1 * r.se_mean_error_bayes
        ratio2 = a2 / e2
        ratio1 = a1 / e1
        traj.append({
            "n": r.n,
            "scaled_mse": a2, "scaled_mse_se": sa2,
            "ratio": ratio2, "ratio_se": ratio2 * math.hypot(sa2 / a2, s2 / e2),
            "scaled_mean_error": a1, "scaled_mean_error_se": sa1,
            "ratio_p1": ratio1, "ratio_p1_se": ratio1 * math.hypot(sa1 / a1, s1 / e1),
        })
    return {
        "bound": bound.to_dict(),
        "jensen_ok": bool(e1 <= math.sqrt(e2) + 1e-12),
        "trajectory": traj,
        "final_ratio": traj[-1]["ratio"],
        "final_ratio_se": traj[-1]["ratio_se"],
    }
