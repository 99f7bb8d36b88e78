"""Bayes estimator, grid MLE, and the two-step arrival-time / multilateration estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateGeometryError, InvalidParameterError
from .geometry import arrival_window, collinear
from .likelihood import DetectorLogLikelihood, LikelihoodEvaluator
from .scenario import PlanarPoint, Prior, Rectangle, Scenario
from .simulate import EventRecord, ObservationSet

MASS_LEVEL = 1.0 - 1e-6
TIE_TOL = 1e-9
BOUNDARY_MASS_TOL = 1e-3
TRUNCATION_MASS_TOL = 1e-4


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid with adaptive zoom.

    Level 0 covers ``rect`` at ``coarse`` nodes per axis; each further level
    covers the padded bounding box of the posterior mass at ``resolution``
    nodes per axis, until the mass spans at least half the grid or ``levels``
    passes have been made.
    """

    rect: Rectangle | None = None
    resolution: tuple[int, int] = (33, 33)
    levels: int = 8
    coarse: tuple[int, int] | None = (17, 17)
    pad: int = 2

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        object.__setattr__(self, "resolution", res)
        if self.coarse is not None:
            object.__setattr__(self, "coarse", tuple(int(r) for r in self.coarse))
        for r in res + (self.coarse or ()):
            if r < 2:
                raise InvalidParameterError("grid resolution must be at least 2 per axis")
        if self.levels < 1:
            raise InvalidParameterError("at least one grid level is required")

    @classmethod
    def parse(cls, text: str, **kw) -> "GridSpec":
        """``"NX,NY"`` or ``"N"``."""
        parts = [int(p) for p in str(text).split(",")]
        if len(parts) == 1:
            parts *= 2
        return cls(resolution=(parts[0], parts[1]), **kw)


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    if len(nodes) == 1:
        return np.ones(1)
    h = np.diff(nodes)
    w = np.zeros(len(nodes))
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


@dataclass
class PosteriorSurface:
    rect: Rectangle
    xs: np.ndarray
    ys: np.ndarray
    log_values: np.ndarray  # shape (ny, nx): log prior + log likelihood
    log_normalizer: float
    weights: np.ndarray  # normalised node masses including quadrature weights

    @classmethod
    def build(cls, rect: Rectangle, xs, ys, log_values) -> "PosteriorSurface":
        wq = np.outer(trapezoid_weights(ys), trapezoid_weights(xs))
        top = float(np.max(log_values))
        scaled = np.exp(log_values - top) * wq
        total = float(np.sum(scaled))
        return cls(rect, xs, ys, log_values, top + math.log(total), scaled / total)

    def mean(self) -> PlanarPoint:
        w = self.weights
        return PlanarPoint(float(np.sum(w.sum(axis=0) * self.xs)), float(np.sum(w.sum(axis=1) * self.ys)))

    def spread(self) -> float:
        """Root of the posterior covariance trace on the grid."""
        mx, my = self.mean()
        vx = float(np.sum(self.weights.sum(axis=0) * (self.xs - mx) ** 2))
        vy = float(np.sum(self.weights.sum(axis=1) * (self.ys - my) ** 2))
        return math.sqrt(vx + vy)

    def mass_box(self, level: float = MASS_LEVEL) -> tuple[int, int, int, int]:
        """Index bounds of the smallest set of heaviest nodes holding ``level``."""
        flat = self.weights.ravel()
        order = np.argsort(flat, kind="stable")[::-1]
        cum = np.cumsum(flat[order])
        count = int(np.searchsorted(cum, level * cum[-1])) + 1
        iy, ix = np.unravel_index(order[:count], self.weights.shape)
        return int(ix.min()), int(ix.max()), int(iy.min()), int(iy.max())

    def edge_mass(self) -> float:
        w = self.weights
        return float(w[0, :].sum() + w[-1, :].sum() + w[1:-1, 0].sum() + w[1:-1, -1].sum())

    def boundary_mass(self, domain: Rectangle) -> float:
        """Mass on grid edges that lie on the domain boundary."""
        w = self.weights
        m = 0.0
        if self.xs[0] <= domain.x_min:
            m += w[:, 0].sum()
        if self.xs[-1] >= domain.x_max:
            m += w[:, -1].sum()
        if self.ys[0] <= domain.y_min:
            m += w[0, :].sum()
        if self.ys[-1] >= domain.y_max:
            m += w[-1, :].sum()
        return float(m)


@dataclass
class EstimateResult:
    theta_hat: PlanarPoint
    method: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"method": self.method, "theta_hat": self.theta_hat.to_dict(), "diagnostics": self.diagnostics}


def _nodes(rect: Rectangle, nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    return np.linspace(rect.x_min, rect.x_max, nx), np.linspace(rect.y_min, rect.y_max, ny)


def _zoom(rect: Rectangle, xs, ys, box, pad: int, domain: Rectangle) -> Rectangle:
    ix0, ix1, iy0, iy1 = box
    hx = xs[1] - xs[0] if len(xs) > 1 else 0.0
    hy = ys[1] - ys[0] if len(ys) > 1 else 0.0
    new = Rectangle(xs[ix0] - pad * hx, xs[ix1] + pad * hx, ys[iy0] - pad * hy, ys[iy1] + pad * hy)
    return new.intersect(domain)


def bayes_estimate(obs: ObservationSet, prior: Prior | None = None, grid: GridSpec | None = None,
                   evaluator: LikelihoodEvaluator | None = None) -> EstimateResult:
    """Posterior mean by trapezoid quadrature on adaptively zoomed grids."""
    sc = obs.scenario
    prior = prior or sc.prior
    grid = grid or GridSpec()
    domain = sc.domain
    ev = evaluator or LikelihoodEvaluator(obs)
    rect = grid.rect or domain
    zooms = []
    surf = None
    for level in range(grid.levels):
        nx, ny = grid.coarse if (level == 0 and grid.coarse) else grid.resolution
        xs, ys = _nodes(rect, nx, ny)
        X, Y = np.meshgrid(xs, ys)
        logl = ev(np.column_stack([X.ravel(), Y.ravel()])).reshape(ny, nx)
        surf = PosteriorSurface.build(rect, xs, ys, logl + prior.log_shape(X, Y))
        zooms.append(rect.to_dict())
        ix0, ix1, iy0, iy1 = surf.mass_box()
        resolved = (ix1 - ix0) >= (nx - 1) / 2 and (iy1 - iy0) >= (ny - 1) / 2
        if level > 0 and resolved:
            break
        if level == grid.levels - 1:
            break
        rect = _zoom(rect, xs, ys, (ix0, ix1, iy0, iy1), grid.pad, domain)
        if not rect.is_proper:
            break
    theta = surf.mean()
    bmass = surf.boundary_mass(domain)
    interior_edge = surf.edge_mass() - bmass
    diag = {
        "levels": len(zooms),
        "final_rect": surf.rect.to_dict(),
        "posterior_spread": surf.spread(),
        "boundary_mass": bmass,
        "boundary_warning": bmass > BOUNDARY_MASS_TOL,
        "truncation_warning": interior_edge > TRUNCATION_MASS_TOL,
    }
    return EstimateResult(theta, "bayes", diag)


def posterior_surface(obs: ObservationSet, prior: Prior | None = None, rect: Rectangle | None = None,
                      resolution=(65, 65)) -> PosteriorSurface:
    """Single-pass posterior on a fixed grid (for inspection and tests)."""
    sc = obs.scenario
    prior = prior or sc.prior
    rect = rect or sc.domain
    xs, ys = _nodes(rect, *resolution)
    X, Y = np.meshgrid(xs, ys)
    logl = LikelihoodEvaluator(obs)(np.column_stack([X.ravel(), Y.ravel()])).reshape(len(ys), len(xs))
    return PosteriorSurface.build(rect, xs, ys, logl + prior.log_shape(X, Y))


def _argmax_with_ties(values: np.ndarray, xs, ys) -> tuple[int, int, int]:
    top = float(np.max(values))
    iy, ix = np.nonzero(values >= top - TIE_TOL)
    # smallest x first, then smallest y
    order = np.lexsort((ys[iy], xs[ix]))
    return int(ix[order[0]]), int(iy[order[0]]), len(ix)


def mle_estimate(obs: ObservationSet, grid: GridSpec | None = None,
                 evaluator: LikelihoodEvaluator | None = None) -> EstimateResult:
    """Grid argmax of the likelihood with fixed-depth zoom around the maximiser."""
    sc = obs.scenario
    grid = grid or GridSpec(levels=4)
    domain = sc.domain
    ev = evaluator or LikelihoodEvaluator(obs)
    rect = grid.rect or domain
    ties = 1
    multimodal = False
    for level in range(grid.levels):
        nx, ny = grid.coarse if (level == 0 and grid.coarse) else grid.resolution
        xs, ys = _nodes(rect, nx, ny)
        X, Y = np.meshgrid(xs, ys)
        logl = ev(np.column_stack([X.ravel(), Y.ravel()])).reshape(ny, nx)
        ix, iy, ties = _argmax_with_ties(logl, xs, ys)
        multimodal = multimodal or ties > 1
        best = PlanarPoint(float(xs[ix]), float(ys[iy]))
        if level == grid.levels - 1 or nx * ny == 1:
            break
        new = _zoom(rect, xs, ys, (ix, ix, iy, iy), grid.pad, domain)
        if not new.is_proper:
            break
        rect = new
    return EstimateResult(best, "mle", {"levels": level + 1, "ties": ties, "multimodal": multimodal,
                                        "log_likelihood": float(logl[iy, ix])})


def arrival_time_estimate(record: EventRecord, scenario: Scenario, j: int | None = None,
                          resolution: int = 257, levels: int = 8) -> float:
    """Posterior mean of one detector's arrival time under a uniform prior on ``[alpha_j, beta_j]``."""
    j = record.detector_index if j is None else j
    alpha, beta = arrival_window(scenario, j)
    if not beta > alpha:
        raise ConfigurationError(f"empty arrival window for detector {j}: [{alpha}, {beta}]")
    ll = DetectorLogLikelihood(scenario, record)
    lo, hi = alpha, beta
    for level in range(levels):
        taus = np.linspace(lo, hi, resolution)
        v = ll(taus)
        w = np.exp(v - v.max()) * trapezoid_weights(taus)
        w /= w.sum()
        order = np.argsort(w, kind="stable")[::-1]
        cum = np.cumsum(w[order])
        keep = order[: int(np.searchsorted(cum, MASS_LEVEL)) + 1]
        i0, i1 = int(keep.min()), int(keep.max())
        if (i1 - i0) >= (resolution - 1) / 2 or level == levels - 1:
            break
        h = taus[1] - taus[0]
        lo, hi = max(alpha, taus[i0] - 2 * h), min(beta, taus[i1] + 2 * h)
    return float(np.sum(w * taus))


def _multilateration_setup(scenario: Scenario, taus) -> tuple[np.ndarray, np.ndarray]:
    pos = scenario.detector_positions()
    r = scenario.nu * np.asarray(taus, dtype=float)
    if len(r) != len(pos):
        raise InvalidParameterError("one arrival time per detector required")
    if len(pos) < 3:
        raise DegenerateGeometryError("multilateration needs at least three detectors")
    if collinear(pos):
        raise DegenerateGeometryError(
            "detectors are collinear: the source and its mirror image are indistinguishable"
        )
    return pos, r


def linearised_position(pos: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Subtract the first range equation from the others and solve the linear system."""
    A = 2.0 * (pos[1:] - pos[0])
    b = (np.sum(pos[1:] ** 2, axis=1) - np.sum(pos[0] ** 2)) - (r[1:] ** 2 - r[0] ** 2)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    return sol


def range_jacobian(pos: np.ndarray, theta: np.ndarray) -> np.ndarray:
    d = theta[None, :] - pos
    return d / np.linalg.norm(d, axis=1)[:, None]


def two_step_lse(taus, scenario: Scenario, max_iter: int = 50, step_tol: float = 1e-12) -> EstimateResult:
    """Least-squares source position from arrival times (linear start, Gauss-Newton polish)."""
    pos, r = _multilateration_setup(scenario, taus)
    theta = linearised_position(pos, r)
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        dist = np.linalg.norm(pos - theta[None, :], axis=1)
        if np.any(dist == 0):
            break
        resid = dist - r
        J = range_jacobian(pos, theta)
        step, *_ = np.linalg.lstsq(J, -resid, rcond=None)
        theta = theta + step
        if np.linalg.norm(step) <= step_tol * max(1.0, np.linalg.norm(theta)):
            converged = True
            break
    resid = np.linalg.norm(pos - theta[None, :], axis=1) - r
    return EstimateResult(
        PlanarPoint(float(theta[0]), float(theta[1])),
        "two_step",
        {"iterations": it, "converged": converged, "residual_norm": float(np.linalg.norm(resid))},
    )


def two_step_estimate(obs: ObservationSet) -> EstimateResult:
    """Arrival times per detector, then multilateration."""
    sc = obs.scenario
    taus = [arrival_time_estimate(rec, sc) for rec in obs.records]
    res = two_step_lse(taus, sc)
    res.diagnostics["arrival_times"] = taus
    return res
