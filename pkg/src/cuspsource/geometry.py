"""Planar geometry: arrival times, directions, conditions C1-C5, identifiability."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DegenerateGeometryError, InvalidParameterError
from .scenario import PlanarPoint, Rectangle, Scenario

# relative tolerance for "same point" and "on one line" decisions
_GEOM_RTOL = 1e-12


def arrival_time(detector, source, nu: float) -> float:
    """Travel time ``|detector - source| / nu``."""
    if not nu > 0:
        raise InvalidParameterError(f"propagation speed must be positive, got {nu}")
    dx = detector[0] - source[0]
    dy = detector[1] - source[1]
    return math.hypot(dx, dy) / nu


def arrival_times(positions: np.ndarray, points: np.ndarray, nu: float) -> np.ndarray:
    """Vectorised travel times, shape ``(len(points), len(positions))``."""
    if not nu > 0:
        raise InvalidParameterError(f"propagation speed must be positive, got {nu}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    diff = positions[None, :, :] - points[:, None, :]
    return np.hypot(diff[..., 0], diff[..., 1]) / nu


def unit_direction(detector, source) -> np.ndarray:
    dx = detector[0] - source[0]
    dy = detector[1] - source[1]
    rho = math.hypot(dx, dy)
    scale = max(1.0, abs(detector[0]), abs(detector[1]))
    if rho <= _GEOM_RTOL * scale:
        raise DegenerateGeometryError(f"detector {tuple(detector)} coincides with source")
    return np.array([dx / rho, dy / rho])


@dataclass(frozen=True)
class LocalGeometry:
    """Per-detector quantities at a reference point (arrays indexed by detector)."""

    at: PlanarPoint
    tau: np.ndarray
    m: np.ndarray  # shape (k, 2)
    rho: np.ndarray
    gamma: np.ndarray

    @property
    def k(self) -> int:
        return len(self.tau)


def local_geometry(scenario: Scenario, at=None) -> LocalGeometry:
    at = PlanarPoint.parse(scenario.source if at is None else at)
    m = np.array([unit_direction(d.position, at) for d in scenario.detectors])
    rho = np.array([math.hypot(d.position.x - at.x, d.position.y - at.y) for d in scenario.detectors])
    tau = rho / scenario.nu
    lam = np.array([d.profile.value_at_0 for d in scenario.detectors])
    gamma = lam / (scenario.delta**scenario.kappa * math.sqrt(scenario.lambda0))
    return LocalGeometry(at, tau, m, rho, gamma)


def distance_range(point, rect: Rectangle) -> tuple[float, float]:
    """Smallest and largest distance from ``point`` to the closed rectangle."""
    near = rect.clamp(point)
    dmin = math.hypot(point[0] - near.x, point[1] - near.y)
    corners = rect.corners()
    dmax = float(np.max(np.hypot(corners[:, 0] - point[0], corners[:, 1] - point[1])))
    return dmin, dmax


def arrival_window(scenario: Scenario, j: int) -> tuple[float, float]:
    """``(alpha_j, beta_j)``: extreme arrival times at detector j over the domain."""
    dmin, dmax = distance_range(scenario.detectors[j].position, scenario.domain)
    return dmin / scenario.nu, dmax / scenario.nu


def collinear(positions: np.ndarray) -> bool:
    """True when all points lie on one line (fewer than 3 points count as collinear)."""
    pts = np.asarray(positions, dtype=float)
    if len(pts) < 3:
        return True
    centred = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    return bool(sv[1] <= _GEOM_RTOL * max(sv[0], 1.0) * 1e3)


@dataclass
class ConditionResult:
    name: str
    passed: bool
    description: str
    details: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "description": self.description, "details": self.details}


@dataclass
class ValidationReport:
    conditions: list[ConditionResult]
    windows: list[tuple[float, float]]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.conditions)

    def failed(self) -> list[str]:
        return [c.name for c in self.conditions if not c.passed]

    def __getitem__(self, name: str) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "conditions": [c.to_dict() for c in self.conditions],
            "arrival_windows": [{"alpha": a, "beta": b} for a, b in self.windows],
        }

    def format(self) -> str:
        lines = []
        for c in self.conditions:
            lines.append(f"{c.name}: {'pass' if c.passed else 'FAIL'}  {c.description}")
            lines.extend(f"    {d}" for d in c.details)
        return "\n".join(lines)


def validate_scenario(scenario: Scenario) -> ValidationReport:
    """Check C1-C5 and report every offending quantity rather than raising."""
    rect = scenario.domain
    T = scenario.horizon
    positions = scenario.detector_positions()

    c1 = ConditionResult("C1", True, "domain is a proper bounded rectangle and 0 < alpha_j < beta_j < T")
    windows: list[tuple[float, float]] = []
    if not rect.is_proper:
        c1.passed = False
        c1.details.append(f"degenerate rectangle {rect.to_dict()}")
    if scenario.nu > 0:
        for j in range(scenario.k):
            a, b = arrival_window(scenario, j)
            windows.append((a, b))
            if not (0 < a < b < T):
                c1.passed = False
                c1.details.append(f"detector {j}: alpha={a:.6g}, beta={b:.6g}, T={T:.6g}")
    else:
        c1.passed = False
        c1.details.append(f"propagation speed nu={scenario.nu} is not positive")

    c2 = ConditionResult("C2", True, "source inside the domain and away from detectors; no detector in closure of domain")
    src = scenario.source
    if not rect.contains(src):
        c2.passed = False
        c2.details.append(f"source ({src.x:.6g}, {src.y:.6g}) is not inside the domain")
    for j, d in enumerate(scenario.detectors):
        p = d.position
        if math.hypot(p.x - src.x, p.y - src.y) <= _GEOM_RTOL * max(1.0, abs(p.x), abs(p.y)):
            c2.passed = False
            c2.details.append(f"detector {j} coincides with the source")
        if rect.contains(p, closed=True):
            c2.passed = False
            c2.details.append(f"detector {j} at ({p.x:.6g}, {p.y:.6g}) lies in the closed domain")

    c3 = ConditionResult("C3", True, "kappa in (0, 1/2) and delta in (0, T)")
    if not 0 < scenario.kappa < 0.5:
        c3.passed = False
        c3.details.append(f"kappa={scenario.kappa}")
    if not 0 < scenario.delta < T:
        c3.passed = False
        c3.details.append(f"delta={scenario.delta}, T={T}")

    c4 = ConditionResult("C4", True, "baseline profiles strictly positive with continuous derivative on [0, T]")
    for j, d in enumerate(scenario.detectors):
        lo = d.profile.min_on(T)
        if not lo > 0:
            c4.passed = False
            c4.details.append(f"detector {j}: min baseline on [0, T] is {lo:.6g}")
    if not scenario.lambda0 > 0:
        c4.passed = False
        c4.details.append(f"noise level lambda0={scenario.lambda0} is not positive")
    if not (scenario.n >= 1 and T > 0):
        c4.passed = False
        c4.details.append(f"n={scenario.n}, T={T}: need n >= 1 and T > 0")

    c5 = ConditionResult("C5", True, "at least three detectors, not all on one line")
    if scenario.k < 3:
        c5.passed = False
        c5.details.append(f"only {scenario.k} detectors")
    elif collinear(positions):
        c5.passed = False
        c5.details.append("all detectors are collinear")

    return ValidationReport([c1, c2, c3, c4, c5], windows)


def directional_energy(angles, m: np.ndarray, kappa: float) -> np.ndarray:
    """``Q(e) = sum_j |<m_j, e>|^(2 kappa + 1)`` for ``e = (cos a, sin a)``."""
    angles = np.asarray(angles, dtype=float)
    e = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    proj = np.abs(e @ m.T)
    return np.sum(proj ** (2 * kappa + 1), axis=-1)


@dataclass(frozen=True)
class IdentifiabilityMargin:
    q1: float
    angle: float
    direction: np.ndarray


def identifiability_margin(scenario: Scenario, at=None, scan: int = 4096) -> IdentifiabilityMargin:
    """Minimum of ``Q`` over unit directions: dense scan on [0, pi) then golden section."""
    geom = local_geometry(scenario, at)
    return minimise_directional_energy(geom.m, scenario.kappa, scan)


def minimise_directional_energy(m: np.ndarray, kappa: float, scan: int = 4096) -> IdentifiabilityMargin:
    # Q(e) = Q(-e), so half a turn suffices
    grid = np.linspace(0.0, math.pi, scan, endpoint=False)
    q = directional_energy(grid, m, kappa)
    i = int(np.argmin(q))
    step = math.pi / scan
    a, b, c = grid[i] - step, grid[i], grid[i] + step
    f = lambda t: float(directional_energy(t, m, kappa))
    best_angle, best_q = grid[i], float(q[i])
    if f(a) > best_q and f(c) > best_q:
        res = minimize_scalar(f, bracket=(a, b, c), method="golden", tol=1e-10)
        if res.fun <= best_q:
            best_angle, best_q = float(res.x), float(res.fun)
    best_angle %= math.pi
    return IdentifiabilityMargin(
        q1=max(best_q, 0.0),
        angle=best_angle,
        direction=np.array([math.cos(best_angle), math.sin(best_angle)]),
    )
