"""Limit likelihood-ratio field, its constants, and the limit vector zeta.

Each detector contributes ``exp(J_j(u) - |<m_j, u>|^(2 kappa + 1) R_j(u) / 2)``
where ``J_j`` is a centred Gaussian process that depends on ``u`` only through
``h = <m_j, u>``, with

    J_j(h) = gamma_j * int (s + h)_+^kappa - s_+^kappa dW(s).

Its covariance follows from the variance ``|h|^(2 kappa + 1) R`` by
polarisation, because increments are stationary in ``h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln

from .errors import DomainError, InvalidParameterError, NumericalConditioningError
from .geometry import LocalGeometry, local_geometry
from .parallel import parallel_map
from .rng import substream
from .scenario import Scenario

TRUNCATION = 1e4
QUAD_RTOL = 1e-12
JITTER = 1e-10
BOUNDARY_MASS_TOL = 1e-3


def _check_kappa(kappa: float) -> None:
    if not 0 < kappa < 0.5:
        raise DomainError(f"kappa must lie in (0, 1/2), got {kappa}")


def _shift_diff(s, h, kappa):
    """``(s + h)^kappa - s^kappa`` for ``s > 0, s + h > 0`` without cancellation."""
    return s**kappa * math.expm1(kappa * math.log1p(h / s))


def tail_correction(kappa: float, M: float, scale: float = 1.0) -> float:
    """``int_M^inf (kappa h s^(kappa-1))^2 ds`` with ``h**2 = scale``."""
    return scale * kappa**2 * M ** (2 * kappa - 1) / (1 - 2 * kappa)


def _breaks(lo: float, hi: float) -> list[float]:
    pts = [lo]
    x = max(1.0, lo * 2 if lo > 0 else 1.0)
    while x < hi:
        if x > lo:
            pts.append(x)
        x *= 10.0
    pts.append(hi)
    return pts


def _quad_pieces(f, pts) -> float:
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b > a:
            total += quad(f, a, b, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)[0]
    return total


def unit_rate_integrals(kappa: float, M: float = TRUNCATION, tail: bool = True) -> tuple[float, float]:
    """``(R_-, R_+)`` at ``gamma = 1`` by adaptive quadrature on ``[.., M]`` plus tail."""
    _check_kappa(kappa)
    k = kappa
    # R_-: int_0^inf [ (s-1)_+^k - s^k ]^2
    r_minus = quad(lambda s: s ** (2 * k), 0.0, 1.0, epsabs=0.0, epsrel=QUAD_RTOL)[0]
    r_minus += _quad_pieces(lambda s: _shift_diff(s, -1.0, k) ** 2, _breaks(1.0, M))
    # R_+: int_{-1}^inf [ (s+1)^k - s_+^k ]^2
    r_plus = quad(lambda s: (s + 1.0) ** (2 * k), -1.0, 0.0, epsabs=0.0, epsrel=QUAD_RTOL)[0]
    r_plus += _quad_pieces(lambda s: _shift_diff(s, 1.0, k) ** 2, [0.0] + _breaks(1.0, M)[1:] if M > 1 else [0.0, M])
    if tail:
        t = tail_correction(k, M)
        r_minus += t
        r_plus += t
    return r_minus, r_plus


def unit_rate_closed_form(kappa: float) -> float:
    """``Gamma(kappa+1)^2 / (Gamma(2 kappa + 2) cos(pi kappa))``: the exact value of both integrals."""
    _check_kappa(kappa)
    return math.exp(2 * gammaln(kappa + 1) - gammaln(2 * kappa + 2)) / math.cos(math.pi * kappa)


@dataclass(frozen=True)
class RateConstants:
    R_minus: float
    R_plus: float
    gamma: float
    kappa: float

    def branch(self, h):
        """``R_j(u)`` as a function of the projection ``h = <m_j, u>``."""
        return np.where(np.asarray(h) < 0, self.R_minus, self.R_plus)

    def variance(self, h):
        h = np.asarray(h, dtype=float)
        return np.abs(h) ** (2 * self.kappa + 1) * self.branch(h)


_UNIT_CACHE: dict[tuple[float, float, bool], tuple[float, float]] = {}


def rate_constants(gamma: float, kappa: float, M: float = TRUNCATION, tail: bool = True) -> RateConstants:
    _check_kappa(kappa)
    if not gamma >= 0:
        raise InvalidParameterError(f"gamma must be non-negative, got {gamma}")
    key = (float(kappa), float(M), bool(tail))
    if key not in _UNIT_CACHE:
        _UNIT_CACHE[key] = unit_rate_integrals(kappa, M, tail)
    rm, rp = _UNIT_CACHE[key]
    g2 = gamma * gamma
    return RateConstants(g2 * rm, g2 * rp, float(gamma), float(kappa))


def j_covariance(h1: float, h2: float, kappa: float, M: float = TRUNCATION) -> float:
    """``Cov(J(h1), J(h2)) / gamma^2`` by direct quadrature of the kernel product."""
    _check_kappa(kappa)
    if h1 == 0 or h2 == 0:
        return 0.0
    k = kappa

    def f(s, h):
        if s + h <= 0:
            return 0.0 if s <= 0 else -(s**k)
        if s <= 0:
            return (s + h) ** k
        return _shift_diff(s, h, k)

    lo = max(min(-h1, 0.0), min(-h2, 0.0))
    scale = max(abs(h1), abs(h2))
    top = M * scale
    inner = sorted({lo, 0.0, -h1, -h2, scale} - {x for x in (0.0, -h1, -h2, scale) if x < lo})
    pts = [p for p in inner if p >= lo]
    x = scale * 10.0
    while x < top:
        pts.append(x)
        x *= 10.0
    pts.append(top)
    pts = sorted(set(pts))
    total = _quad_pieces(lambda s: f(s, h1) * f(s, h2), pts)
    return total + tail_correction(k, top, h1 * h2)


def fbm_covariance(h1, h2, kappa: float, rc: RateConstants):
    """Polarisation form of the J covariance (gamma^2 included via ``rc``)."""
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    return 0.5 * (rc.variance(h1) + rc.variance(h2) - rc.variance(h1 - h2))


@dataclass(frozen=True)
class UGrid:
    """Square grid ``[-L, L]^2`` with ``resolution`` nodes per axis."""

    half_width: float
    resolution: int = 101

    def __post_init__(self):
        if not self.half_width > 0 or self.resolution < 2:
            raise InvalidParameterError("u-grid needs positive half width and >= 2 nodes")

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.resolution)

    def points(self) -> np.ndarray:
        a = self.axis
        X, Y = np.meshgrid(a, a)
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.resolution, self.resolution)

    def to_dict(self) -> dict:
        return {"half_width": self.half_width, "resolution": self.resolution}


@dataclass(frozen=True)
class LimitFieldRealization:
    points: np.ndarray  # (m, 2), shared between realizations
    log_z: np.ndarray  # (m,)
    seed: int
    index: int


@dataclass
class DetectorFactor:
    """Covariance factor of one detector's process on the distinct projections."""

    j: int
    rc: RateConstants
    proj: np.ndarray  # projection of every point
    inverse: np.ndarray  # point -> distinct nonzero projection index, -1 for h == 0
    values: np.ndarray  # distinct nonzero projections
    chol: np.ndarray
    jittered: bool = False


def _distinct(h: np.ndarray, scale: float) -> tuple[np.ndarray, np.ndarray]:
    key = np.round(h / scale, 10)
    uniq, first, inv = np.unique(key, return_index=True, return_inverse=True)
    values = h[first]
    nonzero = uniq != 0.0
    remap = np.full(len(uniq), -1)
    remap[nonzero] = np.arange(int(nonzero.sum()))
    return values[nonzero], remap[inv]


def factorise(geometry: LocalGeometry, kappa: float, points: np.ndarray, max_distinct: int = 6000) -> list[DetectorFactor]:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    scale = max(float(np.abs(points).max()), 1e-300)
    factors = []
    for j in range(geometry.k):
        rc = rate_constants(float(geometry.gamma[j]), kappa)
        h = points @ geometry.m[j]
        values, inverse = _distinct(h, scale)
        if len(values) > max_distinct:
            raise NumericalConditioningError(
                f"detector {j}: {len(values)} distinct projections exceed the limit {max_distinct}", j
            )
        jittered = False
        if len(values):
            cov = fbm_covariance(values[:, None], values[None, :], kappa, rc)
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                jittered = True
                try:
                    chol = np.linalg.cholesky(cov + JITTER * float(np.max(np.diag(cov))) * np.eye(len(values)))
                except np.linalg.LinAlgError:
                    raise NumericalConditioningError(
                        f"covariance of detector {j} is not positive semidefinite", j
                    ) from None
        else:
            chol = np.zeros((0, 0))
        factors.append(DetectorFactor(j, rc, h, inverse, values, chol, jittered))
    return factors


def sample_j(factor: DetectorFactor, seed: int, indices) -> np.ndarray:
    """``J_j`` at every point for the given replicates, shape ``(len(indices), m)``.

    Replicate ``r`` draws from its own substream ``(seed, j, r)`` and is
    transformed by one matrix-vector product, so values do not depend on how
    replicates are batched.
    """
    indices = list(indices)
    nd = len(factor.values)
    if nd == 0:
        return np.zeros((len(indices), len(factor.proj)))
    J = np.stack([factor.chol @ substream(seed, factor.j, r).standard_normal(nd) for r in indices])
    padded = np.hstack([J, np.zeros((len(indices), 1))])  # column -1 -> h == 0
    return padded[:, factor.inverse]


def sample_log_z(factors: list[DetectorFactor], seed: int, indices) -> np.ndarray:
    """``log Z`` at every point for the given replicates, shape ``(len(indices), m)``."""
    indices = list(indices)
    out = np.zeros((len(indices), len(factors[0].proj)))
    for f in factors:
        out += sample_j(f, seed, indices) - 0.5 * f.rc.variance(f.proj)[None, :]
    return out


def sample_field(geometry: LocalGeometry, kappa: float, grid, reps: int, seed: int) -> list[LimitFieldRealization]:
    """Draw ``reps`` realizations of ``log Z`` on a u-grid (``UGrid`` or point array)."""
    _check_kappa(kappa)
    points = grid.points() if isinstance(grid, UGrid) else np.atleast_2d(np.asarray(grid, dtype=float))
    factors = factorise(geometry, kappa, points)
    logs = sample_log_z(factors, seed, range(reps))
    return [LimitFieldRealization(points, logs[r], int(seed), r) for r in range(reps)]


@dataclass(frozen=True)
class ZetaSample:
    zeta: np.ndarray
    boundary_mass: float
    index: int

    @property
    def boundary_warning(self) -> bool:
        return self.boundary_mass > BOUNDARY_MASS_TOL


def _grid_weights(grid: UGrid) -> np.ndarray:
    a = grid.axis
    h = np.diff(a)
    w = np.zeros(len(a))
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return np.outer(w, w).ravel()


def _edge_mask(grid: UGrid) -> np.ndarray:
    n = grid.resolution
    m = np.zeros((n, n), dtype=bool)
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
    return m.ravel()


def zeta_from_logs(log_z: np.ndarray, grid: UGrid, nu: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``nu * int u Z / int Z`` for rows of ``log_z``; also boundary mass fractions."""
    log_z = np.atleast_2d(log_z)
    w = _grid_weights(grid)
    pts = grid.points()
    scaled = np.exp(log_z - log_z.max(axis=1, keepdims=True)) * w[None, :]
    den = scaled.sum(axis=1)
    zeta = nu * (scaled @ pts) / den[:, None]
    edge = scaled[:, _edge_mask(grid)].sum(axis=1) / den
    return zeta, edge


def zeta_samples(realizations: list[LimitFieldRealization], grid: UGrid, nu: float) -> list[ZetaSample]:
    if not realizations:
        return []
    logs = np.stack([r.log_z for r in realizations])
    if logs.shape[1] != grid.resolution**2:
        raise InvalidParameterError("realizations do not match the grid")
    zeta, edge = zeta_from_logs(logs, grid, nu)
    return [ZetaSample(zeta[i], float(edge[i]), r.index) for i, r in enumerate(realizations)]


def directional_scale(geometry: LocalGeometry, kappa: float) -> float:
    """``min_e sum_j gamma_j^2 R |<m_j, e>|^(2 kappa + 1)``: curvature of the field drift."""
    angles = np.linspace(0.0, math.pi, 4096, endpoint=False)
    e = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    r = rate_constants(1.0, kappa).R_minus
    q = (np.abs(e @ geometry.m.T) ** (2 * kappa + 1)) @ (geometry.gamma**2 * r)
    return float(q.min())


@dataclass
class EfficiencyBound:
    moments: dict[float, tuple[float, float]]  # p -> (mean, standard error)
    grid: UGrid
    reps: int
    seed: int
    boundary_fraction: float
    pilot_grid: UGrid | None = None

    def to_dict(self) -> dict:
        return {
            "moments": {str(p): {"mean": m, "se": s} for p, (m, s) in self.moments.items()},
            "grid": self.grid.to_dict(),
            "pilot_grid": self.pilot_grid.to_dict() if self.pilot_grid else None,
            "reps": self.reps,
            "seed": self.seed,
            "boundary_fraction": self.boundary_fraction,
        }


_FACTOR_CACHE: dict = {}


def _batch_task(task) -> tuple[np.ndarray, np.ndarray]:
    geometry, kappa, nu, grid, seed, start, stop = task
    key = (geometry.m.tobytes(), geometry.gamma.tobytes(), kappa, grid.half_width, grid.resolution)
    factors = _FACTOR_CACHE.get(key)
    if factors is None:
        _FACTOR_CACHE.clear()  # one grid at a time keeps memory bounded
        factors = _FACTOR_CACHE[key] = factorise(geometry, kappa, grid.points())
    return zeta_from_logs(sample_log_z(factors, seed, range(start, stop)), grid, nu)


def zeta_batch(geometry: LocalGeometry, kappa: float, nu: float, grid: UGrid, reps: int, seed: int,
               batch: int = 200, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """All zeta vectors and boundary fractions, computed in memory-bounded batches.

    Batches may run in worker processes; every replicate has its own
    substream, so the output does not depend on ``batch`` or ``threads``.
    """
    tasks = [(geometry, kappa, nu, grid, seed, a, min(reps, a + batch)) for a in range(0, reps, batch)]
    parts = parallel_map(_batch_task, tasks, threads)
    return np.vstack([z for z, _ in parts]), np.concatenate([e for _, e in parts])


def default_grid(scenario: Scenario, geometry: LocalGeometry, seed: int, pilot_reps: int = 400,
                 resolution: int = 101, pilot_resolution: int = 41, width_factor: float = 6.0) -> tuple[UGrid, UGrid]:
    """Pilot pass on a wide grid, then ``width_factor`` root-mean-square radii."""
    kappa = scenario.kappa
    q = directional_scale(geometry, kappa)
    # drift reaches -30 at the pilot edge in the weakest direction
    start = (60.0 / q) ** (1.0 / (2 * kappa + 1))
    pilot = UGrid(start, pilot_resolution)
    z, _ = zeta_batch(geometry, kappa, scenario.nu, pilot, pilot_reps, seed)
    rms = math.sqrt(float(np.mean(np.sum(z**2, axis=1))))
    return UGrid(width_factor * rms / scenario.nu, resolution), pilot


def efficiency_bound(scenario: Scenario, reps: int, grid: UGrid | None = None, seed: int = 0,
                     powers=(1, 2), threads: int = 1) -> EfficiencyBound:
    """Monte Carlo moments ``E |zeta|^p`` with standard errors."""
    geom = local_geometry(scenario)
    pilot = None
    if grid is None:
        grid, pilot = default_grid(scenario, geom, seed + 1)
    z, edge = zeta_batch(geom, scenario.kappa, scenario.nu, grid, reps, seed, threads=threads)
    norms = np.linalg.norm(z, axis=1)
    moments = {}
    for p in powers:
        vals = norms**p
        moments[p] = (float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan"))
    return EfficiencyBound(moments, grid, reps, seed, float(np.mean(edge > BOUNDARY_MASS_TOL)), pilot)
