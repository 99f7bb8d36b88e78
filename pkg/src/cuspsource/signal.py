"""Cusp-onset signal, detector intensities and their integrals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import DomainError
from .geometry import arrival_time
from .scenario import BaselineProfile, PlanarPoint, Scenario

QUAD_RTOL = 1e-10
QUAD_LIMIT = 200


def signal_value(s, profile: BaselineProfile, kappa: float, delta: float):
    """``S(s)``: zero before arrival, ``lambda(s) |s/delta|^kappa`` on the ramp, ``lambda(s)`` after."""
    s = np.asarray(s, dtype=float)
    ramp = np.clip(s / delta, 0.0, 1.0) ** kappa
    out = np.where(s < 0, 0.0, profile(np.maximum(s, 0.0)) * ramp)
    return out if out.ndim else float(out)


def signal_integral(a, profile: BaselineProfile, kappa: float, delta: float):
    """Closed form of ``int_0^a S(s) ds`` (zero for ``a <= 0``)."""
    a = np.maximum(np.asarray(a, dtype=float), 0.0)
    c, b = profile.value_at_0, profile.slope
    m = np.minimum(a, delta)
    r = m / delta
    ramp = c * delta * r ** (kappa + 1) / (kappa + 1) + b * delta**2 * r ** (kappa + 2) / (kappa + 2)
    tail_len = np.maximum(a - delta, 0.0)
    tail = c * tail_len + 0.5 * b * (np.maximum(a, delta) ** 2 - delta**2)
    out = ramp + tail
    return out if out.ndim else float(out)


def max_signal(profile: BaselineProfile, horizon: float) -> float:
    # the ramp factor is at most 1, so the baseline maximum bounds S
    return profile.max_on(horizon)


@dataclass(frozen=True)
class IntensitySpec:
    scenario: Scenario
    theta: PlanarPoint
    j: int

    @property
    def tau(self) -> float:
        return arrival_time(self.scenario.detectors[self.j].position, self.theta, self.scenario.nu)


def _check_time(t, horizon: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > horizon):
        raise DomainError(f"time outside [0, {horizon}]")
    return t


def intensity_at(scenario: Scenario, j: int, tau, t):
    """``n S_j(t - tau) + n lambda0`` without range checks (internal use)."""
    sc = scenario
    return sc.n * (signal_value(np.asarray(t) - tau, sc.profile(j), sc.kappa, sc.delta) + sc.lambda0)


def intensity(spec: IntensitySpec, t):
    sc = spec.scenario
    t = _check_time(t, sc.horizon)
    out = intensity_at(sc, spec.j, spec.tau, t)
    return out if np.ndim(out) else float(out)


def cumulative_at(scenario: Scenario, j: int, tau, t):
    """``int_0^t lambda_{j,n}(s) ds`` for arrival time ``tau`` (vectorised in tau and t)."""
    sc = scenario
    t = np.asarray(t, dtype=float)
    return sc.n * (
        sc.lambda0 * t + signal_integral(t - np.asarray(tau, dtype=float), sc.profile(j), sc.kappa, sc.delta)
    )


def cumulative_intensity(spec: IntensitySpec, t):
    sc = spec.scenario
    t = _check_time(t, sc.horizon)
    out = cumulative_at(sc, spec.j, spec.tau, t)
    return out if np.ndim(out) else float(out)


def _pieces(lo: float, hi: float, breaks) -> list[tuple[float, float]]:
    pts = sorted({lo, hi, *(b for b in breaks if lo < b < hi)})
    return [(a, b) for a, b in zip(pts[:-1], pts[1:]) if b > a]


def _integrate(f, lo: float, hi: float, breaks) -> float:
    # the first piece sits between the two cusps and carries a fixed share of
    # the total; later pieces only need to be accurate relative to it
    total = 0.0
    eps = 0.0
    for i, (a, b) in enumerate(_pieces(lo, hi, breaks)):
        val, _ = quad(f, a, b, epsabs=eps, epsrel=QUAD_RTOL, limit=QUAD_LIMIT)
        total += val
        if i == 0:
            eps = 1e-3 * QUAD_RTOL * abs(val)
    return total


def _support(scenario: Scenario, j: int, tau1: float, tau2: float):
    """Integration range and breakpoints in ``s = t - min(tau1, tau2)``.

    Working relative to the earlier arrival keeps ``s - offset`` exact near
    both cusps even when the arrival times differ by far less than their size.
    Returns ``(lo, hi, breaks, off1, off2)``; outside ``[lo, hi]`` the two
    shifted signals coincide.
    """
    sc = scenario
    a = min(tau1, tau2)
    off1, off2 = tau1 - a, tau2 - a
    d = max(off1, off2)
    lo = max(0.0, a) - a
    if sc.profile(j).is_constant:
        hi = min(sc.horizon - a, d + sc.delta)
    else:
        hi = sc.horizon - a
    breaks = [0.0, d, sc.delta, d + sc.delta]
    # past the later cusp the difference decays like (s - d)^(kappa - 1) on the scale d
    x = d
    while d + x < sc.delta:
        breaks.append(d + x)
        x *= 4.0
    return lo, hi, breaks, off1, off2


def detector_hellinger(scenario: Scenario, j: int, tau1: float, tau2: float) -> float:
    """``int_0^T (sqrt(lambda(tau1, t)) - sqrt(lambda(tau2, t)))^2 dt`` for one detector."""
    sc = scenario
    if tau1 == tau2:
        return 0.0
    prof = sc.profile(j)
    lo, hi, breaks, o1, o2 = _support(sc, j, tau1, tau2)
    if hi <= lo:
        return 0.0

    def f(s):
        s1 = signal_value(s - o1, prof, sc.kappa, sc.delta)
        s2 = signal_value(s - o2, prof, sc.kappa, sc.delta)
        # difference of square roots without cancellation
        d = (s1 - s2) / (math.sqrt(s1 + sc.lambda0) + math.sqrt(s2 + sc.lambda0))
        return d * d

    return sc.n * _integrate(f, lo, hi, breaks)


def detector_signal_l2(scenario: Scenario, j: int, tau1: float, tau2: float) -> float:
    """``int_0^T (S(t - tau1) - S(t - tau2))^2 dt`` (no factor n)."""
    sc = scenario
    if tau1 == tau2:
        return 0.0
    prof = sc.profile(j)
    lo, hi, breaks, o1, o2 = _support(sc, j, tau1, tau2)
    if hi <= lo:
        return 0.0

    def f(s):
        d = signal_value(s - o1, prof, sc.kappa, sc.delta) - signal_value(s - o2, prof, sc.kappa, sc.delta)
        return d * d

    return _integrate(f, lo, hi, breaks)


def _taus(scenario: Scenario, theta) -> list[float]:
    theta = PlanarPoint.parse(theta)
    return [arrival_time(d.position, theta, scenario.nu) for d in scenario.detectors]


def hellinger_integral(scenario: Scenario, theta1, theta2) -> float:
    """Sum over detectors of the squared Hellinger-type distance between intensities."""
    t1, t2 = _taus(scenario, theta1), _taus(scenario, theta2)
    return sum(detector_hellinger(scenario, j, a, b) for j, (a, b) in enumerate(zip(t1, t2)))


def signal_l2_distance(scenario: Scenario, theta1, theta2) -> float:
    t1, t2 = _taus(scenario, theta1), _taus(scenario, theta2)
    return sum(detector_signal_l2(scenario, j, a, b) for j, (a, b) in enumerate(zip(t1, t2)))


def hellinger_lower_bound(scenario: Scenario, theta1, theta2) -> float:
    """``n sum_j c_j int (S1 - S2)^2`` with ``c_j = 1 / (4 lambda_M)``."""
    sc = scenario
    t1, t2 = _taus(sc, theta1), _taus(sc, theta2)
    total = 0.0
    for j, (a, b) in enumerate(zip(t1, t2)):
        lam_max = sc.lambda0 + max_signal(sc.profile(j), sc.horizon)
        total += detector_signal_l2(sc, j, a, b) / (4.0 * lam_max)
    return sc.n * total
