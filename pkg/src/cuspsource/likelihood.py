"""Log-likelihood of observation sets and the normalised likelihood-ratio field.

The log-likelihood of detector j depends on the candidate source only through
its arrival time ``tau``. :class:`DetectorLogLikelihood` evaluates

    l_j(tau) = sum_i log(n lambda0 + n S(t_i - tau)) - int_window lambda(tau, t) dt

for many ``tau`` at once. Events with ``t_i <= tau`` contribute the constant
``log(n lambda0)``; events past the ramp contribute a constant (constant
baseline) or a smooth function of tau (linear baseline); only events on the
ramp ``(tau, tau + delta]`` need individual work. For a dense batch of queries
spread over a short interval the ramp events far from the cusp give a sum that
is analytic in tau, and it is evaluated by Chebyshev interpolation; events near
the cusp and near the end of the ramp are summed exactly for every query.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Chebyshev

from .errors import DegenerateGeometryError, DomainError
from .geometry import arrival_times
from .scenario import PlanarPoint, Scenario
from .signal import signal_integral
from .simulate import EventRecord, ObservationSet

CHEB_DEGREE = 24
# matrix blocks are capped at this many elements
_BLOCK = 1 << 21


def _ramp_power(x: np.ndarray, kappa: float) -> np.ndarray:
    if kappa == 0.25:
        return np.sqrt(np.sqrt(x))
    if kappa == 0.125:
        return np.sqrt(np.sqrt(np.sqrt(x)))
    return np.power(x, kappa)


class DetectorLogLikelihood:
    """Vectorised ``tau -> l_j(tau)`` for one event record."""

    def __init__(self, scenario: Scenario, record: EventRecord, chunk_width: float | None = None):
        sc = scenario
        prof = sc.profile(record.detector_index)
        self.times = record.times
        self.start, self.end = record.start, record.end
        self.kappa, self.delta, self.lambda0, self.n = sc.kappa, sc.delta, sc.lambda0, sc.n
        self.c, self.b = prof.value_at_0, prof.slope
        self.profile = prof
        self.constant = prof.is_constant
        self.base = len(self.times) * math.log(self.n * self.lambda0)
        self.after_gain = math.log1p(self.c / self.lambda0) if self.constant else None
        self.chunk_width = self.delta / 16 if chunk_width is None else chunk_width

    # per-event gain log(1 + S(s)/lambda0), S = 0 for s <= 0
    def gain(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        x = np.clip(s / self.delta, 0.0, 1.0)
        level = self.c + self.b * np.maximum(s, 0.0) if not self.constant else self.c
        return np.log1p(level * _ramp_power(x, self.kappa) / self.lambda0)

    def compensator(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        si = signal_integral(self.end - tau, self.profile, self.kappa, self.delta) - signal_integral(
            self.start - tau, self.profile, self.kappa, self.delta
        )
        return self.n * (self.lambda0 * (self.end - self.start) + si)

    def _after_sum(self, lo: int, tau: float) -> float:
        if self.constant:
            return (len(self.times) - lo) * self.after_gain
        return float(np.sum(self.gain(self.times[lo:] - tau)))

    def _direct(self, tau: float) -> float:
        t = self.times
        i0 = np.searchsorted(t, tau, side="right")
        i1 = np.searchsorted(t, tau + self.delta, side="right")
        return float(np.sum(self.gain(t[i0:i1] - tau))) + self._after_sum(i1, tau)

    def _exact_block(self, q: np.ndarray, ev: np.ndarray) -> np.ndarray:
        out = np.zeros(len(q))
        if ev.size == 0:
            return out
        step = max(1, _BLOCK // ev.size)
        for i in range(0, len(q), step):
            qq = q[i : i + step]
            out[i : i + step] = self.gain(ev[None, :] - qq[:, None]).sum(axis=1)
        return out

    def _smooth_sum(self, ev: np.ndarray, lo: float, hi: float, q: np.ndarray) -> np.ndarray:
        if ev.size == 0:
            return np.zeros(len(q))

        def f(x):
            x = np.atleast_1d(x)
            return self._exact_block(x, ev)

        return Chebyshev.interpolate(f, CHEB_DEGREE, domain=[lo, hi])(q)

    def _chunk(self, q: np.ndarray) -> np.ndarray:
        t = self.times
        ta, tb = float(q[0]), float(q[-1])
        w = tb - ta
        d = self.delta
        iA0 = np.searchsorted(t, ta, side="right")
        iA1 = np.searchsorted(t, tb + w, side="left")
        iC0 = max(iA1, np.searchsorted(t, ta + d, side="left"))
        iC1 = max(iC0, np.searchsorted(t, tb + d, side="right"))
        exact = np.concatenate((t[iA0:iA1], t[iC0:iC1]))
        out = self._exact_block(q, exact)
        out += self._smooth_sum(t[iA1:iC0], ta, tb, q)
        if self.constant:
            out += (len(t) - iC1) * self.after_gain
        else:
            out += self._smooth_sum(t[iC1:], ta, tb, q)
        return out

    def jumps(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        flat = tau.ravel()
        uniq, inverse = np.unique(flat, return_inverse=True)
        vals = np.empty(len(uniq))
        min_batch = 2 * (CHEB_DEGREE + 1)
        i = 0
        while i < len(uniq):
            j = int(np.searchsorted(uniq, uniq[i] + self.chunk_width, side="right"))
            if j - i >= min_batch and 2 * (uniq[j - 1] - uniq[i]) < self.delta:
                vals[i:j] = self._chunk(uniq[i:j])
            else:
                j = i + 1
                vals[i] = self._direct(float(uniq[i]))
            i = j
        return vals[inverse].reshape(tau.shape)

    def __call__(self, tau) -> np.ndarray:
        return self.base + self.jumps(tau) - self.compensator(tau)


@dataclass(frozen=True)
class LogLikelihoodValue:
    value: float
    theta: PlanarPoint


class LikelihoodEvaluator:
    """Sum of per-detector log-likelihoods at many candidate points."""

    def __init__(self, obs: ObservationSet):
        self.obs = obs
        self.scenario = obs.scenario
        self.positions = self.scenario.detector_positions()
        self.detectors = [DetectorLogLikelihood(self.scenario, r) for r in obs.records]

    def arrival_times(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        taus = arrival_times(self.positions, pts, self.scenario.nu)
        scale = max(1.0, float(np.abs(self.positions).max()))
        if np.any(taus * self.scenario.nu <= 1e-12 * scale):
            raise DegenerateGeometryError("candidate point coincides with a detector")
        return taus

    def __call__(self, points) -> np.ndarray:
        taus = self.arrival_times(points)
        total = np.zeros(taus.shape[0])
        for j, det in enumerate(self.detectors):
            total += det(taus[:, j])
        return total

    def per_detector(self, points) -> np.ndarray:
        taus = self.arrival_times(points)
        return np.stack([det(taus[:, j]) for j, det in enumerate(self.detectors)], axis=1)


def log_likelihood(obs: ObservationSet, theta) -> LogLikelihoodValue:
    theta = PlanarPoint.parse(theta)
    value = float(LikelihoodEvaluator(obs)(np.array([theta]))[0])
    return LogLikelihoodValue(value, theta)


def normalising_rate(n: float, kappa: float) -> float:
    """``phi_n = n^(-1/(2 kappa + 1))``."""
    return n ** (-1.0 / (2.0 * kappa + 1.0))


def local_points(scenario: Scenario, theta0, u) -> np.ndarray:
    """``theta0 + nu phi_n u`` for an array of local coordinates ``u``."""
    theta0 = PlanarPoint.parse(theta0).as_array()
    u = np.atleast_2d(np.asarray(u, dtype=float))
    return theta0[None, :] + scenario.nu * normalising_rate(scenario.n, scenario.kappa) * u


def check_evaluation_region(scenario: Scenario, points: np.ndarray, labels=None) -> None:
    """Every point must be off the detectors with all arrival times inside (0, T)."""
    taus = arrival_times(scenario.detector_positions(), points, scenario.nu)
    bad = np.where(np.any((taus <= 0) | (taus >= scenario.horizon), axis=1))[0]
    if bad.size:
        i = int(bad[0])
        what = labels[i] if labels is not None else points[i]
        raise DomainError(f"point {tuple(np.round(what, 12))} leaves the evaluation region")


@dataclass(frozen=True)
class NormalizedField:
    u: np.ndarray  # shape (m, 2)
    log_z: np.ndarray
    theta0: PlanarPoint
    phi_n: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u_x", "u_y", "logZ"])
        for (ux, uy), lz in zip(self.u, self.log_z):
            w.writerow([repr(float(ux)), repr(float(uy)), repr(float(lz))])
        return buf.getvalue()


def normalized_field(obs: ObservationSet, theta0, u_list, evaluator: LikelihoodEvaluator | None = None) -> NormalizedField:
    sc = obs.scenario
    theta0 = PlanarPoint.parse(theta0)
    u = np.atleast_2d(np.asarray(u_list, dtype=float))
    pts = local_points(sc, theta0, u)
    check_evaluation_region(sc, pts, labels=u)
    ev = evaluator or LikelihoodEvaluator(obs)
    vals = ev(np.vstack([theta0.as_array()[None, :], pts]))
    log_z = vals[1:] - vals[0]
    log_z[np.all(u == 0, axis=1)] = 0.0
    return NormalizedField(u, log_z, theta0, normalising_rate(sc.n, sc.kappa))
