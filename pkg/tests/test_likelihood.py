import math

import numpy as np
import pytest

from cuspsource.errors import DegenerateGeometryError, DomainError
from cuspsource.likelihood import (
    DetectorLogLikelihood,
    LikelihoodEvaluator,
    log_likelihood,
    normalized_field,
    normalising_rate,
)
from cuspsource.scenario import BaselineProfile, canonical_scenario
from cuspsource.signal import cumulative_at, intensity_at
from cuspsource.simulate import EventRecord, ObservationSet, simulate

from conftest import make_scenario


def naive(sc, rec, tau):
    lam = intensity_at(sc, rec.detector_index, tau, rec.times)
    comp = cumulative_at(sc, rec.detector_index, tau, rec.end) - cumulative_at(sc, rec.detector_index, tau, rec.start)
    return float(np.sum(np.log(lam)) - comp)


@pytest.mark.parametrize("profile", [BaselineProfile("constant", 2.0), BaselineProfile("linear", 1.0, 0.05)])
def test_matches_naive_sum(profile):
    sc = make_scenario([(0, 10), (10, 0), (-7, -7)], profile=profile, n=150.0)
    obs = simulate(sc, 4)
    rec = obs.records[1]
    ll = DetectorLogLikelihood(sc, rec)
    taus = np.array([9.2, 9.95, 10.0, 10.37, 11.0])
    np.testing.assert_allclose(ll(taus), [naive(sc, rec, t) for t in taus], rtol=1e-12, atol=1e-8)


@pytest.mark.parametrize("profile", [BaselineProfile("constant", 2.0), BaselineProfile("linear", 1.0, 0.05)])
def test_chunked_path_matches_direct(profile):
    sc = make_scenario([(0, 10), (10, 0), (-7, -7)], profile=profile, n=2000.0)
    obs = simulate(sc, 8, windows="informative")
    ll = DetectorLogLikelihood(sc, obs.records[0])
    q = np.linspace(9.98, 10.03, 400)  # dense enough to trigger interpolation
    fast = ll.jumps(q)
    slow = np.array([ll._direct(t) for t in q])
    np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-9)


def test_evaluator_sum_and_detector_guard():
    sc = canonical_scenario(100.0)
    obs = simulate(sc, 2)
    ev = LikelihoodEvaluator(obs)
    pts = np.array([[0.1, 0.2], [-0.3, 0.4]])
    np.testing.assert_allclose(ev(pts), ev.per_detector(pts).sum(axis=1))
    assert log_likelihood(obs, (0.1, 0.2)).value == pytest.approx(ev(pts[:1])[0])
    with pytest.raises(DegenerateGeometryError):
        ev(np.array([[0.0, 10.0]]))


def test_empty_record_is_pure_compensator():
    sc = canonical_scenario(10.0)
    rec = EventRecord(0, np.array([]), 0.0, 20.0)
    ll = DetectorLogLikelihood(sc, rec)
    expected = -(cumulative_at(sc, 0, 10.0, 20.0))
    assert ll(10.0) == pytest.approx(expected)


def test_normalized_field():
    sc = canonical_scenario(1000.0)
    obs = simulate(sc, 21)
    u = np.array([[0.0, 0.0], [0.5, -0.5], [1.0, 0.2]])
    nf = normalized_field(obs, sc.source, u)
    assert nf.log_z[0] == 0.0
    assert nf.phi_n == pytest.approx(1000 ** (-2 / 3))
    lines = nf.to_csv().splitlines()
    assert lines[0] == "u_x,u_y,logZ" and len(lines) == 4
    with pytest.raises(DomainError):
        normalized_field(obs, sc.source, [[0.0, 1e6]])


def test_normalising_rate():
    assert normalising_rate(1e6, 0.25) == pytest.approx(1e-4)
