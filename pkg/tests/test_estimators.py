import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cuspsource.errors import DegenerateGeometryError, InvalidParameterError
from cuspsource.estimators import (
    GridSpec,
    arrival_time_estimate,
    bayes_estimate,
    mle_estimate,
    posterior_surface,
    trapezoid_weights,
    two_step_estimate,
    two_step_lse,
)
from cuspsource.geometry import arrival_times
from cuspsource.scenario import PlanarPoint, Prior, canonical_scenario
from cuspsource.simulate import EventRecord, ObservationSet, simulate

from conftest import make_scenario


def test_gridspec_parse_and_checks():
    assert GridSpec.parse("41,21").resolution == (41, 21)
    assert GridSpec.parse("9").resolution == (9, 9)
    with pytest.raises(InvalidParameterError):
        GridSpec(resolution=(1, 5))


def test_trapezoid_weights():
    w = trapezoid_weights(np.linspace(0, 2, 5))
    np.testing.assert_allclose(w, [0.25, 0.5, 0.5, 0.5, 0.25])


def test_bayes_is_consistent_at_large_n():
    sc = canonical_scenario(20000.0)
    obs = simulate(sc, 17, windows="informative")
    res = bayes_estimate(obs)
    err = math.hypot(*res.theta_hat)
    assert err < 0.02
    assert not res.diagnostics["boundary_warning"]
    assert res.diagnostics["posterior_spread"] < 0.02


def test_prior_scale_is_bit_identical():
    sc = canonical_scenario(2000.0)
    obs = simulate(sc, 3, windows="informative")
    p1 = Prior("gaussian", (0.1, 0.0), 0.5)
    p2 = Prior("gaussian", (0.1, 0.0), 0.5, scale=123.0)
    assert bayes_estimate(obs, prior=p1).theta_hat == bayes_estimate(obs, prior=p2).theta_hat


def test_translation_equivariance():
    sc = canonical_scenario(2000.0)
    obs = simulate(sc, 9, windows="informative")
    moved = sc.translated(5.0, -2.0)
    obs2 = ObservationSet(obs.records, moved, obs.seed)
    a = bayes_estimate(obs).theta_hat
    b = bayes_estimate(obs2).theta_hat
    assert b[0] - 5.0 == pytest.approx(a[0], abs=1e-9)
    assert b[1] + 2.0 == pytest.approx(a[1], abs=1e-9)


def test_posterior_surface_normalised():
    obs = simulate(canonical_scenario(200.0), 1, windows="informative")
    surf = posterior_surface(obs, resolution=(21, 21))
    assert surf.weights.sum() == pytest.approx(1.0)
    assert surf.weights.shape == (21, 21)


def test_mle_flat_likelihood_breaks_ties_at_smallest_coordinates():
    # windows closing before any possible arrival: the likelihood is flat
    sc = canonical_scenario(1.0)
    obs = ObservationSet(tuple(EventRecord(j, np.array([1.0, 2.5]), 0.0, 5.0) for j in range(3)), sc)
    res = mle_estimate(obs, grid=GridSpec(resolution=(5, 5), coarse=None, levels=1))
    assert res.theta_hat == PlanarPoint(-1.0, -1.0)
    assert res.diagnostics["multimodal"] and res.diagnostics["ties"] == 25


def test_mle_close_at_large_n():
    obs = simulate(canonical_scenario(20000.0), 5, windows="informative")
    assert math.hypot(*mle_estimate(obs).theta_hat) < 0.03


def test_arrival_time_estimate():
    sc = canonical_scenario(20000.0)
    obs = simulate(sc, 2, windows="informative")
    tau = arrival_time_estimate(obs.records[2], sc)
    assert tau == pytest.approx(7 * math.sqrt(2), abs=0.02)


def test_two_step_estimate_runs():
    sc = canonical_scenario(20000.0)
    res = two_step_estimate(simulate(sc, 2, windows="informative"))
    assert math.hypot(*res.theta_hat) < 0.05
    assert len(res.diagnostics["arrival_times"]) == 3


def test_two_step_lse_noiseless_exact():
    sc = canonical_scenario()
    for theta in [(0.0, 0.0), (0.37, -0.81), (-0.99, 0.5)]:
        taus = arrival_times(sc.detector_positions(), np.array([theta]), sc.nu)[0]
        res = two_step_lse(taus, sc)
        assert math.hypot(res.theta_hat[0] - theta[0], res.theta_hat[1] - theta[1]) < 1e-10


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-30, 30), st.floats(-30, 30)), min_size=3, max_size=6),
    st.floats(-0.9, 0.9),
    st.floats(-0.9, 0.9),
    st.floats(0.5, 3.0),
)
def test_two_step_lse_noiseless_random_layouts(positions, x, y, nu):
    pos = np.array(positions)
    c = pos - pos.mean(axis=0)
    sv = np.linalg.svd(c, compute_uv=False)
    if sv[1] < 1.0 or np.min(np.hypot(pos[:, 0] - x, pos[:, 1] - y)) < 2.0:
        return  # near-collinear or coincident layouts are ill-conditioned
    sc = make_scenario([tuple(p) for p in pos], nu=nu)
    taus = arrival_times(pos, np.array([[x, y]]), nu)[0]
    res = two_step_lse(taus, sc)
    assert math.hypot(res.theta_hat[0] - x, res.theta_hat[1] - y) < 1e-8


def test_two_step_lse_degenerate():
    line = make_scenario([(-10, 5), (0, 5), (10, 5)])
    with pytest.raises(DegenerateGeometryError):
        two_step_lse([5.0, 5.0, 5.0], line)
    two = make_scenario([(-10, 5), (10, 5)])
    with pytest.raises(DegenerateGeometryError):
        two_step_lse([5.0, 5.0], two)
