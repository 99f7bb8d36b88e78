import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cuspsource.errors import DomainError, InvalidParameterError
from cuspsource.geometry import local_geometry
from cuspsource.limit_field import (
    LimitFieldRealization,
    UGrid,
    efficiency_bound,
    factorise,
    j_covariance,
    rate_constants,
    sample_field,
    sample_log_z,
    tail_correction,
    unit_rate_closed_form,
    zeta_batch,
    zeta_samples,
)
from cuspsource.scenario import canonical_scenario


def test_closed_form_value():
    # Gamma(5/4)^2 / (Gamma(5/2) cos(pi/4))
    expected = math.gamma(1.25) ** 2 / (math.gamma(2.5) * math.cos(math.pi / 4))
    assert unit_rate_closed_form(0.25) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("kappa", [0.1, 0.25, 0.4])
def test_rate_constants_near_closed_form(kappa):
    rc = rate_constants(1.0, kappa)
    exact = unit_rate_closed_form(kappa)
    # leading-order tail leaves an O(M^(2 kappa - 2)) residual
    assert rc.R_minus == pytest.approx(exact, rel=1e-6)
    assert rc.R_plus == pytest.approx(exact, rel=1e-6)


def test_rate_constants_scaling_and_errors():
    assert rate_constants(0.0, 0.25).R_minus == 0.0
    a, b = rate_constants(1.0, 0.25), rate_constants(2.0, 0.25)
    assert b.R_minus == pytest.approx(4 * a.R_minus, rel=1e-15)
    for bad in (0.0, 0.5, 0.7):
        with pytest.raises(DomainError):
            rate_constants(1.0, bad)
    with pytest.raises(InvalidParameterError):
        rate_constants(-1.0, 0.25)


def test_tail_formula():
    assert tail_correction(0.25, 1e4) == pytest.approx(0.0625 * 1e4**-0.5 / 0.5)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3).filter(lambda v: abs(v) > 1e-3), st.floats(-3, 3).filter(lambda v: abs(v) > 1e-3))
def test_j_covariance_matches_fbm_form(h1, h2):
    R = unit_rate_closed_form(0.25)
    fbm = 0.5 * R * (abs(h1) ** 1.5 + abs(h2) ** 1.5 - abs(h1 - h2) ** 1.5)
    c = j_covariance(h1, h2, 0.25)
    assert c == pytest.approx(fbm, rel=1e-6, abs=1e-9)
    assert c == pytest.approx(j_covariance(h2, h1, 0.25), rel=1e-12)


def test_j_covariance_variance_identity():
    assert j_covariance(0.0, 1.0, 0.25) == 0.0
    rm = rate_constants(1.0, 0.3).R_minus
    assert j_covariance(-0.7, -0.7, 0.3) == pytest.approx(0.7**1.6 * rm, rel=1e-8)


def test_sample_field_origin_and_dedup():
    sc = canonical_scenario()
    geom = local_geometry(sc)
    grid = UGrid(2.0, 9)
    reals = sample_field(geom, sc.kappa, grid, 5, seed=4)
    pts = grid.points()
    origin = np.where(np.all(pts == 0, axis=1))[0][0]
    assert all(r.log_z[origin] == 0.0 for r in reals)
    f = factorise(geom, sc.kappa, pts)
    # the first direction is (0, 1): every node in a row shares its projection
    assert len(f[0].values) == 8  # 9 rows minus the zero row
    assert len(f[2].values) <= 16


def test_sampling_is_batch_independent():
    sc = canonical_scenario()
    geom = local_geometry(sc)
    grid = UGrid(1.5, 11)
    fac = factorise(geom, sc.kappa, grid.points())
    whole = sample_log_z(fac, 8, range(6))
    parts = np.vstack([sample_log_z(fac, 8, range(0, 2)), sample_log_z(fac, 8, range(2, 6))])
    np.testing.assert_array_equal(whole, parts)


def test_zeta_constant_field_gives_centroid():
    grid = UGrid(1.0, 5)
    reals = [LimitFieldRealization(grid.points(), np.zeros(25), 0, 0)]
    out = zeta_samples(reals, grid, nu=2.0)
    np.testing.assert_allclose(out[0].zeta, 0.0, atol=1e-15)
    assert out[0].boundary_warning  # flat field puts most mass near the edges


def test_zeta_reflection_equivariance(rng):
    grid = UGrid(2.0, 21)
    log_z = rng.normal(size=441)
    reflected = log_z[::-1]  # node order reverses under u -> -u on a symmetric grid
    a = zeta_samples([LimitFieldRealization(grid.points(), log_z, 0, 0)], grid, 1.0)[0].zeta
    b = zeta_samples([LimitFieldRealization(grid.points(), reflected, 0, 0)], grid, 1.0)[0].zeta
    np.testing.assert_allclose(b, -a, atol=1e-12)


def test_zeta_grid_mismatch():
    with pytest.raises(InvalidParameterError):
        zeta_samples([LimitFieldRealization(np.zeros((4, 2)), np.zeros(4), 0, 0)], UGrid(1.0, 5), 1.0)


def test_efficiency_bound_moments():
    sc = canonical_scenario()
    eb = efficiency_bound(sc, 300, seed=2, powers=(0, 1, 2))
    assert eb.moments[0] == (1.0, 0.0)
    m1, m2 = eb.moments[1][0], eb.moments[2][0]
    assert m1 <= math.sqrt(m2)
    assert eb.boundary_fraction < 0.01


def test_stronger_signal_sharpens_limit():
    weak = efficiency_bound(canonical_scenario(signal=1.0), 500, seed=3).moments[2]
    strong = efficiency_bound(canonical_scenario(signal=2.0), 500, seed=3).moments[2]
    assert strong[0] + 3 * strong[1] < weak[0] - 3 * weak[1]


def test_standard_error_shrinks_with_reps():
    sc = canonical_scenario()
    g = UGrid(5.0, 61)
    s500 = efficiency_bound(sc, 500, grid=g, seed=5).moments[2][1]
    s2000 = efficiency_bound(sc, 2000, grid=g, seed=5).moments[2][1]
    assert 0.3 < s2000 / s500 < 0.75  # expected 0.5
