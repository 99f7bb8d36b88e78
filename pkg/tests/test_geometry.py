import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cuspsource.errors import DegenerateGeometryError, InvalidParameterError
from cuspsource.geometry import (
    arrival_time,
    arrival_times,
    arrival_window,
    collinear,
    identifiability_margin,
    local_geometry,
    unit_direction,
    validate_scenario,
)
from cuspsource.scenario import BaselineProfile, canonical_scenario

from conftest import make_scenario

coord = st.floats(-50, 50, allow_nan=False)


def test_arrival_time_basic():
    assert arrival_time((3.0, 4.0), (0.0, 0.0), 2.0) == pytest.approx(2.5)
    with pytest.raises(InvalidParameterError):
        arrival_time((1, 0), (0, 0), 0.0)


@given(coord, coord, coord, coord, coord, coord)
def test_arrival_times_satisfy_triangle_inequality(ax, ay, bx, by, cx, cy):
    # |tau(a) - tau(b)| <= |a - b| / nu for a fixed detector c
    t = arrival_times(np.array([[cx, cy]]), np.array([[ax, ay], [bx, by]]), 1.0)[:, 0]
    assert abs(t[0] - t[1]) <= math.hypot(ax - bx, ay - by) + 1e-9


@given(coord, coord, st.floats(-10, 10), st.floats(-10, 10))
def test_arrival_times_translation_invariant(x, y, dx, dy):
    pos = np.array([[0.0, 10.0], [10.0, 0.0]])
    a = arrival_times(pos, np.array([[x, y]]), 1.5)
    b = arrival_times(pos + [dx, dy], np.array([[x + dx, y + dy]]), 1.5)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-9)


def test_unit_direction_and_degenerate():
    np.testing.assert_allclose(unit_direction((0.0, 10.0), (0.0, 0.0)), [0.0, 1.0])
    with pytest.raises(DegenerateGeometryError):
        unit_direction((1.0, 1.0), (1.0, 1.0))


def test_local_geometry_canonical():
    g = local_geometry(canonical_scenario(signal=2.0))
    np.testing.assert_allclose(g.m[2], [-1 / math.sqrt(2), -1 / math.sqrt(2)])
    np.testing.assert_allclose(g.tau, [10.0, 10.0, 7 * math.sqrt(2)])
    np.testing.assert_allclose(g.gamma, 2.0)


def test_arrival_window_uses_corners_and_edges():
    sc = canonical_scenario()
    a, b = arrival_window(sc, 0)  # detector (0, 10) above the square
    assert a == pytest.approx(9.0)
    assert b == pytest.approx(math.hypot(1, 11))


def test_canonical_passes_all():
    rep = validate_scenario(canonical_scenario())
    assert rep.ok and rep.failed() == []


@pytest.mark.parametrize(
    "change, failing",
    [
        (dict(kappa=0.6), "C3"),
        (dict(kappa=0.5), "C3"),
        (dict(delta=25.0), "C3"),
        (dict(horizon=5.0), "C1"),
        (dict(lambda0=0.0), "C4"),
    ],
)
def test_single_condition_failures(change, failing):
    rep = validate_scenario(canonical_scenario().with_(**change))
    assert failing in rep.failed()


def test_source_and_detector_conditions():
    rep = validate_scenario(canonical_scenario().with_(source=(3.0, 0.0)))
    assert rep.failed() == ["C2"]
    inside = make_scenario([(0, 10), (10, 0), (0.5, 0.5)], source=(0.0, 0.0))
    assert "C2" in validate_scenario(inside).failed()


def test_collinear_and_too_few_detectors():
    line = make_scenario([(-10, 5), (0, 5), (10, 5)])
    assert collinear(line.detector_positions())
    assert validate_scenario(line).failed() == ["C5"]
    two = make_scenario([(-10, 5), (10, 5)])
    assert "C5" in validate_scenario(two).failed()


def test_negative_linear_baseline_fails_c4():
    sc = make_scenario([(0, 10), (10, 0), (-7, -7)], profile=BaselineProfile("linear", 1.0, -0.1))
    rep = validate_scenario(sc)
    assert "C4" in rep.failed()
    assert "detector 0" in rep["C4"].details[0]


def test_identifiability_margin_positive_and_rotation_invariant():
    sc = canonical_scenario()
    good = identifiability_margin(sc)
    assert good.q1 > 0.1
    # rotating the layout by 90 degrees about the source leaves the margin unchanged
    pos = sc.detector_positions() @ np.array([[0.0, 1.0], [-1.0, 0.0]])
    rot = make_scenario([tuple(p) for p in pos])
    assert identifiability_margin(rot).q1 == pytest.approx(good.q1, rel=1e-9)


def test_identifiability_margin_exact_for_parallel_directions():
    # detectors far along the x axis on both sides: m_j = (+-1, 0), so e = (0, 1) gives 0
    sc = make_scenario([(-1e6, 0), (1e6, 0), (2e6, 0)], domain=(-1, 1, -1, 1))
    res = identifiability_margin(sc)
    assert res.q1 < 1e-6
    assert abs(abs(res.direction[1]) - 1) < 1e-3
