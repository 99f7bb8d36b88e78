import json
import math

import pytest

from cuspsource.errors import InvalidParameterError
from cuspsource.scenario import BaselineProfile, PlanarPoint, Prior, Rectangle, Scenario, canonical_scenario


def test_point_parsing_forms():
    assert PlanarPoint.parse("1.5,-2") == PlanarPoint(1.5, -2.0)
    assert PlanarPoint.parse({"x": 1, "y": 2}) == PlanarPoint(1.0, 2.0)
    assert PlanarPoint.parse([3, 4]) == PlanarPoint(3.0, 4.0)
    with pytest.raises(InvalidParameterError):
        PlanarPoint.parse("1,2,3")
    with pytest.raises(InvalidParameterError):
        PlanarPoint.parse((math.nan, 0))


def test_rectangle_geometry():
    r = Rectangle(-1, 3, 0, 2)
    assert r.is_proper
    assert r.center == PlanarPoint(1.0, 1.0)
    assert r.diameter == pytest.approx(math.hypot(4, 2))
    assert r.contains((0, 1)) and not r.contains((3, 1))
    assert r.contains((3, 1), closed=True)
    assert r.clamp((5, -5)) == PlanarPoint(3.0, 0.0)
    assert not Rectangle(0, 0, 0, 1).is_proper


def test_baseline_profile():
    lin = BaselineProfile("linear", 2.0, -0.05)
    assert lin(10.0) == pytest.approx(1.5)
    assert lin.min_on(20.0) == pytest.approx(1.0)
    assert lin.max_on(20.0) == pytest.approx(2.0)
    with pytest.raises(InvalidParameterError):
        BaselineProfile("constant", 1.0, 0.1)
    with pytest.raises(InvalidParameterError):
        BaselineProfile("cubic", 1.0)


def test_prior_scale_only_shifts_log_density():
    p = Prior("gaussian", (0.0, 0.0), 0.5, scale=3.0)
    assert p.log_density(0.2, 0.1) - p.log_shape(0.2, 0.1) == pytest.approx(math.log(3.0))
    with pytest.raises(InvalidParameterError):
        Prior("gaussian", None, None)


def test_json_round_trip(tmp_path):
    sc = canonical_scenario(500.0).with_(prior=Prior("gaussian", (0.1, 0.0), 0.4))
    path = tmp_path / "s.json"
    sc.save(path)
    back = Scenario.load(path)
    assert back == sc
    assert back.digest() == sc.digest()
    assert json.loads(path.read_text())["schema_version"] == 1


def test_schema_version_and_missing_fields():
    d = canonical_scenario().to_dict()
    with pytest.raises(InvalidParameterError):
        Scenario.from_dict({**d, "schema_version": 99})
    d.pop("kappa")
    with pytest.raises(InvalidParameterError):
        Scenario.from_dict(d)


def test_translation_moves_everything():
    sc = canonical_scenario()
    t = sc.translated(5.0, -2.0)
    assert t.source == PlanarPoint(5.0, -2.0)
    assert t.domain == Rectangle(4.0, 6.0, -3.0, -1.0)
    assert t.detectors[0].position == PlanarPoint(5.0, 8.0)
