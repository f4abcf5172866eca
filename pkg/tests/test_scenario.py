from __future__ import annotations

import hashlib

import numpy as np
import pytest

from finfocal.errors import ScenarioError
from finfocal.scenario import DEFAULT_TOLERANCES, load_scenario, ray_coords, stock_path, stock_scenarios

from conftest import circle_chart, equator_chart, sphere_point_chart

BASE = {
    "name": "tmp",
    "metric": {"kind": "riemannian", "matrix": [[1, 0], [0, 1]]},
    "submanifold": {"kind": "circle", "radius": 1.0},
    "normal_side": "inward",
    "grid": {"rays": 8, "tmax": 2.0},
}


def with_(**parts):
    raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in BASE.items()}
    raw.update(parts)
    return raw


@pytest.mark.parametrize("name", ["circle", "ellipse", "sphere_equator", "sphere_point", "randers_circle", "line",
                                  "s3_point"])
def test_stock_scenarios_load(name):
    assert name in stock_scenarios()
    sc = load_scenario(name)
    assert sc.name == name
    assert sc.chart.dim >= 1
    assert sc.rays().shape[1] == sc.chart.dim


def test_digest_is_sha256_of_file():
    sc = load_scenario("circle")
    assert sc.digest == hashlib.sha256(stock_path("circle").read_bytes()).hexdigest()
    assert load_scenario(str(stock_path("circle"))).digest == sc.digest


def test_schema_violation():
    raw = with_()
    del raw["grid"]
    with pytest.raises(ScenarioError, match="schema"):
        load_scenario(raw)
    with pytest.raises(ScenarioError):
        load_scenario(with_(metric={"kind": "riemannian", "matrix": "identity"}))


def test_unreadable_and_malformed(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: [unclosed\n")
    with pytest.raises(ScenarioError):
        load_scenario(bad)


def test_overrides():
    sc = load_scenario("circle", {"tmax": 1.25, "tolerances": {"cut": 1e-4}})
    assert sc.T_max == 1.25
    assert sc.tolerances["cut"] == 1e-4
    assert sc.tolerances["time"] == 1e-9
    assert load_scenario("circle").T_max == 3.0


def test_default_tolerances_fill_gaps():
    sc = load_scenario(with_())
    assert sc.tolerances == DEFAULT_TOLERANCES


def test_expression_fields():
    sc = load_scenario(with_(metric={"kind": "riemannian", "matrix": [["1 + x0**2", 0], [0, 1]]}))
    g = sc.metric.fundamental_tensor(np.array([2.0, 0.0]), np.array([1.0, 0.0]))
    assert g[0, 0] == pytest.approx(5.0)
    assert not sc.system.flat


def test_expression_errors():
    with pytest.raises(ScenarioError, match="unknown symbols"):
        load_scenario(with_(metric={"kind": "riemannian", "matrix": [["1 + y**2", 0], [0, 1]]})).metric
    with pytest.raises(ScenarioError, match="parse"):
        load_scenario(with_(metric={"kind": "riemannian", "matrix": [["1 + (", 0], [0, 1]]})).metric


def test_geometry_errors_become_scenario_errors():
    with pytest.raises(ScenarioError):
        load_scenario(with_(submanifold={"kind": "ellipse", "a": 2.0})).submanifold
    with pytest.raises(ScenarioError):
        load_scenario(with_(metric={"kind": "randers", "drift": [1.2, 0.0]})).chart


def test_custom_curve():
    sc = load_scenario(with_(submanifold={"kind": "curve", "embedding": ["2*cos(u0)", "sin(u0)"],
                                          "period": float(2 * np.pi)}))
    assert np.allclose(sc.submanifold.point([0.0]), [2.0, 0.0])


def test_ray_coords_grids():
    z = ray_coords(circle_chart(), 8)
    assert z.shape == (8, 1)
    assert np.allclose(np.diff(z[:, 0]), 2 * np.pi / 8)
    # the point chart is a periodic circle of directions
    assert ray_coords(sphere_point_chart(), 6).shape == (6, 1)
    assert ray_coords(equator_chart(), 5).shape == (5, 1)
