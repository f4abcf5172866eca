from __future__ import annotations

from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finfocal import cut
from finfocal.errors import NoConvergentFoot
from finfocal.oracle import minkowski_distance
from finfocal.verify import asymmetry_witness

from conftest import circle_chart, cut_scan_of, focal_scan_of, scenario

A, B = 2.0, 1.0


def medial_rho(th):
    return B * np.sqrt(B ** 2 * np.cos(th) ** 2 + A ** 2 * np.sin(th) ** 2) / A


def ellipse_lambda(th):
    return (A ** 2 * np.sin(th) ** 2 + B ** 2 * np.cos(th) ** 2) ** 1.5 / (A * B)


@lru_cache(maxsize=None)
def fan(name):
    sc = scenario(name)
    return cut.Fan(sc.chart, sc.T_max, starts=sc.cut_settings["starts"])


def test_distance_examples():
    res = cut.distance_to_point(fan("circle"), [0.3, 0.0])
    assert res.distance == pytest.approx(0.7, abs=1e-10)
    assert len(res.feet) == 1
    res = cut.distance_to_point(fan("randers_circle"), [0.0, 0.0])
    assert res.distance == pytest.approx(0.7, abs=1e-10)
    foot = res.feet[0]
    assert np.allclose(scenario("randers_circle").chart.normal(foot.normal.coords).point, [1.0, 0.0], atol=1e-6)
    q = np.array([np.cos(0.4) * np.cos(1.0), np.cos(0.4) * np.sin(1.0), -np.sin(0.4)])
    assert cut.distance_to_point(fan("sphere_equator"), q).distance == pytest.approx(0.4, abs=1e-6)


def test_feet_satisfy_invariants():
    f = fan("ellipse")
    for q in ([0.5, 0.0], [0.0, 0.2], [-1.0, -0.3]):
        res = cut.distance_to_point(f, q)
        for foot in res.feet:
            assert np.linalg.norm(cut.shoot(f.chart, foot.normal.coords, foot.time) - q) <= 1e-8
            assert abs(foot.time - res.distance) <= 1e-6


def test_no_convergent_foot():
    with pytest.raises(NoConvergentFoot):
        cut.distance_to_point(cut.Fan(circle_chart(), 0.5, 64), [5.0, 5.0])


def test_cut_time_examples():
    rec = cut.cut_time(fan("circle"), [0.4], 1.0, 3.0)
    assert rec.rho == pytest.approx(1.0, abs=1e-3)
    assert rec.separating and rec.focal and rec.reason == "separating"
    rec = cut.cut_time(fan("ellipse"), [np.pi / 2], ellipse_lambda(np.pi / 2), 5.0)
    assert rec.rho == pytest.approx(1.0, abs=1e-3) and rec.rho < 4.0
    assert rec.reason == "separating" and not rec.focal
    rec = cut.cut_time(fan("ellipse"), [0.0], ellipse_lambda(0.0), 5.0)
    assert rec.rho == pytest.approx(0.5, abs=1e-3)
    assert rec.reason == "focal" and rec.focal and not rec.separating


def test_horizon_reason():
    rec = cut.cut_time(fan("line"), [0.0], np.inf, 3.0)
    assert rec.reason == "horizon" and rec.horizon and rec.rho == np.inf


def test_separating_witness_examples():
    f = fan("ellipse")
    w = cut.separating_witness(f, [np.pi / 2], 1.0)
    assert w is not None
    assert f.chart.chart_distance(w.normal.coords, [3 * np.pi / 2]) < 1e-6
    assert cut.separating_witness(f, [0.0], 0.5) is None
    w = cut.separating_witness(fan("circle"), [0.3], 1.0)
    assert w is not None and fan("circle").chart.chart_distance(w.normal.coords, [0.3]) > 1e-3


def test_circle_scan_reports():
    cs, _, fs = cut_scan_of("circle")
    assert all(r.separating for r in cs.records)
    assert cut.closure_check(cs.records, scenario("circle").chart, 0.035) == 1.0
    rep = cut.rho_le_lambda_report(cs.records)
    assert abs(rep["max_violation"]) <= 1e-3 and not rep["vacuous"]
    t3 = cut.t3_not_cut_check(fs, cs)
    assert t3["t3_records"] == 0 and t3["pass"]


def test_line_report_is_vacuous():
    cs, _, _ = cut_scan_of("line")
    rep = cut.rho_le_lambda_report(cs.records)
    assert rep["vacuous"]
    assert all(r.reason == "horizon" for r in cs.records)


def test_t3_example_on_ellipse():
    fs = focal_scan_of("ellipse")
    i = int(np.argmin(np.abs(fs.coords[:, 0] - np.pi / 4)))
    rec = [r for r in fs.records if r.ray == i][0]
    assert rec.localform == "T3"
    cs, _, _ = cut_scan_of("ellipse")
    assert cs.records[i].rho == pytest.approx(medial_rho(fs.coords[i, 0]), abs=1e-3)
    assert cs.records[i].rho < rec.time - 1e-3
    assert medial_rho(np.pi / 4) == pytest.approx(0.7906, abs=1e-4)


def test_sphere_equator_cut_is_focal_not_t3():
    cs, _, fs = cut_scan_of("sphere_equator")
    for r in cs.records:
        assert r.rho == pytest.approx(np.pi / 2, abs=1e-3) and r.separating and r.focal
    first = [r for r in fs.records if r.order == 1]
    assert first and all(r.localform != "T3" for r in first)
    assert cut.t3_not_cut_check(fs, cs)["pass"]


def test_minkowski_exactness_and_asymmetry(rng):
    sc = scenario("randers_circle")
    f = fan("randers_circle")
    for q in rng.uniform(-1.3, 1.3, size=(10, 2)):
        d = cut.distance_to_point(f, q).distance
        assert d == pytest.approx(minkowski_distance(sc.metric, sc.submanifold, q), rel=1e-4)
    rep = asymmetry_witness(sc)
    assert rep["d_pq"] == pytest.approx(1.3, abs=1e-8) and rep["d_qp"] == pytest.approx(0.7, abs=1e-8)
    assert rep["gap"] > 0.1


@settings(max_examples=6, deadline=None)
@given(th=st.floats(0, 2 * np.pi))
def test_predicate_monotone_and_rho_below_lambda(th):
    f = fan("ellipse")
    rec = cut.cut_time(f, [th], ellipse_lambda(th), 5.0)
    assert rec.rho <= ellipse_lambda(th) + 1e-3
    ts = np.linspace(0.02, 2.5, 25)
    flags = [cut._predicate(f, [th], t, cut.PREDICATE_SLACK_FLAT)[0] for t in ts]
    first_false = flags.index(False) if False in flags else len(flags)
    assert not any(flags[first_false:])
    assert all(flags[:first_false])


def test_randers_cut_locus_shifted_against_drift():
    cs, _, _ = cut_scan_of("randers_circle")
    img = np.array([r.image for r in cs.records if np.isfinite(r.rho)])
    assert len(img) == len(cs.records)
    # drift (0.3, 0): the skeleton moves to negative x and stays symmetric in y
    assert np.all(img[:, 0] < -0.25)
    assert abs(img[:, 1].mean()) < 1e-9
