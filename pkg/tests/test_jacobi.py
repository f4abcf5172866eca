from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finfocal import metric as M
from finfocal import submanifold as S
from finfocal.errors import NotInKernel, PathMismatch
from finfocal.focal import detect_focal_times
from finfocal.geodesic import GeodesicSystem, integrate_flow
from finfocal.jacobi import (
    adjoint_defect,
    exp_differential,
    integrate_njacobi,
    jacobi_frame,
    n_jacobi_basis,
    second_order_check,
)
from finfocal.submanifold import NormalSphereChart

from conftest import circle_chart, ellipse_chart, equator_chart, line_chart, scenario, sphere_point_chart


def _fields(chart, z, T):
    un = chart.normal(z)
    path = integrate_flow(chart.system, un.point, un.vector, T, frame=True)
    return path, [integrate_njacobi(chart.system, path, p) for p in n_jacobi_basis(chart, z)]


def test_plane_curve_basis_has_tangential_and_radial_pair():
    pairs = n_jacobi_basis(circle_chart(), [0.4])
    assert len(pairs) == 2
    (J0, Jd0), (R0, Rd0) = pairs
    assert np.allclose(R0, 0) and np.allclose(Rd0, circle_chart().normal([0.4]).vector)
    assert np.allclose(J0, [-np.sin(0.4), np.cos(0.4)], atol=1e-14)


@pytest.mark.parametrize("name", ["circle", "ellipse", "randers_circle", "sphere_equator", "sphere_point"])
def test_initial_conditions(name):
    chart = scenario(name).chart
    m = chart.metric
    z = scenario(name).rays(5)[2]
    un = chart.normal(z)
    g = np.eye(len(un.point)) if m.embedded else m.fundamental_tensor(un.point, un.vector)
    A = chart.shape_matrix(z)
    T = chart.sub.tangent(un.param) if chart.m else np.zeros((len(un.point), 0))
    for a, (J0, Jd0) in enumerate(n_jacobi_basis(chart, z)):
        if a < chart.m:
            coef = np.linalg.lstsq(T, J0, rcond=None)[0]
            assert np.linalg.norm(T @ coef - J0) <= 1e-10
            perp = Jd0 - T @ (A @ coef)
        else:
            assert np.linalg.norm(J0) <= 1e-10
            perp = Jd0
        if chart.m:
            assert np.abs(perp @ g @ T).max() <= 1e-9


def test_radial_field_is_t_times_velocity():
    for chart, z, T in ((circle_chart(), [0.3], 3.0), (scenario("randers_circle").chart, [1.1], 3.0),
                        (equator_chart(), [0.5], 4.0)):
        path, fields = _fields(chart, z, T)
        R = fields[-1]
        for t in np.linspace(0.0, T, 9):
            assert np.allclose(R.J(t), t * path.velocity(t), atol=1e-9)


def test_circle_tangential_field_closed_form():
    fr = jacobi_frame(circle_chart(), [0.7], 3.0)
    e0 = fr.D(0.0)[:, 0]
    for t in np.linspace(0.0, 3.0, 13):
        assert np.allclose(fr.D(t)[:, 0], (1.0 - t) * e0, atol=1e-12)


def test_sphere_point_source_is_sine():
    chart = sphere_point_chart()
    fr = jacobi_frame(chart, [1.0], 2 * np.pi)
    scale = np.linalg.norm(chart.normal_derivative([1.0])[:, 0])
    for t in np.linspace(0.0, 2 * np.pi, 17):
        assert np.linalg.norm(fr.D(t)[:, 0]) == pytest.approx(abs(np.sin(t)) * scale, abs=1e-8)
    assert np.linalg.norm(fr.D(np.pi)[:, 0]) < 1e-8


def test_equator_tangential_field_is_cosine():
    fr = jacobi_frame(equator_chart(), [0.9], 2 * np.pi)
    e0 = fr.D(0.0)[:, 0]
    for t in np.linspace(0.0, 2 * np.pi, 17):
        assert np.allclose(fr.D(t)[:, 0], np.cos(t) * e0, atol=1e-8)


def test_line_tangential_field_constant():
    fr = jacobi_frame(line_chart(), [0.5], 5.0)
    for t in np.linspace(0.0, 5.0, 6):
        assert np.allclose(fr.D(t)[:, 0], fr.D(0.0)[:, 0], atol=1e-14)
        assert np.linalg.norm(fr.D(t)[:, 0]) == pytest.approx(1.0)


def test_adjoint_defect_examples():
    path, (J, R) = _fields(circle_chart(), [0.2], 3.0)
    ts = np.linspace(0.0, 3.0, 31)
    assert np.abs(adjoint_defect(J, J, ts)).max() == 0.0
    assert np.abs(adjoint_defect(J, R, ts)).max() <= 1e-8
    rng = np.random.default_rng(3)
    path, fields = _fields(equator_chart(), [1.3], 6.0)
    pairs = n_jacobi_basis(equator_chart(), [1.3])
    c1, c2 = rng.normal(size=2), rng.normal(size=2)
    mix = lambda c: (sum(ci * p[0] for ci, p in zip(c, pairs)), sum(ci * p[1] for ci, p in zip(c, pairs)))
    K1 = integrate_njacobi(equator_chart().system, path, mix(c1))
    K2 = integrate_njacobi(equator_chart().system, path, mix(c2))
    assert np.abs(adjoint_defect(K1, K2, np.linspace(0, 6, 25))).max() <= 1e-7


def test_adjoint_defect_path_mismatch():
    _, (J, _) = _fields(circle_chart(), [0.2], 1.0)
    _, (K, _) = _fields(circle_chart(), [0.4], 1.0)
    with pytest.raises(PathMismatch):
        adjoint_defect(J, K, 0.5)


def test_exp_differential():
    fr = jacobi_frame(circle_chart(), [0.4], 2.0)
    full = exp_differential(fr, 0.5)
    assert full.rank == 2 and full.kernel.shape[1] == 0
    focal = exp_differential(fr, 1.0)
    assert focal.rank == 1
    k = focal.kernel[:, 0]
    assert abs(k[0]) == pytest.approx(1.0, abs=1e-12)  # tangential direction
    for t in (0.3, 1.0, 1.7):
        assert np.allclose(fr.fields(t)[0][0][:, -1], t * fr.path.velocity(t), atol=1e-12)


def test_second_order_check():
    fr = jacobi_frame(circle_chart(), [0.4], 2.0)
    x = np.array([1.0, 0.0])
    fd, jd, defect = second_order_check(fr, 1.0, x, h=1e-3)
    assert defect <= 1e-5
    fd2, jd2, _ = second_order_check(fr, 1.0, 2 * x, h=1e-3)
    assert np.allclose(jd2, 2 * jd, atol=1e-12)
    chart = ellipse_chart()
    fr = jacobi_frame(chart, [np.pi / 4], 3.0)
    t_star = (1 + 3 * np.sin(np.pi / 4) ** 2) ** 1.5 / 2
    kernel = exp_differential(fr, t_star, rank_tol=1e-6).kernel[:, 0]
    assert second_order_check(fr, t_star, kernel, h=1e-3)[2] <= 1e-4
    with pytest.raises(NotInKernel):
        second_order_check(fr, t_star, np.array([0.0, 1.0]))


def test_frame_completeness_and_kernel_dimension():
    for chart, z, T in ((equator_chart(), [0.5], 6.0), (sphere_point_chart(), [0.3], 7.0), (ellipse_chart(), [1.0], 5.0)):
        fr = jacobi_frame(chart, z, T)
        found = detect_focal_times(fr, T)
        for t, k in found:
            assert exp_differential(fr, t).rank == chart.n - k
        times = [t for t in np.linspace(0.05, T, 37) if all(abs(t - f) > 0.05 for f, _ in found)]
        for t in times:
            Ds = fr.D_scaled(t)
            s = np.linalg.svd(Ds, compute_uv=False)
            assert abs(np.linalg.det(Ds)) > 1e-10 * s[0] ** chart.n


def test_zero_count_stable_under_tolerance_halving():
    loose = NormalSphereChart(S.point([1.0, 0.0, 0.0]), GeodesicSystem(M.embedded_hypersurface(lambda x: x @ x, 3, 1.0)))
    tight = NormalSphereChart(S.point([1.0, 0.0, 0.0]),
                              GeodesicSystem(M.embedded_hypersurface(lambda x: x @ x, 3, 1.0), rtol=5e-11, atol=5e-11))
    a = detect_focal_times(jacobi_frame(loose, [0.3], 7.0))
    b = detect_focal_times(jacobi_frame(tight, [0.3], 7.0))
    assert [k for _, k in a] == [k for _, k in b] == [1, 1]
    assert np.allclose([t for t, _ in a], [t for t, _ in b], atol=1e-8)


@settings(max_examples=8, deadline=None)
@given(th=st.floats(0, 2 * np.pi), which=st.sampled_from(["ellipse", "randers_circle", "sphere_equator"]))
def test_adjoint_identity_along_random_rays(th, which):
    sc = scenario(which)
    fr = jacobi_frame(sc.chart, [th], sc.T_max)
    ts = np.linspace(0.0, sc.T_max, 50)
    D, Dd = fr.D(ts), fr.Ddot(ts)
    defect = np.swapaxes(D, 1, 2) @ Dd - np.swapaxes(Dd, 1, 2) @ D
    scale = np.linalg.norm(D, axis=1)[:, :, None] * np.linalg.norm(Dd, axis=1)[:, None, :]
    assert np.abs(defect).max() <= 1e-7 * max(1.0, scale.max())
