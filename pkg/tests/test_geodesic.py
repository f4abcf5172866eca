from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finfocal import metric as M
from finfocal._jax import jnp
from finfocal.errors import InsufficientSamples, ZeroVector
from finfocal.geodesic import (
    GeodesicSystem,
    covariant_derivative_along,
    exponential,
    integrate_flow,
    integrate_geodesic,
    spray_acceleration,
    transported_frame,
)

from conftest import euclid_system, randers_system, sphere_system

# polar coordinates (r, theta) of the Euclidean plane: g = diag(1, r^2)
POLAR = GeodesicSystem(M.riemannian(lambda x: jnp.diag(jnp.array([1.0, x[0] ** 2])), dim=2))
CURVED_RANDERS = GeodesicSystem(M.randers(lambda x: jnp.eye(2) * (1.0 + 0.2 * x[0] ** 2),
                                          lambda x: jnp.array([0.2 * jnp.cos(x[1]), 0.1]), dim=2))


def polar_acceleration(x, v):
    # Gamma^r_tt = -r, Gamma^t_rt = 1/r
    r = x[0]
    return np.array([r * v[1] ** 2, -2.0 * v[0] * v[1] / r])


def test_minkowski_spray_vanishes():
    sys = GeodesicSystem(M.minkowski(lambda v: jnp.sqrt(v @ v) + 0.2 * v[0], 2))
    assert np.allclose(spray_acceleration(sys, [0.3, 0.1], [1.0, 2.0]), 0.0)
    assert np.allclose(spray_acceleration(randers_system(), [5.0, -1.0], [0.2, 0.4]), 0.0)


def test_sphere_spray_is_minus_p():
    p = np.array([0.6, 0.0, 0.8])
    v = np.array([0.0, 1.0, 0.0])
    assert np.allclose(spray_acceleration(sphere_system(), p, v), -p, atol=1e-14)


@pytest.mark.parametrize("x,v", [([1.0, 0.2], [0.3, 1.1]), ([2.5, -1.0], [-1.0, 0.4]), ([0.7, 3.0], [0.2, -0.3])])
def test_polar_spray_matches_hand_christoffels(x, v):
    assert np.allclose(spray_acceleration(POLAR, x, v), polar_acceleration(np.array(x), np.array(v)), atol=1e-12)


def test_polar_geodesic_is_a_straight_line():
    p, v = np.array([1.0, 0.0]), np.array([0.0, 1.0])  # unit speed along the tangent at (1, 0)
    path = integrate_geodesic(POLAR, p, v, 2.0)
    for t in (0.5, 1.0, 2.0):
        r, th = path.position(t)
        assert np.allclose([r * np.cos(th), r * np.sin(th)], [1.0, t], atol=1e-8)


def test_zero_vector_rejected():
    with pytest.raises(ZeroVector):
        spray_acceleration(POLAR, [1.0, 0.0], [0.0, 0.0])
    with pytest.raises(ZeroVector):
        integrate_geodesic(POLAR, [1.0, 0.0], [0.0, 0.0], 1.0)


def test_euclidean_geodesic_exact():
    p, v = np.array([0.3, -0.2]), np.array([1.5, 0.7])
    path = integrate_geodesic(euclid_system(), p, v, 3.0)
    for t in np.linspace(0, 3, 7):
        assert np.allclose(path.position(t), p + t * v, atol=1e-12)


def test_sphere_great_circle_period():
    p, v = np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.6, 0.8])
    path = integrate_geodesic(sphere_system(), p, v, 2 * np.pi)
    assert np.allclose(path.position(2 * np.pi), p, atol=1e-7)
    assert np.allclose(path.position(np.pi), -p, atol=1e-7)


def test_flat_randers_geodesic_is_straight():
    p, v = np.array([0.0, 0.0]), np.array([0.6, -0.8])
    path = integrate_geodesic(randers_system(), p, v, 2.0)
    X = path.position(np.linspace(0, 2, 9))
    cross = X[:, 0] * v[1] - X[:, 1] * v[0]
    assert np.abs(cross).max() < 1e-12


def test_exponential_endpoints_and_identity():
    p, v = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    assert np.array_equal(exponential(sphere_system(), p, v, 0.0), p)
    assert np.allclose(exponential(sphere_system(), p, v, 2 * np.pi), p, atol=1e-7)
    assert np.allclose(exponential(euclid_system(), [0.0, 0.0], [1.0, 2.0], 0.5), [0.5, 1.0], atol=1e-14)
    assert np.allclose(exponential(POLAR, [1.0, 0.0], [1.0, 0.0], 0.5), [1.5, 0.0], atol=1e-9)


def test_covariant_derivative_examples():
    p, v = np.array([1.2, 0.3]), np.array([0.4, 0.9])
    path = transported_frame(CURVED_RANDERS, p, v, 2.0)
    ts = np.linspace(0.0, 2.0, 801)
    vel = path.velocity(ts)
    assert np.abs(covariant_derivative_along(path, ts, vel)).max() < 1e-7
    E = path.frame(ts)
    for k in range(2):
        assert np.abs(covariant_derivative_along(path, ts, E[:, :, k])).max() < 1e-7
    X = ts[:, None] * vel
    assert np.abs(covariant_derivative_along(path, ts, X) - vel).max() < 1e-7


def test_covariant_derivative_on_sphere():
    path = transported_frame(sphere_system(), [1.0, 0.0, 0.0], [0.0, 0.6, 0.8], 3.0)
    ts = np.linspace(0.0, 3.0, 601)
    vel = path.velocity(ts)
    assert np.abs(covariant_derivative_along(path, ts, vel)).max() < 1e-7
    assert np.abs(covariant_derivative_along(path, ts, path.frame(ts)[:, :, 1])).max() < 1e-7


def test_covariant_derivative_needs_samples():
    path = integrate_geodesic(euclid_system(), [0.0, 0.0], [1.0, 0.0], 1.0)
    with pytest.raises(InsufficientSamples):
        covariant_derivative_along(path, np.linspace(0, 1, 4), np.zeros((4, 2)))
    with pytest.raises(InsufficientSamples):
        covariant_derivative_along(path, np.array([0, 0.1, 0.3, 0.6, 1.0]), np.zeros((5, 2)))


def test_sphere_stays_on_level_set():
    path = integrate_geodesic(sphere_system(), [0.0, 0.6, 0.8], [1.0, 0.0, 0.0], 20.0)
    X = path.position(np.linspace(0, 20, 401))
    assert np.abs(np.einsum("ij,ij->i", X, X) - 1).max() < 1e-8


state = st.tuples(st.floats(0.5, 2.0), st.floats(-np.pi, np.pi), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda s: np.hypot(s[2], s[3]) > 0.2)


@settings(max_examples=25, deadline=None)
@given(s=state, lam=st.sampled_from([0.3, 2.0, 7.0]))
def test_spray_two_homogeneous(s, lam):
    x, v = np.array(s[:2]), np.array(s[2:])
    for sys in (POLAR, CURVED_RANDERS):
        a = spray_acceleration(sys, x, v)
        assert np.allclose(spray_acceleration(sys, x, lam * v), lam ** 2 * a, rtol=1e-8, atol=1e-12 * lam ** 2)


@settings(max_examples=10, deadline=None)
@given(s=state)
def test_speed_conserved_and_dense_output_consistent(s):
    x, v = np.array(s[:2]), np.array(s[2:])
    T = 2.0
    path = integrate_geodesic(CURVED_RANDERS, x, v, T)
    sp = path.speed(np.linspace(0, T, 50))
    assert np.ptp(sp) / sp[0] <= 1e-8 * T
    ts = np.random.default_rng(1).uniform(0, T, 20)
    for t in ts:
        fresh = integrate_geodesic(CURVED_RANDERS, x, v, t).position(t)
        assert np.allclose(path.position(t), fresh, atol=1e-9)


@settings(max_examples=8, deadline=None)
@given(s=state)
def test_transported_frame_gram_constant(s):
    x, v = np.array(s[:2]), np.array(s[2:])
    path = integrate_flow(CURVED_RANDERS, x, v, 2.0, frame=True)
    grams = []
    for t in np.linspace(0, 2.0, 21):
        E = path.frame(t)
        g = CURVED_RANDERS.metric.fundamental_tensor(path.position(t), path.velocity(t))
        grams.append(E.T @ g @ E)
    grams = np.array(grams)
    assert np.abs(grams - grams[0]).max() <= 1e-7
