"""Closed submanifolds, unit normal bundles and the shape operator.

Unit normals are produced from covectors that annihilate the tangent space
of N: the covector is pushed through the inverse Legendre map and normalised.
Smooth annihilator frames are built from generalised cross products
(codimension one) or by projecting a fixed reference frame (higher
codimension).  Every normal field is jax-traceable, so its derivatives along N
and along the fiber sphere are exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import null_space

from ._jax import jax, jnp
from .errors import DegenerateTangent
from .geodesic import GeodesicSystem

__all__ = [
    "Submanifold",
    "UnitNormal",
    "NormalSphereChart",
    "circle",
    "ellipse",
    "line",
    "equator",
    "point",
    "curve",
    "unit_normal",
    "second_fundamental_form",
    "shape_operator",
]

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


@dataclass(eq=False)
class Submanifold:
    """Embedding u -> iota(u) of a closed parameter domain into coordinates."""

    name: str
    embedding: Callable  # jnp: (m,) -> (d,)
    param_dim: int
    coord_dim: int
    periods: tuple = ()
    bounds: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self._iota = jax.jit(self.embedding)
        self._diota = jax.jit(jax.jacfwd(self.embedding))
        self._ddiota = jax.jit(jax.jacfwd(jax.jacfwd(self.embedding)))

    def point(self, u) -> np.ndarray:
        return np.asarray(self._iota(np.asarray(u, float).reshape(self.param_dim)))

    def tangent(self, u) -> np.ndarray:
        """d(iota) at u as a (d, m) matrix."""
        u = np.asarray(u, float).reshape(self.param_dim)
        T = np.asarray(self._diota(u)).reshape(self.coord_dim, self.param_dim)
        if self.param_dim and np.linalg.matrix_rank(T, tol=1e-10 * max(1.0, np.abs(T).max())) < self.param_dim:
            raise DegenerateTangent(f"d(iota) is rank deficient at u={np.asarray(u)}")
        return T

    def second(self, u) -> np.ndarray:
        u = np.asarray(u, float).reshape(self.param_dim)
        return np.asarray(self._ddiota(u)).reshape(self.coord_dim, self.param_dim, self.param_dim)

    def sample(self, count: int) -> np.ndarray:
        """Roughly uniform parameter samples (count per parameter direction)."""
        if self.param_dim == 0:
            return np.zeros((1, 0))
        axes = []
        for per, (lo, hi) in zip(self.periods, self.bounds):
            if per:
                axes.append(lo + per * np.arange(count) / count)
            else:
                axes.append(np.linspace(lo, hi, count))
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.reshape(-1) for g in grid], axis=1)


# -- primitives ----------------------------------------------------------------


def circle(radius: float = 1.0, center=(0.0, 0.0)) -> Submanifold:
    c = jnp.asarray(np.asarray(center, float))

    def emb(u):
        return c + radius * jnp.array([jnp.cos(u[0]), jnp.sin(u[0])])

    return Submanifold("circle", emb, 1, 2, (TWO_PI,), ((0.0, TWO_PI),), {"radius": radius, "center": list(center)})


def ellipse(a: float, b: float, center=(0.0, 0.0)) -> Submanifold:
    c = jnp.asarray(np.asarray(center, float))

    def emb(u):
        return c + jnp.array([a * jnp.cos(u[0]), b * jnp.sin(u[0])])

    return Submanifold("ellipse", emb, 1, 2, (TWO_PI,), ((0.0, TWO_PI),), {"a": a, "b": b})


def line(point=(0.0, 0.0), direction=(1.0, 0.0), half_length: float = 5.0) -> Submanifold:
    p = jnp.asarray(np.asarray(point, float))
    d = jnp.asarray(np.asarray(direction, float))

    def emb(u):
        return p + u[0] * d

    return Submanifold("line", emb, 1, len(point), (None,), ((-half_length, half_length),),
                       {"point": list(point), "direction": list(direction)})


def equator(radius: float = 1.0) -> Submanifold:
    """The circle z = 0 on the sphere of the given radius in R^3."""

    def emb(u):
        return radius * jnp.array([jnp.cos(u[0]), jnp.sin(u[0]), 0.0])

    return Submanifold("equator", emb, 1, 3, (TWO_PI,), ((0.0, TWO_PI),), {"radius": radius})


def point(coords) -> Submanifold:
    c = jnp.asarray(np.asarray(coords, float))

    def emb(u):
        return c + 0.0 * jnp.sum(u)

    return Submanifold("point", emb, 0, len(coords), (), (), {"coords": list(coords)})


def curve(embedding: Callable, coord_dim: int, period: float | None = TWO_PI,
          bounds=(0.0, TWO_PI)) -> Submanifold:
    """A closed (periodic) or compact curve given by a jnp-traceable function."""
    return Submanifold("curve", lambda u: embedding(u[0]), 1, coord_dim, (period,), (tuple(bounds),))


# -- normals -----------------------------------------------------------------------


@dataclass(frozen=True)
class UnitNormal:
    """A unit normal vector at iota(param), with its normal-sphere chart coordinates."""

    coords: np.ndarray
    param: np.ndarray
    point: np.ndarray
    vector: np.ndarray


def _fiber_weights(phi, c: int, side: float):
    if c == 1:
        return jnp.array([side])
    w = []
    s = 1.0
    for k in range(c - 1):
        w.append(s * jnp.cos(phi[k]))
        s = s * jnp.sin(phi[k])
    w.append(s)
    return jnp.stack(w)


def _gram_schmidt(R):
    cols = []
    for k in range(R.shape[1]):
        w = R[:, k]
        for q in cols:
            w = w - jnp.dot(q, w) * q
        cols.append(w / jnp.linalg.norm(w))
    return jnp.stack(cols, axis=1)


class NormalSphereChart:
    """Coordinates (base parameters, fiber angles) on the unit normal bundle.

    For codimension one the fiber is the single normal on the chosen side
    (``side = +1`` or ``-1``).  For higher codimension the fiber sphere is
    parametrised by hyperspherical angles of an annihilator frame.
    """

    def __init__(self, sub: Submanifold, system: GeodesicSystem, side: float = 1.0):
        self.sub = sub
        self.system = system
        self.metric = system.metric
        if sub.coord_dim != self.metric.coord_dim:
            raise ValueError("submanifold and metric use different coordinate dimensions")
        self.n = self.metric.dim
        self.m = sub.param_dim
        self.codim = self.n - self.m
        if self.codim < 1:
            raise ValueError("submanifold must have positive codimension")
        self.side = float(np.sign(side)) if self.codim == 1 else 1.0
        self.dim = self.n - 1  # chart dimension of the unit normal bundle
        self._reference = self._reference_frame()
        self.periods = tuple(sub.periods) + tuple(
            [None] * max(self.codim - 2, 0) + ([TWO_PI] if self.codim >= 2 else [])
        )
        self._build()

    # -- annihilator frame ------------------------------------------------
    def _reference_frame(self):
        if self.codim == 1:
            return None
        u0 = np.array([b[0] for b in self.sub.bounds], float) if self.m else np.zeros(0)
        x0 = self.sub.point(u0)
        rows = [self.sub.tangent(u0).T] if self.m else []
        if self.metric.embedded:
            g = np.asarray(jax.grad(self.metric.level)(jnp.asarray(x0)))
            rows.append(g[None, :])
        A = np.vstack(rows) if rows else np.zeros((0, self.sub.coord_dim))
        R = null_space(A) if A.size else np.eye(self.sub.coord_dim)
        idx = np.argmax(np.abs(R), axis=0)
        R = R * np.sign(R[idx, np.arange(R.shape[1])])
        return jnp.asarray(R)

    def annihilator(self, u):
        """(d, c) matrix whose columns annihilate d(iota) at u (traceable)."""
        d = self.sub.coord_dim
        T = jax.jacfwd(self.sub.embedding)(u).reshape(d, self.m)
        emb = self.metric.embedded
        if self.codim == 1:
            cols = [T]
            if emb:
                cols.append(jax.grad(self.metric.level)(self.sub.embedding(u))[:, None])
            B = jnp.concatenate(cols, axis=1) if cols else jnp.zeros((d, 0))
            eye = jnp.eye(d)
            eta = jnp.stack([jnp.linalg.det(jnp.concatenate([eye[:, i:i + 1], B], axis=1)) for i in range(d)])
            return (eta / jnp.linalg.norm(eta))[:, None]
        R = self._reference
        if self.m == 0:
            return R
        cols = [T]
        if emb:
            cols.append(jax.grad(self.metric.level)(self.sub.embedding(u))[:, None])
        B = jnp.concatenate(cols, axis=1)
        P = jnp.eye(d) - B @ jnp.linalg.solve(B.T @ B, B.T)
        return _gram_schmidt(P @ R)

    def split(self, z):
        z = jnp.asarray(z)
        return z[: self.m], z[self.m:]

    def covector(self, z, side=None):
        u, phi = self.split(z)
        return self.annihilator(u) @ _fiber_weights(phi, self.codim, self.side if side is None else side)

    def normal_traced(self, z, side=None):
        """Unit normal at chart point z; ``side`` may override the chart side (traceable)."""
        u, _ = self.split(z)
        x = self.sub.embedding(u)
        w = self.metric.legendre_inverse_traced(x, self.covector(z, side))
        return w / self.metric.norm(x, w)

    def _build(self):
        self._normal = jax.jit(self.normal_traced)
        self._normal_batch = jax.jit(jax.vmap(self.normal_traced))
        self._dnormal = jax.jit(jax.jacfwd(self.normal_traced))

        def flat_exp(z, t):
            u, _ = self.split(z)
            return self.sub.embedding(u) + t * self.normal_traced(z)

        self._flat_exp = jax.jit(flat_exp)
        self._flat_exp_jac = jax.jit(jax.jacfwd(lambda zt: flat_exp(zt[:-1], zt[-1])))

        def base_batch(z):
            u, _ = self.split(z)
            return self.sub.embedding(u)

        self._base_batch = jax.jit(jax.vmap(base_batch))

    # -- public evaluation -----------------------------------------------
    def coords_of(self, param, phi=()) -> np.ndarray:
        return np.concatenate([np.atleast_1d(np.asarray(param, float)).reshape(self.m), np.asarray(phi, float)])

    def normal(self, z) -> UnitNormal:
        z = np.asarray(z, float).reshape(self.dim)
        u = z[: self.m]
        x = self.sub.point(u)
        v = np.asarray(self._normal(z))
        return UnitNormal(z.copy(), u.copy(), x, v)

    def normal_vectors(self, Z) -> np.ndarray:
        return np.asarray(self._normal_batch(np.asarray(Z, float).reshape(-1, self.dim)))

    def base_points(self, Z) -> np.ndarray:
        return np.asarray(self._base_batch(np.asarray(Z, float).reshape(-1, self.dim)))

    def normal_derivative(self, z) -> np.ndarray:
        """d(normal)/dz as a (d, n-1) matrix."""
        return np.asarray(self._dnormal(np.asarray(z, float).reshape(self.dim))).reshape(-1, self.dim)

    def jacobi_initial_data(self, z) -> list[tuple[np.ndarray, np.ndarray]]:
        """Variational initial data (dx, dv) for every chart coordinate and the radial direction.

        These realise the differential of (z, t) -> exp(t * normal(z)): the
        base-parameter pairs start on T_pN, the fiber pairs start at zero
        with velocity tangent to the fiber sphere, and the last pair is the
        radial field t * gamma'(t).
        """
        z = np.asarray(z, float).reshape(self.dim)
        T = self.sub.tangent(z[: self.m]) if self.m else np.zeros((self.sub.coord_dim, 0))
        dn = self.normal_derivative(z)
        v = np.asarray(self._normal(z))
        pairs = []
        for a in range(self.m):
            pairs.append((T[:, a], dn[:, a]))
        for b in range(self.m, self.dim):
            pairs.append((np.zeros_like(v), dn[:, b]))
        pairs.append((np.zeros_like(v), v))
        return pairs

    def chart_distance(self, z1, z2) -> float:
        """Euclidean distance in chart coordinates with periodic wrap."""
        dz = np.asarray(z1, float) - np.asarray(z2, float)
        for i, per in enumerate(self.periods):
            if per:
                dz[i] = (dz[i] + per / 2) % per - per / 2
        return float(np.linalg.norm(dz))

    def wrap(self, z) -> np.ndarray:
        z = np.array(z, float)
        for i, per in enumerate(self.periods):
            if per:
                lo = self.sub.bounds[i][0] if i < self.m else 0.0
                z[..., i] = lo + (z[..., i] - lo) % per
        return z

    # -- extrinsic geometry -------------------------------------------------
    def _tangent_metric(self, x, v):
        if self.metric.embedded:
            return np.eye(self.sub.coord_dim)
        return self.metric.fundamental_tensor(x, v)

    def shape_matrix(self, z, scale: float = 1.0) -> np.ndarray:
        """Matrix of the shape operator A_n in the basis d(iota)(e_a), n = scale * normal(z)."""
        if self.m == 0:
            return np.zeros((0, 0))
        z = np.asarray(z, float).reshape(self.dim)
        un = self.normal(z)
        x, v = un.point, un.vector
        T = self.sub.tangent(un.param)
        dn = self.normal_derivative(z)[:, : self.m]
        W = dn + self.system.connection(x, v) @ T  # covariant derivative of the extension
        g = self._tangent_metric(x, v)
        return scale * np.linalg.solve(T.T @ g @ T, T.T @ g @ W)

    def perp_projection(self, z, w) -> np.ndarray:
        """g_n-orthogonal projection of w onto the complement of T_pN inside T_pM."""
        z = np.asarray(z, float).reshape(self.dim)
        un = self.normal(z)
        x, v = un.point, un.vector
        w = self.metric.tangent_projector(x) @ np.asarray(w, float)
        if self.m == 0:
            return w
        T = self.sub.tangent(un.param)
        g = self._tangent_metric(x, v)
        return w - T @ np.linalg.solve(T.T @ g @ T, T.T @ g @ w)

    def second_fundamental(self, z, x_coef, y_coef, scale: float = 1.0) -> np.ndarray:
        """Pi^n(x, y) for parameter-space vectors x, y; n = scale * normal(z)."""
        z = np.asarray(z, float).reshape(self.dim)
        un = self.normal(z)
        xv, yv = np.asarray(x_coef, float), np.asarray(y_coef, float)
        H = self.sub.second(un.param)
        T = self.sub.tangent(un.param)
        dXY = np.einsum("iab,a,b->i", H, xv, yv)
        if self.metric.embedded:
            cov = dXY
        else:
            Gam = self.system.chern_christoffel(un.point, un.vector)
            cov = dXY + np.einsum("ijk,j,k->i", Gam, T @ xv, T @ yv)
        return -self.perp_projection(z, cov)


# -- functional interface -----------------------------------------------------------


def unit_normal(sub: Submanifold, system: GeodesicSystem, param, fiber_direction) -> UnitNormal:
    """Unit normal obtained from a covector; the covector is projected onto the annihilator if needed."""
    metric = system.metric
    u = np.atleast_1d(np.asarray(param, float)).reshape(sub.param_dim)
    x = sub.point(u)
    xi = np.asarray(fiber_direction, float)
    T = sub.tangent(u) if sub.param_dim else np.zeros((sub.coord_dim, 0))
    if metric.embedded:
        nu = system.unit_level_normal(x)
        xi = xi - nu * (nu @ xi)
    if T.shape[1]:
        leak = T.T @ xi
        if np.linalg.norm(leak) > 1e-12 * max(1.0, np.linalg.norm(xi)):
            log.warning("fiber direction does not annihilate T_pN; projecting")
            xi = xi - T @ np.linalg.solve(T.T @ T, leak)
    w = metric.legendre_inverse(x, xi)
    v = w / metric.F(x, w)
    return UnitNormal(np.zeros(0), u, x, v)


def second_fundamental_form(chart: NormalSphereChart, z, x, y, scale: float = 1.0) -> np.ndarray:
    return chart.second_fundamental(z, x, y, scale)


def shape_operator(chart: NormalSphereChart, z, scale: float = 1.0) -> np.ndarray:
    return chart.shape_matrix(z, scale)
