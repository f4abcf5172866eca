"""Geodesic spray, dense-output integration and the variational flow.

Two backends share one state layout.  In a chart the acceleration is the
spray ``a = -2G`` built from ``L = F**2``; on a level set ``{phi = c}`` in
R^(n+1) it is the ambient great-circle-type equation
``a = -(v^T H v / |grad phi|^2) grad phi``.  In both cases the linear map
``N = -1/2 da/dv`` plays the role of the nonlinear connection along a
geodesic: parallel fields solve ``e' = -N e`` and the covariant derivative
of a tangent field is ``X' + N X``.

The integrated state is ``[x, v, frame columns..., (dx_i, dv_i)...]`` where
each ``(dx_i, dv_i)`` solves the linearisation of the geodesic equation.
Position-independent chart metrics use exact straight-line formulas.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import null_space

from ._jax import jax, jnp
from .errors import ConstraintDrift, InsufficientSamples, StepUnderflow, ZeroVector
from .metric import ZERO_TOL, MetricModel

__all__ = [
    "GeodesicSystem",
    "GeodesicPath",
    "spray_acceleration",
    "integrate_geodesic",
    "integrate_flow",
    "exponential",
    "covariant_derivative_along",
    "transported_frame",
]

DRIFT_TOL = 1e-8


class GeodesicSystem:
    """Geodesic equation of a metric together with its linearisation."""

    def __init__(self, metric: MetricModel, rtol: float = 1e-10, atol: float = 1e-10):
        if not metric.traceable:
            raise TypeError("geodesic integration needs a jax-traceable metric")
        self.metric = metric
        self.rtol = rtol
        self.atol = atol
        self.backend = "embedded_hypersurface" if metric.embedded else "chart_finsler"
        self.dim = metric.dim
        self.coord_dim = metric.coord_dim
        self.flat = bool(metric.flat) and not metric.embedded
        self._cache: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self._build()

    # -- kernels -----------------------------------------------------------
    def _build(self) -> None:
        m = self.metric
        if m.embedded:
            level = m.level
            grad_phi = jax.grad(level)
            hess_phi = jax.hessian(level)

            def accel(x, v):
                gp = grad_phi(x)
                return -(v @ hess_phi(x) @ v) / (gp @ gp) * gp

        else:
            L = m.energy
            L_x = jax.grad(L, argnums=0)
            L_v = jax.grad(L, argnums=1)
            L_vx = jax.jacfwd(L_v, argnums=0)
            L_vv = jax.jacfwd(L_v, argnums=1)

            def accel(x, v):
                rhs = L_vx(x, v) @ v - L_x(x, v)
                G = 0.5 * jnp.linalg.solve(L_vv(x, v), rhs)  # 1/4 g^{-1} rhs with g = L_vv/2
                return -2.0 * G

        jac = jax.jacfwd(accel, argnums=(0, 1))

        def connection(x, v):
            return -0.5 * jax.jacfwd(accel, argnums=1)(x, v)

        def connection_dot(x, v):
            a = accel(x, v)
            return jax.jvp(connection, (x, v), (v, a))[1]

        d = self.coord_dim

        def rhs(y, nf, npairs):
            x, v = y[:d], y[d:2 * d]
            a = accel(x, v)
            out = [v, a]
            off = 2 * d
            if nf or npairs:
                Ax, Av = jac(x, v)
            if nf:
                E = y[off:off + d * nf].reshape(nf, d)
                out.append((0.5 * E @ Av.T).reshape(-1))  # e' = -N e with N = -Av/2
                off += d * nf
            if npairs:
                W = y[off:off + 2 * d * npairs].reshape(npairs, 2, d)
                dx, dv = W[:, 0, :], W[:, 1, :]
                out.append(jnp.stack([dv, dx @ Ax.T + dv @ Av.T], axis=1).reshape(-1))
            return jnp.concatenate(out)

        self._accel = jax.jit(accel)
        self._accel_batch = jax.jit(jax.vmap(accel))
        self._jac = jax.jit(jac)
        self._N = jax.jit(connection)
        self._N_batch = jax.jit(jax.vmap(connection))
        self._Ndot_batch = jax.jit(jax.vmap(connection_dot))
        self._rhs = jax.jit(rhs, static_argnums=(1, 2))
        if not m.embedded:
            gfun = lambda x, y: 0.5 * L_vv(x, y)
            dgx = jax.jacfwd(gfun, argnums=0)
            dgy = jax.jacfwd(gfun, argnums=1)

            def christoffel(x, y):
                # Chern symbols from delta_j = d/dx^j - N^s_j d/dy^s applied to g_y
                N = connection(x, y)
                dg = dgx(x, y) - jnp.einsum("abs,sj->abj", dgy(x, y), N)
                ginv = jnp.linalg.inv(gfun(x, y))
                t = dg.transpose(0, 2, 1) + dg.transpose(2, 0, 1) - dg.transpose(1, 2, 0)
                # t[l, j, k] = dg[l,k,j] + dg[j,l,k] - dg[j,k,l]
                return 0.5 * jnp.einsum("il,ljk->ijk", ginv, t)

            self._christoffel = jax.jit(christoffel)
        if m.embedded:
            self._phi_batch = jax.jit(jax.vmap(m.level))
            self._grad_phi = jax.jit(grad_phi)
            self._hess_phi = jax.jit(hess_phi)

    # -- pointwise queries ---------------------------------------------------
    def acceleration(self, x, v) -> np.ndarray:
        v = np.asarray(v, float)
        if np.linalg.norm(v) < ZERO_TOL:
            raise ZeroVector("spray evaluated on the zero section")
        if self.flat:
            return np.zeros_like(v)
        return np.asarray(self._accel(np.asarray(x, float), v))

    def acceleration_jacobians(self, x, v) -> tuple[np.ndarray, np.ndarray]:
        if self.flat:
            z = np.zeros((self.coord_dim, self.coord_dim))
            return z, z.copy()
        Ax, Av = self._jac(np.asarray(x, float), np.asarray(v, float))
        return np.asarray(Ax), np.asarray(Av)

    def connection(self, x, v) -> np.ndarray:
        if self.flat:
            return np.zeros((self.coord_dim, self.coord_dim))
        return np.asarray(self._N(np.asarray(x, float), np.asarray(v, float)))

    def connection_batch(self, xs, vs) -> np.ndarray:
        xs = np.asarray(xs, float)
        if self.flat:
            return np.zeros((len(xs), self.coord_dim, self.coord_dim))
        return np.asarray(self._N_batch(xs, np.asarray(vs, float)))

    def connection_dot_batch(self, xs, vs) -> np.ndarray:
        xs = np.asarray(xs, float)
        if self.flat:
            return np.zeros((len(xs), self.coord_dim, self.coord_dim))
        return np.asarray(self._Ndot_batch(xs, np.asarray(vs, float)))

    def chern_christoffel(self, x, y) -> np.ndarray:
        """Chern connection symbols Gamma^i_jk with reference vector y (chart backend)."""
        if self.metric.embedded:
            raise TypeError("Christoffel symbols are only defined for the chart backend")
        return np.asarray(self._christoffel(np.asarray(x, float), np.asarray(y, float)))

    def tangent_projector(self, x) -> np.ndarray:
        return self.metric.tangent_projector(x)

    def unit_level_normal(self, x) -> np.ndarray:
        g = np.asarray(self._grad_phi(np.asarray(x, float)))
        return g / np.linalg.norm(g)

    def initial_frame(self, x, v) -> np.ndarray:
        """Columns form a g_v-orthonormal basis of the tangent space at x."""
        x = np.asarray(x, float)
        v = np.asarray(v, float)
        if self.metric.embedded:
            # first column along v, the rest spans the tangent complement of v
            nu = self.unit_level_normal(x)
            vh = self.tangent_projector(x) @ v
            vh /= np.linalg.norm(vh)
            rest = null_space(np.vstack([nu, vh]))
            idx = np.argmax(np.abs(rest), axis=0)
            rest *= np.sign(rest[idx, np.arange(rest.shape[1])])
            return np.column_stack([vh, rest])
        g = self.metric.fundamental_tensor(x, v)
        Lc = np.linalg.cholesky(g)
        return np.linalg.inv(Lc).T

    def frame_coordinates(self, E: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Coordinates of vectors W (..., d, k) in frames E (..., d, n)."""
        if self.metric.embedded:
            return np.swapaxes(E, -1, -2) @ W
        return np.linalg.solve(E, W)

    def check_constraint(self, xs: np.ndarray) -> float:
        if not self.metric.embedded:
            return 0.0
        drift = float(np.max(np.abs(np.asarray(self._phi_batch(np.atleast_2d(xs))) - self.metric.level_value)))
        if drift > DRIFT_TOL:
            raise ConstraintDrift(f"trajectory left the level set by {drift:.2e}")
        return drift

    # -- integration -------------------------------------------------------
    def _integrate(self, y0: np.ndarray, T: float, nf: int, npairs: int, rtol=None, atol=None):
        rtol = self.rtol if rtol is None else rtol
        atol = self.atol if atol is None else atol
        fun = lambda t, y: np.asarray(self._rhs(jnp.asarray(y), nf, npairs))
        sol = solve_ivp(fun, (0.0, T), y0, method="DOP853", rtol=rtol, atol=atol, dense_output=True)
        if sol.status != 0:
            raise StepUnderflow(f"geodesic integration failed: {sol.message}")
        return sol.sol


class _LinearSolution:
    """Exact flow of a position-independent spray: straight lines, constant frame."""

    def __init__(self, y0: np.ndarray, d: int, nf: int, npairs: int):
        self.y0 = y0
        rate = np.zeros_like(y0)
        rate[:d] = y0[d:2 * d]
        off = 2 * d + d * nf
        for i in range(npairs):
            s = off + 2 * d * i
            rate[s:s + d] = y0[s + d:s + 2 * d]
        self.rate = rate

    def __call__(self, t):
        t = np.asarray(t, float)
        if t.ndim == 0:
            return self.y0 + t * self.rate
        return self.y0[:, None] + self.rate[:, None] * t[None, :]


@dataclass(eq=False)
class GeodesicPath:
    """Dense-output geodesic, optionally carrying a parallel frame and variations."""

    system: GeodesicSystem
    p: np.ndarray
    v: np.ndarray
    T: float
    sol: object
    n_frame: int = 0
    n_pairs: int = 0
    rtol: float = 1e-10
    atol: float = 1e-10
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.system.coord_dim

    def state(self, t) -> np.ndarray:
        return self.sol(t)

    def position(self, t) -> np.ndarray:
        y = self.sol(t)
        return y[: self.d] if np.ndim(t) == 0 else y[: self.d].T

    def velocity(self, t) -> np.ndarray:
        y = self.sol(t)
        return y[self.d:2 * self.d] if np.ndim(t) == 0 else y[self.d:2 * self.d].T

    def frame(self, t) -> np.ndarray:
        """Transported frame at t as (d, n), or (K, d, n) for an array of times."""
        if not self.n_frame:
            raise ValueError("path was integrated without a frame")
        d, nf = self.d, self.n_frame
        y = self.sol(t)
        blk = y[2 * d:2 * d + d * nf]
        if np.ndim(t) == 0:
            return blk.reshape(nf, d).T
        return np.transpose(blk.T.reshape(-1, nf, d), (0, 2, 1))

    def variations(self, t) -> tuple[np.ndarray, np.ndarray]:
        """(dx, dv) of every variation as arrays (P, d) or (K, P, d)."""
        d, nf, P = self.d, self.n_frame, self.n_pairs
        y = self.sol(t)
        off = 2 * d + d * nf
        blk = y[off:off + 2 * d * P]
        if np.ndim(t) == 0:
            W = blk.reshape(P, 2, d)
            return W[:, 0, :], W[:, 1, :]
        W = blk.T.reshape(-1, P, 2, d)
        return W[:, :, 0, :], W[:, :, 1, :]

    def speed(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        return self.system.metric.F_batch(self.position(t), self.velocity(t))


def spray_acceleration(sys: GeodesicSystem, p, v) -> np.ndarray:
    return sys.acceleration(p, v)


def integrate_flow(sys: GeodesicSystem, p, v, T: float, frame: bool = False, pairs=(),
                   rtol: float | None = None, atol: float | None = None) -> GeodesicPath:
    """Integrate the geodesic with optional parallel frame and variational pairs.

    ``pairs`` holds initial data ``(dx0, dv0)`` of the linearised flow.
    """
    p = np.asarray(p, float)
    v = np.asarray(v, float)
    if np.linalg.norm(v) < ZERO_TOL:
        raise ZeroVector("cannot integrate from the zero section")
    if not T > 0:
        raise ValueError("integration horizon must be positive")
    d = sys.coord_dim
    parts = [p, v]
    nf = 0
    if frame:
        E0 = sys.initial_frame(p, v)
        nf = E0.shape[1]
        parts.append(E0.T.reshape(-1))
    pairs = [(np.asarray(a, float), np.asarray(b, float)) for a, b in pairs]
    for dx, dv in pairs:
        parts.extend([dx, dv])
    y0 = np.concatenate(parts)
    rtol = sys.rtol if rtol is None else rtol
    atol = sys.atol if atol is None else atol
    if sys.flat:
        sol = _LinearSolution(y0, d, nf, len(pairs))
    else:
        sol = sys._integrate(y0, T, nf, len(pairs), rtol, atol)
    path = GeodesicPath(sys, p, v, float(T), sol, nf, len(pairs), rtol, atol)
    if sys.metric.embedded:
        sys.check_constraint(path.position(np.linspace(0.0, T, 65)))
    return path


def integrate_geodesic(sys: GeodesicSystem, p, v, T: float, tol: float | None = None) -> GeodesicPath:
    return integrate_flow(sys, p, v, T, rtol=tol, atol=tol)


def transported_frame(sys: GeodesicSystem, p, v, T: float) -> GeodesicPath:
    return integrate_flow(sys, p, v, T, frame=True)


def exponential(sys: GeodesicSystem, p, v, t: float) -> np.ndarray:
    """gamma_v(t), reusing cached dense solutions keyed by the initial vector."""
    p = np.asarray(p, float)
    v = np.asarray(v, float)
    if t == 0:
        return p.copy()
    key = (tuple(np.round(p, 14)), tuple(np.round(v, 14)))
    with sys._lock:
        path = sys._cache.get(key)
    if path is None or path.T < t:
        horizon = t if path is None else max(t, 2 * path.T)
        path = integrate_geodesic(sys, p, v, horizon)
        with sys._lock:
            sys._cache[key] = path
            while len(sys._cache) > 2048:
                sys._cache.popitem(last=False)
    return path.position(t)


def _stencil_derivative(X: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order finite-difference derivative along axis 0 (uniform step)."""
    D = np.empty_like(X)
    D[2:-2] = (X[:-4] - 8 * X[1:-3] + 8 * X[3:-1] - X[4:]) / (12 * h)
    D[0] = (-25 * X[0] + 48 * X[1] - 36 * X[2] + 16 * X[3] - 3 * X[4]) / (12 * h)
    D[1] = (-3 * X[0] - 10 * X[1] + 18 * X[2] - 6 * X[3] + X[4]) / (12 * h)
    D[-1] = (25 * X[-1] - 48 * X[-2] + 36 * X[-3] - 16 * X[-4] + 3 * X[-5]) / (12 * h)
    D[-2] = (3 * X[-1] + 10 * X[-2] - 18 * X[-3] + 6 * X[-4] - X[-5]) / (12 * h)
    return D


def covariant_derivative_along(path: GeodesicPath, times, X) -> np.ndarray:
    """D_{gamma'} X for a field sampled at uniformly spaced times.

    The ordinary derivative uses fourth-order differences, then the connection
    term N(gamma, gamma') X is added.  On a level set the result is projected
    to the tangent space.
    """
    times = np.asarray(times, float)
    X = np.asarray(X, float)
    if times.size < 5:
        raise InsufficientSamples("need at least 5 samples for the difference stencil")
    steps = np.diff(times)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
        raise InsufficientSamples("samples must be uniformly spaced")
    dX = _stencil_derivative(X, steps[0])
    xs = path.position(times)
    vs = path.velocity(times)
    N = path.system.connection_batch(xs, vs)
    out = dX + np.einsum("kij,kj->ki", N, X)
    if path.system.metric.embedded:
        P = np.stack([path.system.tangent_projector(x) for x in xs])
        out = np.einsum("kij,kj->ki", P, out)
    return out
