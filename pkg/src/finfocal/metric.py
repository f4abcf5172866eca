"""Finsler metrics and the fiber tensors derived from them.

A metric is stored as a jax-traceable function ``F(x, v)``.  The fundamental
tensor, the Cartan tensor and the Legendre map are obtained by forward-mode
differentiation of ``F**2`` in the fiber.  Metrics whose norm function cannot be
traced by jax fall back to central differences for the fiber tensors; such
metrics can be inspected but not integrated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._jax import jax, jnp
from .errors import NewtonDivergence, NotPositiveDefinite, ZeroVector

__all__ = [
    "MetricModel",
    "riemannian",
    "randers",
    "minkowski",
    "embedded_hypersurface",
    "reverse",
    "fundamental_tensor",
    "cartan_tensor",
    "legendre",
    "legendre_inverse",
]

log = logging.getLogger(__name__)

ZERO_TOL = 1e-12
_EPS = np.finfo(float).eps


def _check_nonzero(v: np.ndarray, scale: float = 1.0) -> None:
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    if np.linalg.norm(v) < ZERO_TOL * scale:
        raise ZeroVector(f"vector {v} is below the zero-section tolerance")


@dataclass(eq=False)
class MetricModel:
    """A Finsler metric on a chart of R^n or on a level set in R^(n+1).

    ``dim`` is the manifold dimension n and ``coord_dim`` the number of
    coordinates used for points and vectors (n for charts, n+1 for level sets).
    """

    kind: str
    dim: int
    norm: Callable  # (x, v) -> scalar, jnp-traceable when ``traceable``
    coord_dim: int
    flat: bool = False
    level: Callable | None = None  # embedded kind: x -> scalar
    level_value: float = 0.0
    traceable: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("manifold dimension must be at least 2")
        self.embedded = self.kind == "embedded_hypersurface"
        x0 = np.full(self.coord_dim, 0.1)
        v0 = np.linspace(0.3, 0.9, self.coord_dim)
        if self.traceable:
            try:
                jax.make_jaxpr(self.norm)(jnp.asarray(x0), jnp.asarray(v0))
            except Exception as exc:  # norm uses numpy-only code
                log.warning("metric %s is not jax-traceable (%s); using finite differences", self.kind, exc)
                self.traceable = False
        self._build()

    # -- compiled kernels -------------------------------------------------
    def _build(self) -> None:
        if not self.traceable:
            return
        F = self.norm

        def energy(x, v):
            return F(x, v) ** 2

        self.energy = energy
        grad_v = jax.grad(energy, argnums=1)
        hess_v = jax.jacfwd(grad_v, argnums=1)
        third_v = jax.jacfwd(hess_v, argnums=1)
        self._F = jax.jit(F)
        self._F_batch = jax.jit(jax.vmap(F))
        self._legendre = jax.jit(lambda x, v: 0.5 * grad_v(x, v))
        self._g = jax.jit(lambda x, v: 0.5 * hess_v(x, v))
        self._cartan = jax.jit(lambda x, v: 0.25 * third_v(x, v))

    # -- basic evaluation -------------------------------------------------
    def F(self, x, v) -> float:
        x = np.asarray(x, float)
        v = np.asarray(v, float)
        if self.traceable:
            return float(self._F(x, v))
        return float(self.norm(x, v))

    def F_batch(self, xs, vs) -> np.ndarray:
        xs = np.asarray(xs, float)
        vs = np.asarray(vs, float)
        if self.traceable:
            return np.asarray(self._F_batch(xs, vs))
        return np.array([self.norm(x, v) for x, v in zip(xs, vs)])

    def tangent_projector(self, x) -> np.ndarray:
        """Orthogonal projector onto the tangent space (identity for charts)."""
        if not self.embedded:
            return np.eye(self.coord_dim)
        grad = np.asarray(jax.grad(self.level)(jnp.asarray(x, float)))
        nu = grad / np.linalg.norm(grad)
        return np.eye(self.coord_dim) - np.outer(nu, nu)

    # -- fiber tensors ----------------------------------------------------
    def fundamental_tensor(self, x, v, check: bool = True) -> np.ndarray:
        x = np.asarray(x, float)
        v = np.asarray(v, float)
        _check_nonzero(v)
        if self.traceable:
            g = np.asarray(self._g(x, v))
        else:
            g = self._fd_hessian(x, v)
        g = 0.5 * (g + g.T)
        if check:
            gt = g
            if self.embedded:
                P = self.tangent_projector(x)
                nu = np.linalg.svd(P)[0][:, -1]
                gt = P @ g @ P + np.outer(nu, nu)
            try:
                np.linalg.cholesky(gt)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefinite(f"g_v is not positive definite at x={x}, v={v}") from exc
        return g

    def cartan_array(self, x, v) -> np.ndarray:
        x = np.asarray(x, float)
        v = np.asarray(v, float)
        _check_nonzero(v)
        if self.traceable:
            return np.asarray(self._cartan(x, v))
        return self._fd_third(x, v)

    def legendre(self, x, v) -> np.ndarray:
        x = np.asarray(x, float)
        v = np.asarray(v, float)
        _check_nonzero(v)
        if self.embedded:
            return self.tangent_projector(x) @ v
        if self.traceable:
            return np.asarray(self._legendre(x, v))
        return self._fd_gradient(x, v)

    def legendre_inverse(self, x, xi, tol: float = 1e-10, max_iter: int = 60) -> np.ndarray:
        """Solve g_u(u, .) = xi for u by damped Newton iteration."""
        x = np.asarray(x, float)
        xi = np.asarray(xi, float)
        _check_nonzero(xi)
        if self.embedded:
            return self.tangent_projector(x) @ xi
        scale = np.linalg.norm(xi)
        u = np.linalg.solve(self.fundamental_tensor(x, xi, check=False), xi)
        res = self.legendre(x, u) - xi
        rn = np.linalg.norm(res)
        for _ in range(max_iter):
            if rn <= 1e-15 * scale:
                break
            step = np.linalg.solve(self.fundamental_tensor(x, u), res)
            alpha, tn = 1.0, np.inf
            while alpha >= 1e-6:
                trial = u - alpha * step
                if np.linalg.norm(trial) > ZERO_TOL * scale:
                    tres = self.legendre(x, trial) - xi
                    tn = np.linalg.norm(tres)
                    if tn < rn:
                        break
                alpha *= 0.5
            if not tn < rn:
                break  # stagnated at roundoff level
            u, res, rn = trial, tres, tn
        if not rn <= tol * scale:
            raise NewtonDivergence(f"Legendre inversion residual {rn:.3e} exceeds {tol:.1e}*|xi|")
        return u

    def legendre_inverse_traced(self, x, xi, iters: int = 10):
        """Fixed-iteration Newton solve usable inside jax transformations."""
        if self.embedded:
            grad = jax.grad(self.level)(x)
            nu = grad / jnp.linalg.norm(grad)
            return xi - nu * jnp.dot(nu, xi)
        g_of = lambda u: 0.5 * jax.hessian(self.energy, argnums=1)(x, u)
        lg = lambda u: 0.5 * jax.grad(self.energy, argnums=1)(x, u)
        u0 = jnp.linalg.solve(g_of(xi), xi)
        if self.kind == "riemannian":
            return u0  # g does not depend on the direction, so the first solve is exact

        def body(_, u):
            return u - jnp.linalg.solve(g_of(u), lg(u) - xi)

        return jax.lax.fori_loop(0, iters, body, u0)

    # -- finite-difference fallback --------------------------------------
    def _L(self, x, v) -> float:
        return float(self.norm(x, v)) ** 2

    def _fd_gradient(self, x, v) -> np.ndarray:
        n = v.size
        h = _EPS ** (1 / 3) * max(1.0, np.linalg.norm(v))
        out = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            out[i] = (self._L(x, v + e) - self._L(x, v - e)) / (2 * h)
        return 0.5 * out

    def _fd_hessian(self, x, v) -> np.ndarray:
        # second differences are step-limited by roundoff, hence eps^(1/4)
        n = v.size
        h = _EPS ** 0.25 * max(1.0, np.linalg.norm(v))
        E = np.eye(n) * h
        H = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                val = (
                    self._L(x, v + E[i] + E[j])
                    - self._L(x, v + E[i] - E[j])
                    - self._L(x, v - E[i] + E[j])
                    + self._L(x, v - E[i] - E[j])
                ) / (4 * h * h)
                H[i, j] = H[j, i] = val
        return 0.5 * H

    def _fd_third(self, x, v) -> np.ndarray:
        n = v.size
        h = _EPS ** 0.2 * max(1.0, np.linalg.norm(v))
        C = np.empty((n, n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            C[:, :, k] = (self._fd_hessian(x, v + e) - self._fd_hessian(x, v - e)) / (2 * h)
        return 0.5 * C  # d g / d v_k = 2 C_..k


# -- constructors ---------------------------------------------------------


def _as_field(value, n: int) -> tuple[Callable, bool]:
    """Return (callable x -> array, is_constant)."""
    if callable(value):
        return value, False
    arr = jnp.asarray(np.asarray(value, float))
    return (lambda x: arr), True


def riemannian(matrix, dim: int | None = None, flat: bool | None = None) -> MetricModel:
    """F(x, v) = sqrt(v^T a(x) v) for a constant matrix or a callable field."""
    if dim is None:
        dim = np.asarray(matrix).shape[0]
    a_of, const = _as_field(matrix, dim)

    def norm(x, v):
        return jnp.sqrt(v @ a_of(x) @ v)

    return MetricModel("riemannian", dim, norm, dim, flat=const if flat is None else flat)


def randers(a, b, dim: int | None = None, flat: bool | None = None, probe_box: float = 2.0,
            seed: int = 0) -> MetricModel:
    """F(x, v) = sqrt(v^T a(x) v) + b(x).v with |b|_a < 1 checked on probes."""
    if dim is None:
        dim = np.asarray(b).shape[0]
    a_of, ca = _as_field(a, dim)
    b_of, cb = _as_field(b, dim)
    rng = np.random.default_rng(seed)
    probes = rng.uniform(-probe_box, probe_box, size=(64, dim))
    for x in probes:
        A = np.asarray(a_of(jnp.asarray(x)))
        B = np.asarray(b_of(jnp.asarray(x)))
        if B @ np.linalg.solve(A, B) >= 1.0:
            raise ValueError(f"Randers drift has a-norm >= 1 at x={x}")

    def norm(x, v):
        return jnp.sqrt(v @ a_of(x) @ v) + b_of(x) @ v

    return MetricModel("randers", dim, norm, dim, flat=(ca and cb) if flat is None else flat)


def minkowski(norm_fn: Callable, dim: int) -> MetricModel:
    """Position-independent metric F(x, v) = norm_fn(v)."""

    def norm(x, v):
        return norm_fn(v)

    traceable = True
    return MetricModel("minkowski", dim, norm, dim, flat=True, traceable=traceable)


def embedded_hypersurface(level: Callable, ambient_dim: int, value: float = 0.0) -> MetricModel:
    """Induced Euclidean metric on the level set {level = value} in R^ambient_dim."""

    def norm(x, v):
        return jnp.sqrt(v @ v)

    return MetricModel(
        "embedded_hypersurface",
        ambient_dim - 1,
        norm,
        ambient_dim,
        flat=False,
        level=level,
        level_value=float(value),
    )


def reverse(metric: MetricModel) -> MetricModel:
    """The reverse metric F(x, -v)."""
    base = metric.norm

    def norm(x, v):
        return base(x, -v)

    return MetricModel(
        metric.kind,
        metric.dim,
        norm,
        metric.coord_dim,
        flat=metric.flat,
        level=metric.level,
        level_value=metric.level_value,
        traceable=metric.traceable,
        params={"reversed": True, **metric.params},
    )


# -- functional interface -------------------------------------------------


def fundamental_tensor(m: MetricModel, p, v) -> np.ndarray:
    return m.fundamental_tensor(p, v)


def cartan_tensor(m: MetricModel, p, v, x, y, z) -> float:
    C = m.cartan_array(p, v)
    return float(np.einsum("ijk,i,j,k->", C, x, y, z))


def legendre(m: MetricModel, p, v) -> np.ndarray:
    return m.legendre(p, v)


def legendre_inverse(m: MetricModel, p, xi) -> np.ndarray:
    return m.legendre_inverse(p, xi)
