"""N-Jacobi fields along normal geodesics and the differential of exp on the normal bundle.

A Jacobi field is carried by the linearised geodesic flow: ``J = dx`` and its
covariant derivative is ``J' = dv + N J``.  The frame basis used for focal
detection differentiates ``(z, t) -> exp(t * normal(z))`` in normal-sphere
chart coordinates z, plus the radial field ``t * gamma'(t)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotInKernel, PathMismatch
from .geodesic import GeodesicPath, GeodesicSystem, integrate_flow
from .submanifold import NormalSphereChart, UnitNormal

__all__ = [
    "NJacobiField",
    "JacobiFrame",
    "ExpDifferential",
    "n_jacobi_basis",
    "integrate_njacobi",
    "jacobi_frame",
    "adjoint_defect",
    "exp_differential",
    "jacobi_second_derivative",
    "curvature_matrix",
    "second_order_check",
    "shoot",
]

RANK_TOL = 1e-7


def _as_times(t):
    return np.atleast_1d(np.asarray(t, float))


def _cov_derivative(system: GeodesicSystem, xs, vs, dx, dv):
    """J' = dv + N dx for stacked (K, P, d) variations."""
    N = system.connection_batch(xs, vs)
    return dv + np.einsum("kij,kpj->kpi", N, dx)


def jacobi_second_derivative(system: GeodesicSystem, x, v, J, Jdot) -> np.ndarray:
    """Covariant second derivative J'' of the Jacobi field with data (J, J') at (x, v).

    Obtained from the variational flow; the curvature tensor is never formed.
    Accepts J, Jdot of shape (d,) or (d, k).
    """
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    J = np.asarray(J, float)
    Jdot = np.asarray(Jdot, float)
    N = system.connection(x, v)
    Ax, Av = system.acceleration_jacobians(x, v)
    Nd = system.connection_dot_batch(x[None], v[None])[0]
    dx = J
    dv = Jdot - N @ J
    ddv = Ax @ dx + Av @ dv
    d_Jdot = ddv + Nd @ dx + N @ dv
    out = d_Jdot + N @ Jdot
    if system.metric.embedded:
        out = system.tangent_projector(x) @ out
    return out


def curvature_matrix(system: GeodesicSystem, x, v, E) -> np.ndarray:
    """Matrix of J -> J'' (with J' = 0) in the orthonormal frame E."""
    n = E.shape[1]
    W = jacobi_second_derivative(system, x, v, E, np.zeros_like(E))
    return system.frame_coordinates(E, W).reshape(n, n)


@dataclass(eq=False)
class NJacobiField:
    """One Jacobi field along a geodesic, with dense output."""

    path: GeodesicPath
    J0: np.ndarray
    Jdot0: np.ndarray
    index: int = 0

    def J(self, t) -> np.ndarray:
        dx, _ = self.path.variations(t)
        return dx[..., self.index, :]

    def Jdot(self, t) -> np.ndarray:
        ts = _as_times(t)
        dx, dv = self.path.variations(ts)
        out = _cov_derivative(self.path.system, self.path.position(ts), self.path.velocity(ts), dx, dv)
        out = out[:, self.index, :]
        return out[0] if np.ndim(t) == 0 else out


@dataclass(eq=False)
class ExpDifferential:
    t: float
    matrix: np.ndarray
    sigma: np.ndarray
    kernel: np.ndarray  # (n, k) chart coefficients spanning the kernel
    rank: int


@dataclass(eq=False)
class JacobiFrame:
    """Chart-basis Jacobi fields along the normal geodesic of one unit normal.

    Columns 0..n-2 differentiate the chart coordinates of the unit normal
    bundle, column n-1 is the radial field t * gamma'(t).
    """

    chart: NormalSphereChart
    normal: UnitNormal
    path: GeodesicPath
    T: float

    @property
    def system(self) -> GeodesicSystem:
        return self.chart.system

    @property
    def n(self) -> int:
        return self.chart.n

    def fields(self, t):
        """(J, J') as arrays (K, d, n) in coordinates."""
        ts = _as_times(t)
        dx, dv = self.path.variations(ts)
        xs, vs = self.path.position(ts), self.path.velocity(ts)
        Jd = _cov_derivative(self.system, xs, vs, dx, dv)
        return np.swapaxes(dx, 1, 2), np.swapaxes(Jd, 1, 2)

    def D(self, t) -> np.ndarray:
        """Frame coordinates of the fields: (K, n, n), or (n, n) for scalar t."""
        ts = _as_times(t)
        J, _ = self.fields(ts)
        out = self.system.frame_coordinates(self.path.frame(ts), J)
        return out[0] if np.ndim(t) == 0 else out

    def Ddot(self, t) -> np.ndarray:
        ts = _as_times(t)
        _, Jd = self.fields(ts)
        out = self.system.frame_coordinates(self.path.frame(ts), Jd)
        return out[0] if np.ndim(t) == 0 else out

    def column_scale(self, t) -> np.ndarray:
        """Per-column factors making the scaled matrix regular at t = 0."""
        ts = _as_times(t)
        s = np.ones((ts.size, self.n))
        s[:, self.chart.m:] = 1.0 / ts[:, None]
        return s

    def D_scaled(self, t) -> np.ndarray:
        ts = _as_times(t)
        out = self.D(ts) * self.column_scale(ts)[:, None, :]
        return out[0] if np.ndim(t) == 0 else out


def jacobi_frame(chart: NormalSphereChart, z, T: float) -> JacobiFrame:
    un = chart.normal(z)
    pairs = chart.jacobi_initial_data(un.coords)
    path = integrate_flow(chart.system, un.point, un.vector, T, frame=True, pairs=pairs)
    return JacobiFrame(chart, un, path, float(T))


def n_jacobi_basis(chart: NormalSphereChart, z) -> list[tuple[np.ndarray, np.ndarray]]:
    """Initial data (J(0), J'(0)) spanning the N-Jacobi fields along the normal at z.

    m tangential pairs (e_a, A e_a), then fiber pairs (0, w_b) with w_b tangent
    to the fiber sphere, then the radial pair (0, v).
    """
    un = chart.normal(z)
    m = chart.m
    pairs = []
    if m:
        T = chart.sub.tangent(un.param)
        A = chart.shape_matrix(un.coords)
        for a in range(m):
            pairs.append((T[:, a], T @ A[:, a]))
    dn = chart.normal_derivative(un.coords)
    for b in range(m, chart.dim):
        pairs.append((np.zeros_like(un.vector), dn[:, b]))
    pairs.append((np.zeros_like(un.vector), un.vector.copy()))
    return pairs


def integrate_njacobi(system: GeodesicSystem, path: GeodesicPath, pair) -> NJacobiField:
    """Integrate the Jacobi field with initial data (J(0), J'(0)) along the geodesic of ``path``."""
    J0, Jd0 = (np.asarray(a, float) for a in pair)
    dv0 = Jd0 - system.connection(path.p, path.v) @ J0
    p2 = integrate_flow(system, path.p, path.v, path.T, pairs=[(J0, dv0)], rtol=path.rtol, atol=path.atol)
    return NJacobiField(p2, J0, Jd0)


def adjoint_defect(J: NJacobiField, K: NJacobiField, t) -> np.ndarray:
    """g(J, K') - g(J', K) with g taken at the geodesic velocity."""
    if not (np.allclose(J.path.p, K.path.p, atol=1e-14) and np.allclose(J.path.v, K.path.v, atol=1e-14)):
        raise PathMismatch("Jacobi fields live on different geodesics")
    ts = _as_times(t)
    metric = J.path.system.metric
    xs, vs = J.path.position(ts), J.path.velocity(ts)
    a, ad = np.atleast_2d(J.J(ts)), np.atleast_2d(J.Jdot(ts))
    b, bd = np.atleast_2d(K.J(ts)), np.atleast_2d(K.Jdot(ts))
    out = np.empty(ts.size)
    for i in range(ts.size):
        g = np.eye(len(xs[i])) if metric.embedded else metric.fundamental_tensor(xs[i], vs[i])
        out[i] = a[i] @ g @ bd[i] - ad[i] @ g @ b[i]
    return out[0] if np.ndim(t) == 0 else out


def frame_adjoint_defects(frame: JacobiFrame, times) -> np.ndarray:
    """Antisymmetric defect matrices D^T D' - D'^T D for all frame pairs, (K, n, n)."""
    D = frame.D(times)
    Dd = frame.Ddot(times)
    return np.swapaxes(D, 1, 2) @ Dd - np.swapaxes(Dd, 1, 2) @ D


def exp_differential(frame: JacobiFrame, t: float, rank_tol: float = RANK_TOL) -> ExpDifferential:
    D = frame.D(t)
    Ds = frame.D_scaled(t)
    sig_s = np.linalg.svd(Ds, compute_uv=False)
    rank = int(np.sum(sig_s >= rank_tol * sig_s[0]))
    U, sig, Vt = np.linalg.svd(D)
    k = frame.n - rank
    kernel = Vt[frame.n - k:].T if k else np.zeros((frame.n, 0))
    return ExpDifferential(float(t), D, sig, kernel, rank)


def shoot(chart: NormalSphereChart, z, t: float, jacobian: bool = False):
    """exp(t * normal(z)), optionally with its Jacobian in (z, t).

    The Jacobian columns are d/dz_i followed by d/dt (the geodesic velocity).
    """
    z = np.asarray(z, float).reshape(chart.dim)
    if chart.system.flat:
        x = np.asarray(chart._flat_exp(z, float(t)))
        if not jacobian:
            return x
        return x, np.asarray(chart._flat_exp_jac(np.append(z, t)))
    if not jacobian:
        un = chart.normal(z)
        return integrate_flow(chart.system, un.point, un.vector, t).position(t)
    fr = jacobi_frame(chart, z, t)
    J, _ = fr.fields(t)
    J = J[0]
    Jac = J.copy()
    Jac[:, -1] = fr.path.velocity(t)
    return fr.path.position(t), Jac


def second_order_check(frame: JacobiFrame, t_star: float, x, h: float = 1e-3, tol: float = 1e-6):
    """Compare a mixed second difference of exp with J'_x at a focal time.

    ``x`` holds chart coefficients of a kernel vector of the differential at
    ``t_star``.  Returns (fd_value, jdot_value, defect), where the defect is
    the part of the difference transverse to the image of the differential.
    """
    chart = frame.chart
    x = np.asarray(x, float)
    J, Jd = frame.fields(t_star)
    J, Jd = J[0], Jd[0]
    if np.linalg.norm(J @ x) > tol * max(1.0, np.linalg.norm(J) * np.linalg.norm(x)):
        raise NotInKernel(f"|J x| = {np.linalg.norm(J @ x):.2e} at t = {t_star}")
    z0 = frame.normal.coords
    cz, cr = x[:-1], x[-1]

    def f(r, tau):
        return shoot(chart, z0 + tau * cz, r * t_star * (1.0 + tau * cr))

    def mixed(hh):
        return (f(1 + hh, hh) - f(1 + hh, -hh) - f(1 - hh, hh) + f(1 - hh, -hh)) / (4 * hh * hh)

    fd = (4.0 * mixed(h / 2) - mixed(h)) / 3.0
    jdot = t_star * (Jd @ x)
    diff = fd - jdot
    if chart.metric.embedded:
        diff = chart.system.tangent_projector(frame.path.position(t_star)) @ diff
    Q, s, _ = np.linalg.svd(J, full_matrices=False)
    img = Q[:, s > RANK_TOL * s[0]]
    defect = float(np.linalg.norm(diff - img @ (img.T @ diff)))
    return fd, jdot, defect
