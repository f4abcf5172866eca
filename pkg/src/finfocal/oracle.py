"""Brute-force references: grid-graph distances and the discretized index form.

Neither route shares code with shooting.  The grid oracle never integrates a
geodesic; the index form only reuses the transported frame and the
variational flow to evaluate the curvature term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from ._jax import jax, jnp
from .errors import MeshTooCoarse, OutOfBox
from .jacobi import curvature_matrix
from .geodesic import integrate_flow
from .metric import MetricModel
from .submanifold import NormalSphereChart, Submanifold

__all__ = [
    "GridGraphOracle",
    "grid_distance",
    "minkowski_distance",
    "IndexFormMatrix",
    "assemble_index_form",
    "index_form_negative_count",
]

log = logging.getLogger(__name__)


def stencil(radius: int) -> np.ndarray:
    """Primitive integer offsets with max(|i|, |j|) <= radius; radius 2 gives 16 neighbours."""
    out = [(i, j) for i in range(-radius, radius + 1) for j in range(-radius, radius + 1)
           if (i, j) != (0, 0) and gcd(abs(i), abs(j)) == 1]
    return np.array(out, int)


def _points(sub: Submanifold, count: int) -> np.ndarray:
    if sub.param_dim == 0:
        return sub.point(np.zeros(0))[None, :]
    return np.asarray(jax.vmap(sub.embedding)(jnp.asarray(sub.sample(count))))


def _chunked_F(metric: MetricModel, xs: np.ndarray, vs: np.ndarray, chunk: int = 1 << 18) -> np.ndarray:
    """F on many points, padded to power-of-two batches so the jitted kernel compiles a few times only."""
    out = np.empty(len(xs))
    for s in range(0, len(xs), chunk):
        x, v = xs[s:s + chunk], vs[s:s + chunk]
        k = len(x)
        size = max(1024, 1 << (k - 1).bit_length())
        pad = size - k
        if pad:
            x = np.concatenate([x, np.repeat(x[:1], pad, axis=0)])
            v = np.concatenate([v, np.repeat(v[:1], pad, axis=0)])
        out[s:s + k] = metric.F_batch(x, v)[:k]
    return out


class GridGraphOracle:
    """Shortest paths on a directed lattice graph with Finsler edge lengths.

    Nodes form a regular grid on ``box = ((x0, x1), (y0, y1))``.  The edge
    u -> u + h*o has length F(midpoint, h*o) for every offset o of the
    stencil.  A super-source connects to all nodes within a band around N
    with the straight-segment length min_p F(mid, x - p) over dense samples
    p of N.  Queries finish with a hop from nearby nodes, or directly from N
    when q itself lies in the band.
    """

    def __init__(self, metric: MetricModel, sub: Submanifold, box, resolution: int = 201,
                 stencil_radius: int = 10, samples: int = 4000):
        if metric.coord_dim != 2 or metric.embedded:
            raise ValueError("the grid oracle works on 2D charts only")
        self.metric = metric
        self.sub = sub
        self.box = np.asarray(box, float).reshape(2, 2)
        self.resolution = int(resolution)
        self.radius = int(stencil_radius)
        self.xs = np.linspace(*self.box[0], self.resolution)
        self.ys = np.linspace(*self.box[1], self.resolution)
        self.h = np.array([self.xs[1] - self.xs[0], self.ys[1] - self.ys[0]])
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        self.nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
        self.band = (self.radius + 1) * float(self.h.max())
        self.N_samples = _points(sub, samples)
        self._build()

    def _index(self, i, j):
        return i * self.resolution + j

    def _build(self):
        R = self.resolution
        offs = stencil(self.radius)
        ii, jj = np.meshgrid(np.arange(R), np.arange(R), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
        rows, cols, wts = [], [], []
        for di, dj in offs:
            i2, j2 = ii + di, jj + dj
            ok = (i2 >= 0) & (i2 < R) & (j2 >= 0) & (j2 < R)
            a = self._index(ii[ok], jj[ok])
            b = self._index(i2[ok], j2[ok])
            step = self.nodes[b] - self.nodes[a]
            mid = 0.5 * (self.nodes[a] + self.nodes[b])
            rows.append(a)
            cols.append(b)
            wts.append(_chunked_F(self.metric, mid, step))
        if np.any(np.concatenate(wts) <= 0):
            raise ValueError("non-positive edge length in the grid graph")
        src_nodes, src_d = self._band_distances()
        S = R * R
        rows.append(np.full(len(src_nodes), S))
        cols.append(src_nodes)
        wts.append(src_d)
        w = np.concatenate(wts)
        # zero-length source edges are stored as a tiny positive weight so that csgraph keeps them
        w = np.maximum(w, 1e-300)
        self.graph = csr_matrix((w, (np.concatenate(rows), np.concatenate(cols))), shape=(S + 1, S + 1))
        self.dist = dijkstra(self.graph, directed=True, indices=S)[:S]

    def _straight_from_N(self, pts: np.ndarray) -> np.ndarray:
        """min over samples p of N of F((p + x)/2, x - p), for every x in pts."""
        out = np.full(len(pts), np.inf)
        P = self.N_samples
        for s in range(0, len(pts), 256):
            X = pts[s:s + 256]
            diff = (X[:, None, :] - P[None, :, :]).reshape(-1, 2)
            mid = (0.5 * (X[:, None, :] + P[None, :, :])).reshape(-1, 2)
            near = np.linalg.norm(diff, axis=1) <= 2 * self.band
            vals = np.full(len(diff), np.inf)
            if np.any(near):
                nz = np.linalg.norm(diff[near], axis=1) > 0
                sub = np.zeros(int(near.sum()))
                sub[nz] = _chunked_F(self.metric, mid[near][nz], diff[near][nz])
                vals[near] = sub
            vals = vals.reshape(len(X), len(P))
            out[s:s + 256] = self._refined_min(vals)
        return out

    def _refined_min(self, vals: np.ndarray) -> np.ndarray:
        """Row minima, refined by a parabola through the neighbouring samples on closed curves."""
        i = np.argmin(vals, axis=1)
        best = vals[np.arange(len(vals)), i]
        if not (self.sub.param_dim == 1 and self.sub.periods[0]):
            return best
        L = vals.shape[1]
        lo = vals[np.arange(len(vals)), (i - 1) % L]
        hi = vals[np.arange(len(vals)), (i + 1) % L]
        curv = hi - 2 * best + lo
        ok = np.isfinite(curv) & (curv > 0)
        corr = np.zeros_like(best)
        corr[ok] = (hi[ok] - lo[ok]) ** 2 / (8 * curv[ok])
        return best - corr

    def _straight_refined(self, q: np.ndarray) -> float:
        """Straight hop from N to q with the foot parameter refined continuously on curves."""
        from scipy.optimize import minimize_scalar

        coarse = float(self._straight_from_N(q[None, :])[0])
        if self.sub.param_dim != 1 or not np.isfinite(coarse):
            return coarse
        us = self.sub.sample(len(self.N_samples))[:, 0]
        d = np.linalg.norm(self.N_samples - q, axis=1)
        i = int(np.argmin(d))
        du = us[1] - us[0]

        def f(u):
            p = self.sub.point([u])
            return self.metric.F(0.5 * (p + q), q - p) if np.any(q != p) else 0.0

        vals = self.metric.F_batch(0.5 * (self.N_samples + q), q - self.N_samples)
        i = int(np.argmin(vals))
        res = minimize_scalar(f, bounds=(us[i] - du, us[i] + du), method="bounded", options={"xatol": 1e-12})
        return float(res.fun)

    def _band_distances(self):
        d = np.min(np.linalg.norm(self.nodes[:, None, :] - self.N_samples[None, ::8, :], axis=2), axis=1) \
            if len(self.N_samples) > 1 else np.linalg.norm(self.nodes - self.N_samples[0], axis=1)
        idx = np.nonzero(d <= self.band)[0]
        return idx, self._straight_from_N(self.nodes[idx])

    def distance(self, q) -> float:
        q = np.asarray(q, float)
        lo, hi = self.box[:, 0], self.box[:, 1]
        if np.any(q < lo - 1e-12) or np.any(q > hi + 1e-12):
            raise OutOfBox(f"q = {q.tolist()} is outside the oracle box")
        near = np.nonzero(np.linalg.norm(self.nodes - q, axis=1) <= self.band)[0]
        # the direct hop from N is a source edge, so it is only offered inside the source band
        to_N = float(np.min(np.linalg.norm(self.N_samples - q, axis=1)))
        best = self._straight_refined(q) if to_N <= self.band else np.inf
        if near.size:
            steps = q - self.nodes[near]
            mids = 0.5 * (q + self.nodes[near])
            hop = np.zeros(len(near))
            nz = np.linalg.norm(steps, axis=1) > 0
            if np.any(nz):
                hop[nz] = _chunked_F(self.metric, mids[nz], steps[nz])
            best = min(best, float(np.min(self.dist[near] + hop)))
        return best


def grid_distance(oracle: GridGraphOracle, q) -> float:
    return oracle.distance(q)


def minkowski_distance(metric: MetricModel, sub: Submanifold, q, samples: int = 20000) -> float:
    """min over p in N of F(q - p) for a position-independent norm, refined around the best sample."""
    from scipy.optimize import minimize_scalar

    q = np.asarray(q, float)
    if sub.param_dim == 0:
        p = sub.point(np.zeros(0))
        return float(metric.F(p, q - p))
    if sub.param_dim != 1:
        raise ValueError("minkowski_distance handles curves and points")
    us = sub.sample(samples)[:, 0]
    P = _points(sub, samples)
    vals = metric.F_batch(P, q - P)
    i = int(np.argmin(vals))
    du = us[1] - us[0]

    def f(u):
        p = sub.point([u])
        return metric.F(p, q - p)

    res = minimize_scalar(f, bounds=(us[i] - du, us[i] + du), method="bounded", options={"xatol": 1e-13})
    return float(min(res.fun, vals[i]))


# -- index form ---------------------------------------------------------------------------


@dataclass(eq=False)
class IndexFormMatrix:
    """Index form on piecewise-linear fields in the transported frame.

    Fields vanish at T.  Coefficients are ordered as: nodal values at
    interior nodes 1..M-1 (n frame components each), then the values at
    t = 0, constrained to T_pN (m coefficients in the tangent basis).
    """

    T: float
    nodes: np.ndarray
    n: int
    m: int
    matrix: np.ndarray
    mass: np.ndarray
    boundary_basis: np.ndarray  # (n, m) frame coordinates of d(iota) e_a at t = 0
    asymmetry: float
    curvature_scale: float

    def eigenvalues(self) -> np.ndarray:
        from scipy.linalg import eigh

        return eigh(self.matrix, self.mass, eigvals_only=True)

    def coefficients(self, xi_fn, boundary=None) -> np.ndarray:
        """Interpolate a field given by frame coordinates xi_fn(t) -> (n,) onto the basis."""
        inner = np.concatenate([np.asarray(xi_fn(t), float) for t in self.nodes[1:-1]])
        if self.m == 0:
            return inner
        if boundary is None:
            boundary = np.linalg.lstsq(self.boundary_basis, np.asarray(xi_fn(0.0), float), rcond=None)[0]
        return np.concatenate([inner, boundary])

    def value(self, coef) -> float:
        coef = np.asarray(coef, float)
        return float(coef @ self.matrix @ coef)


def _gauss(a: float, b: float):
    c, r = 0.5 * (a + b), 0.5 * (b - a) / np.sqrt(3.0)
    return np.array([c - r, c + r]), np.array([0.5 * (b - a)] * 2)


def assemble_index_form(chart: NormalSphereChart, z, T: float, mesh: int = 200) -> IndexFormMatrix:
    """Assemble I(X, Y) = int <X', Y'> + <R X, Y> dt + g(A X(0), Y(0)).

    R is the matrix of J -> J'' (J' = 0) in the transported frame, obtained
    from the variational flow, and A the shape operator of the normal.
    """
    system = chart.system
    un = chart.normal(z)
    path = integrate_flow(system, un.point, un.vector, T, frame=True)
    n, m = chart.n, chart.m
    M = int(mesh)
    nodes = np.linspace(0.0, T, M + 1)
    # per-node basis blocks: node 0 carries the boundary fields, nodes 1..M-1 all frame directions
    E0 = path.frame(0.0)
    if m:
        B = system.frame_coordinates(E0, chart.sub.tangent(un.param)).reshape(n, m)
    else:
        B = np.zeros((n, 0))
    size = (M - 1) * n + m

    def block(k):
        if k == 0:
            return np.arange((M - 1) * n, size), B
        if k == M:
            return np.arange(0), np.zeros((n, 0))
        return np.arange((k - 1) * n, k * n), np.eye(n)

    Kmat = np.zeros((size, size))
    Mass = np.zeros((size, size))
    asym = 0.0
    rmax = 0.0
    for e in range(M):
        a, b = nodes[e], nodes[e + 1]
        h = b - a
        tq, wq = _gauss(a, b)
        Rq = []
        for t in tq:
            Rt = curvature_matrix(system, path.position(t), path.velocity(t), path.frame(t))
            asym = max(asym, float(np.abs(Rt - Rt.T).max()))
            rmax = max(rmax, float(np.abs(Rt).max()))
            Rq.append(0.5 * (Rt + Rt.T))
        ia, Ba = block(e)
        ib, Bb = block(e + 1)
        idx = np.concatenate([ia, ib])
        # local basis: value(t) = phi_a(t) Ba c_a + phi_b(t) Bb c_b
        Bl = np.concatenate([Ba, Bb], axis=1)  # (n, la+lb)
        la = Ba.shape[1]
        dphi = np.concatenate([np.full(la, -1.0 / h), np.full(Bb.shape[1], 1.0 / h)])
        G = Bl.T @ Bl
        loc = G * np.outer(dphi, dphi) * h
        mloc = np.zeros_like(loc)
        for t, w, Rt in zip(tq, wq, Rq):
            phi = np.concatenate([np.full(la, (b - t) / h), np.full(Bb.shape[1], (t - a) / h)])
            loc += w * np.outer(phi, phi) * (Bl.T @ Rt @ Bl)
            mloc += w * np.outer(phi, phi) * G
        Kmat[np.ix_(idx, idx)] += loc
        Mass[np.ix_(idx, idx)] += mloc
    if m:
        A = chart.shape_matrix(un.coords)
        ib = np.arange((M - 1) * n, size)
        # g(A e_a, e_b) in the orthonormal frame
        Kmat[np.ix_(ib, ib)] += (B @ A).T @ B
    asym = max(asym, float(np.abs(Kmat - Kmat.T).max()))
    Kmat = 0.5 * (Kmat + Kmat.T)
    return IndexFormMatrix(float(T), nodes, n, m, Kmat, Mass, B, asym, rmax)


def index_form_negative_count(chart: NormalSphereChart, z, T: float, mesh: int = 200,
                              band: float | None = None) -> int:
    """Number of negative eigenvalues of the index form relative to the L2 mass matrix.

    Raises MeshTooCoarse when an eigenvalue lies inside the discretization band.
    """
    form = assemble_index_form(chart, z, T, mesh)
    mu = form.eigenvalues()
    h = T / mesh
    if band is None:
        band = h * h * (1.0 + form.curvature_scale) * 10.0
    close = mu[np.abs(mu) < band]
    if close.size:
        raise MeshTooCoarse(f"eigenvalue {close[0]:.3e} within the resolution band {band:.1e} at T = {T}")
    return int(np.sum(mu < 0))
