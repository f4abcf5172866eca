"""Distances from a submanifold, cut times along normal rays and separating cut points.

Distances are computed by shooting: a fan of seed rays on every side of the
submanifold supplies candidate feet, which Gauss-Newton refines on the
two-point problem ``exp(t * normal(z)) = q``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._jax import jax, jnp
from .errors import NoConvergentFoot
from .geodesic import integrate_flow
from .jacobi import shoot
from .parallel import ordered_map
from .submanifold import NormalSphereChart, UnitNormal

__all__ = [
    "Fan",
    "Foot",
    "DistanceResult",
    "CutRecord",
    "CutScan",
    "distance_to_point",
    "cut_time",
    "separating_witness",
    "closure_check",
    "rho_le_lambda_report",
    "t3_not_cut_check",
    "cut_scan",
]

log = logging.getLogger(__name__)

POSITION_TOL = 1e-8
FOOT_BAND = 1e-6
PREDICATE_SLACK = 1e-8  # integrated geodesics
PREDICATE_SLACK_FLAT = 1e-10  # straight rays
SEPARATION_DELTA = 1e-3


@dataclass
class Foot:
    normal: UnitNormal
    time: float
    side: int  # index of the chart in the fan
    residual: float

    def __iter__(self):
        yield self.normal
        yield self.time


@dataclass
class DistanceResult:
    distance: float
    feet: list  # Foot entries, all within FOOT_BAND of the minimum
    candidates: int = 0


def _opposite(chart: NormalSphereChart) -> NormalSphereChart:
    return NormalSphereChart(chart.sub, chart.system, side=-chart.side)


def _seed_grid(chart: NormalSphereChart, count: int) -> np.ndarray:
    """Regular grid on the chart with about ``count`` points."""
    k = max(2, int(round(count ** (1.0 / chart.dim))))
    axes = []
    for i in range(chart.dim):
        per = chart.periods[i]
        if i < chart.m:
            lo, hi = chart.sub.bounds[i]
        else:
            lo, hi = 0.0, (per if per else np.pi)
        if per:
            axes.append(lo + np.arange(k) * per / k)
        else:
            axes.append(np.linspace(lo, hi, k))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1), [len(a) for a in axes]


class Fan:
    """Seed rays on every normal side, reused by all distance queries of a chart.

    For codimension one the fan covers both sides of the submanifold.
    Flat metrics use the exact straight rays; otherwise each seed ray is
    integrated once up to ``T_max`` and sampled on a time grid.
    """

    def __init__(self, chart: NormalSphereChart, T_max: float, starts: int = 64, samples: int = 400):
        self.charts = [chart] + ([_opposite(chart)] if chart.codim == 1 else [])
        self.T_max = float(T_max)
        self.starts = int(starts)
        self.flat = chart.system.flat
        self.seeds = []
        self.shape = None
        self._data = []
        self._batched = []
        self.reach = []
        for ch in self.charts:
            Z, shape = _seed_grid(ch, self.starts)
            self.shape = shape
            self.seeds.append(Z)
            P = ch.base_points(Z)
            V = ch.normal_vectors(Z)
            if self.flat:
                self._data.append((P, V))
                self._batched.append(_batched_refiner(chart))
                X = np.stack([P, P + self.T_max * V], axis=1)
            else:
                ts = np.linspace(0.0, self.T_max, samples)
                X = np.stack([integrate_flow(ch.system, P[i], V[i], self.T_max).position(ts) for i in range(len(Z))])
                self._data.append((ts, X))
            self.reach.append(_neighbour_gap(X, shape, ch))

    @property
    def chart(self) -> NormalSphereChart:
        return self.charts[0]

    def closest_approach(self, side: int, q) -> tuple[np.ndarray, np.ndarray]:
        """Per seed: smallest distance of the ray to q and the time it occurs."""
        q = np.asarray(q, float)
        if self.flat:
            P, V = self._data[side]
            t = np.einsum("ij,ij->i", q - P, V) / np.einsum("ij,ij->i", V, V)
            t = np.clip(t, 0.0, self.T_max)
            f = np.linalg.norm(P + t[:, None] * V - q, axis=1)
            return f, t
        ts, X = self._data[side]
        d = np.linalg.norm(X - q, axis=2)
        j = np.argmin(d, axis=1)
        return d[np.arange(len(d)), j], ts[j]

    def candidates(self, side: int, q, keep: int = 6, best: int = 10) -> list[np.ndarray]:
        """Seeds within reach of q: local minima of the closest approach plus the best few overall."""
        f, t = self.closest_approach(side, q)
        Z = self.seeds[side]
        ch = self.charts[side]
        if ch.dim == 1:
            periodic = bool(ch.periods[0])
            left = np.roll(f, 1)
            right = np.roll(f, -1)
            if not periodic:
                left[0], right[-1] = np.inf, np.inf
            idx = np.nonzero((f <= left) & (f <= right))[0]
        else:
            idx = np.arange(len(f))
        idx = idx[f[idx] <= self.reach[side]]
        idx = idx[np.argsort(f[idx])][:keep]
        near = np.argsort(f)[:best]
        idx = np.union1d(idx, near[f[near] <= self.reach[side]])
        return [np.append(Z[i], t[i]) for i in idx]


def _neighbour_gap(X: np.ndarray, shape, chart: NormalSphereChart) -> float:
    """Largest distance between rays of neighbouring seeds, over all sampled times.

    A foot lies between neighbouring seeds, so one of them passes within
    this distance of the target.  For straight rays the distance is
    maximal at an endpoint, so two samples suffice.
    """
    G = X.reshape(*shape, *X.shape[1:])
    gap = 0.0
    for axis in range(len(shape)):
        if shape[axis] < 2:
            continue
        nxt = np.roll(G, -1, axis=axis) if chart.periods[axis] else np.take(G, range(1, shape[axis]), axis=axis)
        cur = G if chart.periods[axis] else np.take(G, range(shape[axis] - 1), axis=axis)
        gap = max(gap, float(np.max(np.linalg.norm(nxt - cur, axis=-1))))
    return gap


def _batched_refiner(chart: NormalSphereChart, iters: int = 60, max_step: float = 0.5):
    """Jitted Gauss-Newton over a batch of starts for straight normal rays.

    The normal side is an argument, so both sides of a hypersurface share
    one compiled kernel; the kernel is cached on the chart.
    """
    cached = getattr(chart, "_gn_refiner", None)
    if cached is not None:
        return cached

    def one(u0, q, side):
        def exp(u):
            z, t = u[:-1], u[-1]
            zu, _ = chart.split(z)
            return chart.sub.embedding(zu) + t * chart.normal_traced(z, side)

        jac = jax.jacfwd(exp)

        def step(u):
            r = exp(u) - q
            J = jac(u)
            H = J.T @ J
            H = H + (1e-14 * jnp.trace(H) + 1e-300) * jnp.eye(H.shape[0])
            du = -jnp.linalg.solve(H, J.T @ r)
            nrm = jnp.linalg.norm(du)
            return du * jnp.minimum(1.0, max_step / jnp.maximum(nrm, 1e-300)), jnp.linalg.norm(r)

        def cond(state):
            i, _, res, last = state
            return (i < iters) & (res > 1e-13) & (last > 1e-15)

        def body(state):
            i, u, _, _ = state
            du, res = step(u)
            return i + 1, u + du, res, jnp.linalg.norm(du)

        _, u, _, _ = jax.lax.while_loop(cond, body, (0, u0, jnp.inf, jnp.inf))
        return u, jnp.linalg.norm(exp(u) - q)

    fn = jax.jit(jax.vmap(one, in_axes=(0, None, None)))
    chart._gn_refiner = fn
    return fn


def _in_bounds(chart: NormalSphereChart, z) -> bool:
    for i in range(chart.m):
        if not chart.periods[i]:
            lo, hi = chart.sub.bounds[i]
            if not lo - 1e-12 <= z[i] <= hi + 1e-12:
                return False
    return True


def _clip(chart: NormalSphereChart, z: np.ndarray) -> np.ndarray:
    z = chart.wrap(z)
    for i in range(chart.m):
        if not chart.periods[i]:
            lo, hi = chart.sub.bounds[i]
            z[i] = np.clip(z[i], lo, hi)
    return z


def _refine(chart: NormalSphereChart, q, u0, max_iter: int = 100, tol: float = 1e-10):
    """Damped Gauss-Newton for exp(t * normal(z)) = q; returns (u, residual).

    The default tol sits 100x inside the foot position tolerance.  Pushing
    further chases integration noise, which at a focal image drags every
    start onto the same ray.
    """
    u = np.array(u0, float)
    x, Jac = shoot(chart, u[:-1], u[-1], jacobian=True)
    r = x - q
    res = float(np.linalg.norm(r))
    for _ in range(max_iter):
        if res < tol:
            break
        step = np.linalg.lstsq(Jac, -r, rcond=None)[0]
        alpha = 1.0
        improved = False
        while alpha > 1e-4:
            un = u + alpha * step
            un[:-1] = _clip(chart, un[:-1])
            rn = shoot(chart, un[:-1], un[-1]) - q
            resn = float(np.linalg.norm(rn))
            if resn < res:
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        stalled = res - resn < 1e-3 * res and np.linalg.norm(un - u) < 1e-15 * (1 + np.linalg.norm(u))
        u, r, res = un, rn, resn
        if stalled or res < tol:
            break
        _, Jac = shoot(chart, u[:-1], u[-1], jacobian=True)
    return u, res


def distance_to_point(fan: Fan, q, seeds=(), band: float = FOOT_BAND,
                      position_tol: float = POSITION_TOL) -> DistanceResult:
    """d(N, q) by multi-start shooting.

    ``seeds`` may add (side, u) pairs to the fan candidates, for example the
    ray whose endpoint q is.
    """
    q = np.asarray(q, float)
    starts = [(s, u) for s in range(len(fan.charts)) for u in fan.candidates(s, q)]
    starts.extend((int(s), np.asarray(u, float)) for s, u in seeds)
    found = []
    if fan.flat:
        for s in range(len(fan.charts)):
            U0 = [u for side, u in starts if side == s]
            if not U0:
                continue
            # power-of-two batches keep the number of compiled shapes small
            size = max(32, 1 << (len(U0) - 1).bit_length())
            U0 = np.array(U0 + [U0[0]] * (size - len(U0)))
            U, R = fan._batched[s](jnp.asarray(U0), jnp.asarray(q), fan.charts[s].side)
            for u, res in zip(np.array(U), np.asarray(R)):
                u[:-1] = fan.charts[s].wrap(u[:-1])
                if res <= position_tol and u[-1] >= -1e-12 and _in_bounds(fan.charts[s], u[:-1]):
                    found.append((s, u, float(res)))
    else:
        for s, u0 in starts:
            u, res = _refine(fan.charts[s], q, u0)
            if res <= position_tol and u[-1] >= -1e-12:
                found.append((s, u, res))
    if not found:
        raise NoConvergentFoot(f"no start converged to q = {q.tolist()} ({len(starts)} starts)")
    dmin = min(max(u[-1], 0.0) for _, u, _ in found)
    feet: list[Foot] = []
    kept: dict[int, list[np.ndarray]] = {}
    for s, u, res in sorted(found, key=lambda item: item[1][-1]):
        t = max(float(u[-1]), 0.0)
        if t - dmin > band:
            continue
        ch = fan.charts[s]
        z = u[:-1]
        if kept.get(s):
            dz = np.asarray(kept[s]) - z
            for i, per in enumerate(ch.periods):
                if per:
                    dz[:, i] = (dz[:, i] + per / 2) % per - per / 2
            if np.min(np.linalg.norm(dz, axis=1)) < 1e-7:
                continue
        kept.setdefault(s, []).append(z)
        feet.append(Foot(ch.normal(z), t, s, res))
    return DistanceResult(float(dmin), feet, len(starts))


def point_distance(fan: Fan, q) -> float:
    """Distance from the fan's submanifold to q (convenience wrapper)."""
    return distance_to_point(fan, q).distance


@dataclass
class CutRecord:
    direction: UnitNormal
    rho: float
    reason: str  # separating | focal | horizon
    separating: bool = False
    focal: bool = False
    horizon: bool = False
    lambda1: float = np.inf
    witness: Foot | None = None
    ray: int = -1
    image: np.ndarray | None = None
    bracket: tuple = (0.0, 0.0)


def _predicate(fan: Fan, z, t: float, slack: float) -> tuple[bool, DistanceResult]:
    q = shoot(fan.chart, z, t)
    res = distance_to_point(fan, q, seeds=[(0, np.append(z, t))])
    return res.distance >= t - slack, res


def _branch_estimate(fan: Fan, z, t: float, res: DistanceResult) -> float | None:
    """Root of D(s) = s, with D the distance through the shortest foot at exp(t * normal(z)).

    The slope of D along the ray is the Legendre transform of the foot's
    arrival velocity applied to the ray velocity.
    """
    foot = min(res.feet, key=lambda f: f.time)
    D = foot.time
    if D >= t:
        return None
    chart = fan.charts[foot.side]
    own = fan.chart.normal(z)
    if fan.flat:
        q, w, vel = own.point + t * own.vector, foot.normal.vector, own.vector
    else:
        path = integrate_flow(chart.system, foot.normal.point, foot.normal.vector, D)
        own_path = integrate_flow(fan.chart.system, own.point, own.vector, t)
        q, w, vel = own_path.position(t), path.velocity(D), own_path.velocity(t)
    slope = float(chart.metric.legendre(q, w) @ vel) - 1.0
    if not slope < -1e-12:
        return None
    return t - (D - t) / slope


def separating_witness(fan: Fan, z, rho: float, tol: float = 1e-3, delta: float = SEPARATION_DELTA,
                       result: DistanceResult | None = None) -> Foot | None:
    """A second foot of exp(rho * normal(z)) outside the delta-ball around z, or None."""
    z = np.asarray(z, float)
    if not np.isfinite(rho):
        return None
    if result is None:
        q = shoot(fan.chart, z, rho)
        result = distance_to_point(fan, q, seeds=[(0, np.append(z, rho))])
    for foot in result.feet:
        if abs(foot.time - rho) > tol:
            continue
        if foot.side != 0 or fan.chart.chart_distance(foot.normal.coords, z) > delta:
            return foot
    return None


def cut_time(fan: Fan, z, lambda1: float = np.inf, T_max: float | None = None, tol: float = 1e-3,
             slack: float | None = None, resolution: float = 1e-7) -> CutRecord:
    """rho(z) = sup{t : d(N, exp(t * normal(z))) >= t - slack} by safeguarded bisection.

    The bracket is [0, min(lambda1, T_max)]; the returned rho is the end of
    the final bracket on which the predicate holds.  Where the predicate
    fails, the distance follows the branch of a shorter foot, and a Newton
    step on that branch proposes the next point; bisection is the fallback.
    """
    chart = fan.chart
    z = np.asarray(z, float)
    if slack is None:
        slack = PREDICATE_SLACK_FLAT if fan.flat else PREDICATE_SLACK
    T_max = fan.T_max if T_max is None else min(T_max, fan.T_max)
    hi = min(lambda1, T_max)
    ok, res = _predicate(fan, z, hi, slack)
    if ok:
        rho, res_rho = hi, res
    else:
        eps = resolution * max(1.0, hi)
        lo, res_rho, fail = 0.0, None, (hi, res)
        after_success = False
        for _ in range(200):
            if hi - lo <= eps:
                break
            cand = None
            if after_success:
                cand = lo + 0.9 * eps
            elif fail is not None:
                est = _branch_estimate(fan, z, *fail)
                if est is not None and lo < est - 0.25 * eps < hi:
                    cand = est - 0.25 * eps
            if cand is None or not lo < cand < hi:
                cand = 0.5 * (lo + hi)
            ok, res = _predicate(fan, z, cand, slack)
            if ok:
                lo, res_rho = cand, res
                after_success = not after_success
            else:
                hi, fail = cand, (cand, res)
                after_success = False
        rho = lo
        if res_rho is None:
            res_rho = _predicate(fan, z, rho, slack)[1]
    horizon = bool(rho >= T_max and lambda1 > T_max)
    focal = bool(np.isfinite(lambda1) and abs(rho - lambda1) <= tol)
    witness = separating_witness(fan, z, rho, tol, result=res_rho) if rho > 0 else None
    separating = witness is not None
    if separating:
        reason = "separating"
    elif focal:
        reason = "focal"
    elif horizon:
        reason = "horizon"
    else:
        reason = "separating"
        log.warning("ray %s: predicate fails past rho=%.6g without a resolved second foot", z, rho)
    rho_out = np.inf if horizon and not separating else float(rho)
    return CutRecord(chart.normal(z), rho_out, reason, separating, focal, horizon, float(lambda1), witness,
                     image=shoot(chart, z, rho), bracket=(float(rho), float(hi)))


@dataclass
class CutScan:
    scenario: str
    coords: np.ndarray
    T_max: float
    records: list
    settings: dict = field(default_factory=dict)


def cut_scan(fan: Fan, coords, lambdas=None, T_max: float | None = None, tol: float = 1e-3,
             threads: int | None = None, scenario: str = "") -> CutScan:
    coords = np.atleast_2d(np.asarray(coords, float))
    T_max = fan.T_max if T_max is None else T_max
    lam = np.full(len(coords), np.inf) if lambdas is None else np.asarray(lambdas, float).reshape(len(coords), -1)[:, 0]

    def one(i):
        rec = cut_time(fan, coords[i], lam[i], T_max, tol)
        rec.ray = i
        return rec

    records = ordered_map(one, range(len(coords)), threads)
    return CutScan(scenario, coords, float(T_max), records,
                   {"tol": tol, "slack": PREDICATE_SLACK_FLAT if fan.flat else PREDICATE_SLACK, "starts": fan.starts, "delta": SEPARATION_DELTA})


# -- scan-level checks ------------------------------------------------------------------


def closure_check(records, chart: NormalSphereChart, eps: float) -> float:
    """Fraction of finite tangent cut points within eps of a separating one.

    Distance is Euclidean in (chart coordinates, rho) with periodic wrap.
    """
    pts = [r for r in records if np.isfinite(r.rho)]
    if not pts:
        return 1.0
    sep = [r for r in pts if r.separating]
    if not sep:
        return 0.0
    hits = 0
    for r in pts:
        if r.separating:
            hits += 1
            continue
        best = min(np.hypot(chart.chart_distance(r.direction.coords, s.direction.coords), r.rho - s.rho) for s in sep)
        hits += best <= eps
    return hits / len(pts)


def rho_le_lambda_report(records) -> dict:
    """Largest rho - lambda_1 over rays where both are finite."""
    diffs = [r.rho - r.lambda1 for r in records if np.isfinite(r.rho) and np.isfinite(r.lambda1)]
    if not diffs:
        return {"max_violation": 0.0, "vacuous": True, "rays": 0}
    i = int(np.argmax(diffs))
    return {"max_violation": float(diffs[i]), "vacuous": False, "rays": len(diffs), "worst_ray": i}


def t3_not_cut_check(focal_scan, cut: CutScan, tol: float = 1e-3) -> dict:
    """Check that no fold (T3) focal record is a tangent cut point."""
    rho = {r.ray: r.rho for r in cut.records}
    t3 = [rec for rec in focal_scan.records if rec.localform == "T3"]
    coincide = []
    margins = []
    for rec in t3:
        r = rho.get(rec.ray, np.nan)
        margin = rec.time - r
        margins.append(margin)
        if not margin > tol:
            coincide.append({"ray": rec.ray, "time": rec.time, "rho": r})
    return {
        "t3_records": len(t3),
        "coincident": coincide,
        "min_margin": float(min(margins)) if margins else np.inf,
        "pass": not coincide,
    }
