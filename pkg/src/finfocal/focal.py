"""Tangent focal points along normal rays: detection, index, regularity and type.

Focal times are the zeros of ``det D(t)`` where the columns of ``D`` are the
chart-basis Jacobi fields in a parallel orthonormal frame.  Fiber and radial
columns are divided by t so the scanned matrix stays regular near t = 0.
Sign changes are refined with Brent's method; zeros of even order are found
as local minima of sigma_min / sigma_max.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import (
    EndpointIsFocal,
    HorizonTooSmall,
    InsufficientNeighbors,
    NotRegular,
    UnresolvedZeroCluster,
    WitnessNotFound,
)
from .jacobi import RANK_TOL, JacobiFrame, jacobi_frame, shoot
from .parallel import ordered_map
from .submanifold import NormalSphereChart, UnitNormal

__all__ = [
    "FocalRecord",
    "FocalScan",
    "WarnerReport",
    "detect_focal_times",
    "morse_index",
    "index_local_constancy",
    "focal_time",
    "warner_checks",
    "classify_regularity",
    "delta_value",
    "focal_derivative_closed_form",
    "focal_derivative_fd",
    "non_injectivity_witness",
    "focal_scan",
]

log = logging.getLogger(__name__)

TIME_TOL = 1e-9
GRID_STEP = 0.01
SCREEN_RATIO = 0.05
T2_ANGLE = 2.0
T3_ANGLE = 5.0


# -- detection -------------------------------------------------------------------


def _time_grid(lo: float, hi: float, step: float = GRID_STEP, minimum: int = 64) -> np.ndarray:
    count = max(minimum, int(np.ceil((hi - lo) / step)) + 1)
    return np.linspace(lo, hi, count)


def detect_focal_times(frame: JacobiFrame, T_max: float | None = None, tol: float = TIME_TOL,
                       window: tuple[float, float] | None = None,
                       rank_tol: float = RANK_TOL) -> list[tuple[float, int]]:
    """Focal times and multiplicities on (0, T_max], or inside ``window``."""
    T_max = frame.T if T_max is None else min(T_max, frame.T)
    lo, hi = (T_max * 1e-6, T_max) if window is None else (max(window[0], T_max * 1e-6), min(window[1], T_max))
    ts = _time_grid(lo, hi)
    Ds = frame.D_scaled(ts)
    det = np.linalg.det(Ds)
    sv = np.linalg.svd(Ds, compute_uv=False)
    ratio = sv[:, -1] / sv[:, 0]

    def det_at(t):
        return float(np.linalg.det(frame.D_scaled(t)))

    def ratio_at(t):
        s = np.linalg.svd(frame.D_scaled(t), compute_uv=False)
        return float(s[-1] / s[0])

    sgn = np.sign(det)
    roots: list[tuple[float, str]] = []
    changed = np.zeros(len(ts) - 1, bool)
    for i in range(len(ts) - 1):
        if sgn[i] == 0:
            roots.append((ts[i], "exact"))
            changed[max(i - 1, 0)] = changed[i] = True
        elif sgn[i + 1] != 0 and sgn[i] != sgn[i + 1]:
            roots.append((brentq(det_at, ts[i], ts[i + 1], xtol=tol * 1e-3, rtol=4 * np.finfo(float).eps), "odd"))
            changed[i] = True
    if sgn[-1] == 0:
        roots.append((ts[-1], "exact"))
    for i in range(1, len(ts) - 1):
        if changed[i - 1] or changed[i]:
            continue
        if ratio[i] <= ratio[i - 1] and ratio[i] <= ratio[i + 1] and ratio[i] < SCREEN_RATIO:
            res = minimize_scalar(ratio_at, bounds=(ts[i - 1], ts[i + 1]), method="bounded",
                                  options={"xatol": tol * 1e-3, "maxiter": 200})
            if res.fun < rank_tol:
                roots.append((float(res.x), "even"))
    roots.sort()
    for (a, _), (b, _) in zip(roots, roots[1:]):
        if b - a < 10 * tol:
            raise UnresolvedZeroCluster(f"focal candidates {a:.12g} and {b:.12g} are closer than {10 * tol:g}")
    out = []
    for t, kind in roots:
        s = np.linalg.svd(frame.D_scaled(t), compute_uv=False)
        k = int(np.sum(s < rank_tol * s[0]))
        if k == 0 and kind != "even":
            k = 1
        if k:
            out.append((float(t), k))
    return out


def morse_index(focal: list[tuple[float, int]], T: float, tol: float = TIME_TOL) -> int:
    """Sum of multiplicities of focal times strictly before T."""
    for t, _ in focal:
        if abs(t - T) < 10 * tol:
            raise EndpointIsFocal(f"T = {T} is within {10 * tol:g} of the focal time {t}")
    return int(sum(k for t, k in focal if t < T))


def focal_time(focal: list[tuple[float, int]], j: int) -> float:
    """lambda_j: first time at which the accumulated multiplicity reaches j (inf if never)."""
    if j < 1:
        raise ValueError("j must be at least 1")
    acc = 0
    for t, k in focal:
        acc += k
        if acc >= j:
            return t
    return np.inf


def index_local_constancy(chart: NormalSphereChart, z, T: float, radius: float = 1e-2, count: int = 20,
                          rng: np.random.Generator | None = None, tol: float = TIME_TOL) -> dict:
    """Morse index at time T on ``count`` random rays in the chart ball of ``radius`` around z."""
    rng = rng or np.random.default_rng(0)
    z = np.asarray(z, float)
    centre = morse_index(detect_focal_times(jacobi_frame(chart, z, T), T, tol), T, tol)
    dirs = rng.normal(size=(count, chart.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = radius * rng.uniform(0.0, 1.0, count) ** (1.0 / max(chart.dim, 1))
    probes = [chart.wrap(z + r * d) for r, d in zip(radii, dirs)]
    indices = [morse_index(detect_focal_times(jacobi_frame(chart, p, T), T, tol), T, tol) for p in probes]
    return {"ray": z.tolist(), "T": float(T), "index": centre, "probe_indices": indices,
            "constant": all(i == centre for i in indices)}


def delta_value(frame: JacobiFrame, t: float, k: int) -> float:
    """(n-k+1)-th elementary symmetric polynomial of the singular values of D(t), signed by det D(t)."""
    n = frame.n
    if not 1 <= k <= n + 1:
        raise ValueError("k must lie in 1..n+1")
    D = frame.D(t)
    s = np.linalg.svd(D, compute_uv=False)
    e = np.poly(-s)  # coefficients of prod(x + s_i): e_0, e_1, ..., e_n
    sign = np.sign(np.linalg.det(D))
    return float((sign if sign != 0 else 1.0) * e[n - k + 1])


# -- records ------------------------------------------------------------------------


@dataclass
class WarnerReport:
    R1_norm: float
    R1_expected: float
    R2_rank: int
    R2_sigma_min: float
    R2_sigma_ratio: float
    R3_counts: list
    R3_single: list
    probe_coords: np.ndarray
    probe_offsets: np.ndarray
    probe_times: list
    window: tuple


@dataclass
class FocalRecord:
    direction: UnitNormal
    time: float
    multiplicity: int
    order: int
    regular: bool = False
    localform: str = "unclassified"
    det_radial_derivative: float = np.nan
    ray: int = -1
    image: np.ndarray | None = None
    kernel: np.ndarray | None = None
    angle_deg: float = np.nan
    warner: WarnerReport | None = None


@dataclass
class FocalScan:
    scenario: str
    coords: np.ndarray  # (R, n-1) chart coordinates of the rays
    T_max: float
    jmax: int
    focal: list  # per ray: list of (time, multiplicity)
    records: list  # flat list of FocalRecord
    lambdas: np.ndarray  # (R, jmax), inf when not reached
    settings: dict = field(default_factory=dict)


# -- Warner checks and classification --------------------------------------------


class _ProbeCache:
    """Frames of probe rays keyed by chart coordinates, shared within one scan."""

    def __init__(self, chart: NormalSphereChart, T: float):
        self.chart = chart
        self.T = T
        self.frames: dict = {}

    def frame(self, z) -> JacobiFrame:
        key = tuple(np.round(np.asarray(z, float), 13))
        fr = self.frames.get(key)
        if fr is None:
            fr = jacobi_frame(self.chart, z, self.T)
            self.frames[key] = fr
        return fr


def _probe_offsets(dim: int, radius: float) -> np.ndarray:
    offs = []
    for a in range(dim):
        for s in (-1.0, -0.5, 0.5, 1.0):
            o = np.zeros(dim)
            o[a] = s * radius
            offs.append(o)
    return np.array(offs)


def _window(focal: list[tuple[float, int]], t_star: float, T_max: float) -> tuple[float, float]:
    gaps = [t_star, T_max - t_star] if T_max > t_star else [t_star]
    gaps += [abs(t - t_star) for t, _ in focal if abs(t - t_star) > 10 * TIME_TOL]
    gaps = [g for g in gaps if g > 0]
    w = 0.5 * min(gaps)
    return t_star - w, t_star + w


def warner_checks(frame: JacobiFrame, record: FocalRecord, radius: float = 1e-2,
                  focal: list | None = None, cache: _ProbeCache | None = None) -> WarnerReport:
    """R1 radial nondegeneracy, R2 kernel-to-J' isomorphism, R3 focal counts on probe rays."""
    chart = frame.chart
    t_star = record.time
    k = record.multiplicity
    metric = chart.metric
    J, Jd = frame.fields(t_star)
    J, Jd = J[0], Jd[0]
    x = frame.path.position(t_star)
    r1 = metric.F(x, J[:, -1])
    # R2: J'_x for a kernel basis, modulo the image of the differential
    D = frame.D(t_star)
    Dd = frame.Ddot(t_star)
    U, s, Vt = np.linalg.svd(D)
    n = frame.n
    K = Vt[n - k:].T
    Uk = U[:, n - k:]
    M = Uk.T @ Dd @ K
    sm = np.linalg.svd(M, compute_uv=False)
    r2_rank = int(np.sum(sm > 1e-6 * max(sm[0], 1e-300)))
    # R3: focal multiplicities of nearby rays inside the time window
    if focal is None:
        focal = detect_focal_times(frame)
    lo, hi = _window(focal, t_star, frame.T)
    cache = cache or _ProbeCache(chart, frame.T)
    offsets = _probe_offsets(chart.dim, radius)
    probes = chart.wrap(frame.normal.coords + offsets)
    counts, single, times = [], [], []
    for z in probes:
        pf = cache.frame(z)
        found = detect_focal_times(pf, window=(lo, hi))
        counts.append(int(sum(m for _, m in found)))
        single.append(len(found) == 1)
        times.append(found)
    return WarnerReport(r1, float(t_star * metric.F(frame.normal.point, frame.normal.vector)),
                        r2_rank, float(sm[-1]), float(sm[-1] / sm[0]) if sm[0] > 0 else 0.0,
                        counts, single, probes, offsets, times, (lo, hi))


def _kernel_chart_vector(frame: JacobiFrame, t_star: float, k: int) -> np.ndarray:
    """Kernel basis of the differential in (z, r) chart coordinates of the normal bundle."""
    _, _, Vt = np.linalg.svd(frame.D(t_star))
    K = Vt[frame.n - k:].T.copy()
    K[-1, :] *= t_star  # radial coefficient c multiplies t * gamma', i.e. dr = t * c
    return K


def classify_regularity(frame: JacobiFrame, record: FocalRecord, report: WarnerReport,
                        t2_angle: float = T2_ANGLE, t3_angle: float = T3_ANGLE) -> tuple[bool, str, float]:
    """Regularity from the probe counts; local form from the kernel vs the fitted focal set."""
    k = record.multiplicity
    regular = all(c == k for c in report.R3_counts) and all(report.R3_single)
    kernel = _kernel_chart_vector(frame, record.time, k)
    record.kernel = kernel
    if not regular:
        return False, "unclassified", np.nan
    if k >= 2:
        return True, "T1", np.nan
    # fit r = lambda(z) along each chart axis from the probe rays
    chart = frame.chart
    grad = np.zeros(chart.dim)
    for a in range(chart.dim):
        pts_s, pts_l = [0.0], [record.time]
        for dz, found in zip(report.probe_offsets, report.probe_times):
            if np.all(np.delete(dz, a) == 0) and dz[a] != 0 and len(found) == 1:
                pts_s.append(dz[a])
                pts_l.append(found[0][0])
        if len(pts_s) < 3:
            raise InsufficientNeighbors(f"only {len(pts_s) - 1} usable probes along chart axis {a}")
        deg = 2 if len(pts_s) >= 4 else 1
        coef = np.polyfit(pts_s, pts_l, deg)
        grad[a] = coef[-2]
    normal = np.append(-grad, 1.0)
    xk = kernel[:, 0]
    sin_angle = abs(normal @ xk) / (np.linalg.norm(normal) * np.linalg.norm(xk))
    angle = float(np.degrees(np.arcsin(min(1.0, sin_angle))))
    if angle < t2_angle:
        form = "T2"
    elif angle > t3_angle:
        form = "T3"
    else:
        form = "unclassified"
    return True, form, angle


def _radial_derivative(frame: JacobiFrame, t_star: float, k: int) -> float:
    h = 1e-5 * max(1.0, t_star)
    if k == 1:
        return (delta_value(frame, t_star + h, 1) - delta_value(frame, t_star - h, 1)) / (2 * h)
    return (delta_value(frame, t_star + h, k) - delta_value(frame, t_star, k)) / h


# -- focal-time derivatives ----------------------------------------------------------


def focal_derivative_closed_form(chart: NormalSphereChart, z, lam: float, x) -> float:
    """g_v(v, A_v(d pi(x))) / sqrt(lambda) with v = lambda * normal(z).

    Reported next to the finite-difference derivative; the two are not expected to agree.
    """
    if not np.isfinite(lam):
        raise HorizonTooSmall("focal time not reached within the horizon")
    un = chart.normal(z)
    x = np.asarray(x, float)
    if chart.m == 0:
        return 0.0
    v = lam * un.vector
    T = chart.sub.tangent(un.param)
    A = chart.shape_matrix(un.coords, scale=lam)
    w = T @ (A @ x[: chart.m])
    g = np.eye(len(v)) if chart.metric.embedded else chart.metric.fundamental_tensor(un.point, v)
    return float(v @ g @ w / np.sqrt(lam))


def _lambda(chart: NormalSphereChart, z, j: int, T_max: float) -> float:
    return focal_time(detect_focal_times(jacobi_frame(chart, z, T_max)), j)


def focal_derivative_fd(chart: NormalSphereChart, z, j: int, x, h: float = 1e-3,
                        T_max: float = 10.0) -> dict:
    """Central difference of lambda_j along the chart direction x with Richardson extrapolation."""
    z = np.asarray(z, float)
    x = np.asarray(x, float)
    lam0 = _lambda(chart, z, j, T_max)
    if not np.isfinite(lam0):
        raise HorizonTooSmall(f"lambda_{j} exceeds the horizon {T_max}")

    def lam(s):
        val = _lambda(chart, chart.wrap(z + s * x), j, T_max)
        if not np.isfinite(val):
            raise NotRegular("focal time leaves the horizon under perturbation")
        return val

    d1 = (lam(h) - lam(-h)) / (2 * h)
    d2 = (lam(h / 2) - lam(-h / 2)) / h
    rich = (4 * d2 - d1) / 3
    return {"value": rich, "central_h": d1, "central_h2": d2, "self_consistency": abs(rich - d2), "lambda": lam0}


# -- non-injectivity -------------------------------------------------------------------


@dataclass
class Witness:
    u1: np.ndarray  # (z, r)
    u2: np.ndarray
    image_distance: float
    separation: float
    method: str


def _bundle_distance(chart: NormalSphereChart, u1, u2) -> float:
    dz = chart.chart_distance(u1[:-1], u2[:-1])
    return float(np.hypot(dz, u1[-1] - u2[-1]))


def _solve_preimage(chart: NormalSphereChart, target, u0, iters: int = 40, tol: float = 1e-13):
    u = np.array(u0, float)
    for _ in range(iters):
        x, Jac = shoot(chart, u[:-1], u[-1], jacobian=True)
        r = x - target
        if np.linalg.norm(r) < tol:
            break
        step = np.linalg.lstsq(Jac, -r, rcond=None)[0]
        u = u + step
    x = shoot(chart, u[:-1], u[-1])
    return u, float(np.linalg.norm(x - target))


def non_injectivity_witness(frame: JacobiFrame, record: FocalRecord, eps: float = 2e-2,
                            delta: float = 1e-3, image_tol: float = 1e-6,
                            T_max: float | None = None) -> Witness:
    """Find u1 != u2 near the focal vector with exp(u1) = exp(u2).

    Two searches: pairs of focal vectors on opposite sides along each chart
    axis (collapsing leaves), then mirrored pairs across the focal set along
    the kernel direction refined by Gauss-Newton (folds).
    """
    chart = frame.chart
    z0 = frame.normal.coords
    t0 = record.time
    T_max = frame.T if T_max is None else T_max
    v0 = np.append(z0, t0)
    diag = []
    # leaf pairs
    for a in range(chart.dim):
        for s in (eps / 2, eps / 4):
            e = np.zeros(chart.dim)
            e[a] = s
            pts = []
            for sign in (1.0, -1.0):
                zz = chart.wrap(z0 + sign * e)
                fr = jacobi_frame(chart, zz, T_max)
                found = detect_focal_times(fr, window=(t0 - 0.5 * eps * 10, t0 + 0.5 * eps * 10))
                if len(found) != 1:
                    break
                pts.append((np.append(zz, found[0][0]), fr.path.position(found[0][0])))
            if len(pts) < 2:
                continue
            dist = float(np.linalg.norm(pts[0][1] - pts[1][1]))
            sep = _bundle_distance(chart, pts[0][0], pts[1][0])
            diag.append(("leaf", a, s, dist, sep))
            if dist <= image_tol and sep >= delta:
                return Witness(pts[0][0], pts[1][0], dist, sep, "leaf")
    # fold pairs
    K = record.kernel if record.kernel is not None else _kernel_chart_vector(frame, t0, record.multiplicity)
    xk = K[:, 0] / np.linalg.norm(K[:, 0])
    for a in (eps / 4, eps / 8, eps / 2):
        u1 = v0 + a * xk
        u1[:-1] = chart.wrap(u1[:-1])
        target = shoot(chart, u1[:-1], u1[-1])
        u2, res = _solve_preimage(chart, target, v0 - a * xk)
        sep = _bundle_distance(chart, u1, u2)
        diag.append(("fold", a, res, sep))
        if res <= image_tol and sep >= delta:
            return Witness(u1, u2, res, sep, "fold")
    raise WitnessNotFound(f"no witness near t={t0} at {z0}: {diag}")


# -- scans --------------------------------------------------------------------------------


def focal_scan(chart: NormalSphereChart, coords, T_max: float, jmax: int = 2, threads: int | None = None,
               probe_radius: float = 1e-2, tol: float = TIME_TOL, scenario: str = "",
               classify: bool = True) -> FocalScan:
    """Two-phase scan: detect focal times on every ray, then check and classify every record."""
    coords = np.atleast_2d(np.asarray(coords, float))

    def detect(z):
        fr = jacobi_frame(chart, z, T_max)
        return fr, detect_focal_times(fr, T_max, tol)

    phase1 = ordered_map(detect, coords, threads)
    focal = [f for _, f in phase1]
    lambdas = np.array([[focal_time(f, j) for j in range(1, jmax + 1)] for f in focal]).reshape(len(coords), jmax)

    def build(idx):
        fr, found = phase1[idx]
        cache = _ProbeCache(chart, T_max)
        out = []
        order = 0
        for t, k in found:
            order += k
            rec = FocalRecord(fr.normal, t, k, order - k + 1, ray=idx, image=fr.path.position(t))
            rec.det_radial_derivative = _radial_derivative(fr, t, k)
            if classify:
                rep = warner_checks(fr, rec, probe_radius, found, cache)
                rec.warner = rep
                try:
                    rec.regular, rec.localform, rec.angle_deg = classify_regularity(fr, rec, rep)
                except InsufficientNeighbors as exc:
                    log.info("ray %d: %s", idx, exc)
            out.append(rec)
        return out

    per_ray = ordered_map(build, range(len(coords)), threads)
    records = [r for rs in per_ray for r in rs]
    return FocalScan(scenario, coords, float(T_max), jmax, focal, records, lambdas,
                     {"tol": tol, "probe_radius": probe_radius, "rank_tol": RANK_TOL})
