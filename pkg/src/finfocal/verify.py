"""Verification suites over a scenario; each returns a JSON-ready report with a status."""

from __future__ import annotations

import logging

import numpy as np

from . import cut as cut_mod
from . import focal as focal_mod
from .errors import FinfocalError, MeshTooCoarse, WitnessNotFound
from .jacobi import frame_adjoint_defects, jacobi_frame
from .oracle import GridGraphOracle, index_form_negative_count, minkowski_distance
from .parallel import ordered_map
from .scenario import Scenario

__all__ = ["SUITES", "run_suite", "adjoint_suite", "index_suite", "warner_suite", "closure_suite",
           "noninjectivity_suite", "derivative_report", "distance_agreement", "asymmetry_witness",
           "grid_spacing", "subset"]

log = logging.getLogger(__name__)


def subset(coords: np.ndarray, count: int) -> np.ndarray:
    """Evenly spaced rows of coords."""
    if count >= len(coords):
        return coords
    idx = np.unique(np.linspace(0, len(coords) - 1, count).round().astype(int))
    return coords[idx]


def grid_spacing(sc: Scenario, coords: np.ndarray) -> float:
    chart = sc.chart
    if len(coords) < 2:
        return 0.0
    return min(chart.chart_distance(coords[0], c) for c in coords[1:])


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


def adjoint_suite(sc: Scenario, rays: int = 12, samples: int = 50, threads: int | None = None) -> dict:
    """max |g(J, K') - g(J', K)| over frame pairs on a time grid, relative to max |J| |K'|."""
    chart = sc.chart
    coords = subset(sc.rays(), rays)
    times = np.linspace(0.0, sc.T_max, samples)
    tol = sc.tolerances["adjoint"]

    def one(z):
        fr = jacobi_frame(chart, z, sc.T_max)
        defects = frame_adjoint_defects(fr, times)
        D, Dd = fr.D(times), fr.Ddot(times)
        scale = float(np.max(np.linalg.norm(D, axis=1)[:, :, None] * np.linalg.norm(Dd, axis=1)[:, None, :]))
        return float(np.abs(defects).max()), scale

    res = ordered_map(one, coords, threads)
    worst = max(d / max(s, 1e-300) for d, s in res)
    return {"suite": "adjoint", "status": _status(worst <= tol), "rays": len(coords), "samples": samples,
            "max_defect": max(d for d, _ in res), "max_relative_defect": worst, "tolerance": tol}


def index_suite(sc: Scenario, rays: int = 3, margin: float = 0.05, threads: int | None = None) -> dict:
    """Index-form negative count against the focal count, with mesh halving."""
    chart = sc.chart
    coords = subset(sc.rays(), rays)
    times = sc.oracle_settings.get("index_times") or list(np.linspace(0.2, 0.95, 4) * sc.T_max)
    mesh = int(sc.oracle_settings["index_mesh"])
    rows, skipped = [], []
    for z in coords:
        found = focal_mod.detect_focal_times(jacobi_frame(chart, z, sc.T_max), sc.T_max, sc.tolerances["time"])
        for T in times:
            if T > sc.T_max or any(abs(T - t) < margin for t, _ in found):
                skipped.append({"ray": z.tolist(), "T": T})
                continue
            morse = focal_mod.morse_index(found, T, sc.tolerances["time"])
            try:
                c1 = index_form_negative_count(chart, z, T, mesh)
                c2 = index_form_negative_count(chart, z, T, 2 * mesh)
            except MeshTooCoarse as exc:
                rows.append({"ray": z.tolist(), "T": T, "morse": morse, "error": str(exc), "ok": False})
                continue
            rows.append({"ray": z.tolist(), "T": T, "morse": morse, "index_form": c1, "index_form_fine": c2,
                         "ok": morse == c1 == c2})
    ok = bool(rows) and all(r["ok"] for r in rows)
    return {"suite": "index", "status": _status(ok), "pairs": len(rows), "rows": rows, "skipped": skipped,
            "mesh": mesh}


def _focal_scan(sc: Scenario, threads=None, classify=True, coords=None):
    coords = sc.rays() if coords is None else coords
    return focal_mod.focal_scan(sc.chart, coords, sc.T_max, sc.grid["jmax"], threads,
                                sc.tolerances["probe_radius"], sc.tolerances["time"], sc.name, classify)


def warner_suite(sc: Scenario, threads: int | None = None, scan=None) -> dict:
    scan = scan or _focal_scan(sc, threads)
    rows = []
    for rec in scan.records:
        w = rec.warner
        r1 = abs(w.R1_norm - w.R1_expected) <= 1e-6
        r2 = w.R2_rank == rec.multiplicity and w.R2_sigma_ratio >= 1e-6
        r3 = all(c == rec.multiplicity for c in w.R3_counts)
        rows.append({"ray": rec.ray, "time": rec.time, "k": rec.multiplicity, "R1": r1, "R2": r2, "R3": r3,
                     "R1_error": abs(w.R1_norm - w.R1_expected), "R2_rank": w.R2_rank,
                     "R2_sigma_ratio": w.R2_sigma_ratio, "R3_counts": w.R3_counts})
    ok = all(r["R1"] and r["R2"] and r["R3"] for r in rows)
    return {"suite": "warner", "status": _status(ok), "records": len(rows),
            "failures": [r for r in rows if not (r["R1"] and r["R2"] and r["R3"])],
            "max_R1_error": max((r["R1_error"] for r in rows), default=0.0),
            "min_R2_sigma_ratio": min((r["R2_sigma_ratio"] for r in rows), default=np.inf)}


def cut_scan_for(sc: Scenario, threads=None, focal_scan=None, coords=None):
    coords = sc.cut_rays() if coords is None else coords
    if focal_scan is None or len(focal_scan.coords) != len(coords) or not np.allclose(focal_scan.coords, coords):
        focal_scan = _focal_scan(sc, threads, classify=False, coords=coords)
    fan = cut_mod.Fan(sc.chart, sc.T_max, starts=sc.cut_settings["starts"])
    cs = cut_mod.cut_scan(fan, coords, focal_scan.lambdas, sc.T_max, sc.tolerances["cut"], threads, sc.name)
    return cs, fan, focal_scan


def closure_suite(sc: Scenario, threads: int | None = None, cut_scan=None) -> dict:
    coords = sc.cut_rays()
    cs = cut_scan or cut_scan_for(sc, threads, coords=coords)[0]
    eps = 2.0 * grid_spacing(sc, cs.coords)
    frac = cut_mod.closure_check(cs.records, sc.chart, eps)
    rep = cut_mod.rho_le_lambda_report(cs.records)
    return {"suite": "closure", "status": _status(frac == 1.0), "fraction": frac, "epsilon": eps,
            "rays": len(cs.records), "separating": sum(r.separating for r in cs.records),
            "rho_minus_lambda": rep}


def noninjectivity_suite(sc: Scenario, sample: int = 24, threads: int | None = None, scan=None) -> dict:
    scan = scan or _focal_scan(sc, threads)
    regular = [r for r in scan.records if r.regular]
    if len(regular) > sample:
        idx = np.unique(np.linspace(0, len(regular) - 1, sample).round().astype(int))
        regular = [regular[i] for i in idx]

    def one(rec):
        fr = jacobi_frame(sc.chart, rec.direction.coords, sc.T_max)
        try:
            w = focal_mod.non_injectivity_witness(fr, rec)
            return {"ray": rec.ray, "time": rec.time, "found": True, "method": w.method,
                    "image_distance": w.image_distance, "separation": w.separation}
        except WitnessNotFound as exc:
            return {"ray": rec.ray, "time": rec.time, "found": False, "reason": str(exc)[:200]}

    rows = ordered_map(one, regular, threads)
    frac = sum(r["found"] for r in rows) / len(rows) if rows else 1.0
    return {"suite": "noninjectivity", "status": _status(frac == 1.0), "sampled": len(rows), "fraction": frac,
            "rows": rows}


def derivative_report(sc: Scenario, rays: int = 8, threads: int | None = None) -> dict:
    """Finite-difference focal-time derivative next to the closed-form expression; no verdict."""
    chart = sc.chart
    coords = subset(sc.rays(), rays)
    rows = []
    for z in coords:
        x = np.zeros(chart.dim)
        x[0] = 1.0
        try:
            fd = focal_mod.focal_derivative_fd(chart, z, 1, x, T_max=sc.T_max)
        except FinfocalError as exc:
            rows.append({"ray": z.tolist(), "error": str(exc)})
            continue
        closed = focal_mod.focal_derivative_closed_form(chart, z, fd["lambda"], x)
        rows.append({"ray": z.tolist(), "lambda_1": fd["lambda"], "fd": fd["value"],
                     "fd_self_consistency": fd["self_consistency"], "closed_form": closed,
                     "difference": fd["value"] - closed})
    return {"suite": "derivative-report", "status": "report", "rows": rows}


def distance_agreement(sc: Scenario, count: int = 100, fan=None, oracle=None) -> dict:
    """Shooting distance against the grid oracle, and against min F(q - p) for position-independent metrics."""
    box = np.asarray(sc.oracle_settings["box"], float)
    fan = fan or cut_mod.Fan(sc.chart, sc.T_max, starts=sc.cut_settings["starts"])
    oracle = oracle or GridGraphOracle(sc.metric, sc.submanifold, box, sc.oracle_settings["resolution"],
                                       sc.oracle_settings["stencil_radius"])
    rng = np.random.default_rng(sc.seed)
    inner = box.mean(axis=1)[:, None] + 0.9 * (box - box.mean(axis=1)[:, None])
    qs = rng.uniform(inner[:, 0], inner[:, 1], size=(count, 2))
    rows = []
    for q in qs:
        d = cut_mod.distance_to_point(fan, q).distance
        g = oracle.distance(q)
        row = {"q": q.tolist(), "shooting": d, "grid": g, "grid_rel": abs(d - g) / max(d, 1e-12)}
        if sc.system.flat:
            mk = minkowski_distance(sc.metric, sc.submanifold, q)
            row["minkowski"] = mk
            row["minkowski_rel"] = abs(d - mk) / max(mk, 1e-12)
        rows.append(row)
    return {"rows": rows, "max_grid_rel": max(r["grid_rel"] for r in rows),
            "max_minkowski_rel": max((r.get("minkowski_rel", 0.0) for r in rows), default=0.0)}


def asymmetry_witness(sc: Scenario, p=(0.0, 0.0), q=(1.0, 0.0), T_max: float = 4.0) -> dict:
    """Point-to-point distances in both directions, by shooting from point sources."""
    from .geodesic import GeodesicSystem
    from .submanifold import NormalSphereChart, point

    system = sc.system if sc.system.metric is sc.metric else GeodesicSystem(sc.metric)
    p, q = np.asarray(p, float), np.asarray(q, float)
    dpq = cut_mod.distance_to_point(cut_mod.Fan(NormalSphereChart(point(p), system), T_max, 720), q).distance
    dqp = cut_mod.distance_to_point(cut_mod.Fan(NormalSphereChart(point(q), system), T_max, 720), p).distance
    return {"p": p.tolist(), "q": q.tolist(), "d_pq": dpq, "d_qp": dqp, "gap": abs(dpq - dqp)}


SUITES = {
    "adjoint": adjoint_suite,
    "index": index_suite,
    "warner": warner_suite,
    "closure": closure_suite,
    "noninjectivity": noninjectivity_suite,
    "derivative-report": derivative_report,
}


def run_suite(name: str, sc: Scenario, threads: int | None = None) -> dict:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](sc, threads=threads)
