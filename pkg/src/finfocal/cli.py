"""Command-line front end: focal and cut scans, verification suites and plots."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import cut as cut_mod
from . import verify
from .errors import FinfocalError, NumericFailure, ScenarioError
from .formats import read_csv, write_csv, write_summary
from .scenario import Scenario, load_scenario

log = logging.getLogger("finfocal")

EXIT_OK, EXIT_FAIL, EXIT_SCHEMA, EXIT_NUMERIC = 0, 1, 2, 3


def _summary(sc: Scenario, command: str, settings: dict, results: dict, files: list[str], status: str) -> dict:
    return {
        "tool": "finfocal",
        "version": __version__,
        "command": command,
        "scenario": {"name": sc.name, "sha256": sc.digest},
        "seed": sc.seed,
        "tolerances": sc.tolerances,
        "settings": settings,
        "results": results,
        "status": status,
        "files": files,
    }


def _focal_rows(sc: Scenario, scan):
    d = sc.chart.dim
    n_img = sc.metric.coord_dim
    J = scan.jmax
    header = ["ray"] + [f"z{i}" for i in range(d)] + ["focal_time", "k", "i", "regular", "localform", "angle_deg",
                                                     "delta_radial_derivative"]
    header += [f"image_x{i}" for i in range(n_img)] + [f"lambda_{j}" for j in range(1, J + 1)]
    rows = []
    for rec in scan.records:
        rows.append([rec.ray, *scan.coords[rec.ray], rec.time, rec.multiplicity, rec.order, rec.regular,
                     rec.localform, rec.angle_deg, rec.det_radial_derivative, *rec.image, *scan.lambdas[rec.ray]])
    return header, rows


def _cut_rows(sc: Scenario, cs):
    d = sc.chart.dim
    n_img = sc.metric.coord_dim
    header = ["ray"] + [f"z{i}" for i in range(d)] + ["rho", "reason", "separating", "focal", "horizon",
                                                     "lambda_1"]
    header += [f"image_x{i}" for i in range(n_img)] + [f"witness_z{i}" for i in range(d)] + ["witness_side",
                                                                                          "witness_time"]
    rows = []
    for r in cs.records:
        w = r.witness
        wz = list(w.normal.coords) if w is not None else [None] * d
        rows.append([r.ray, *cs.coords[r.ray], r.rho, r.reason, r.separating, r.focal, r.horizon, r.lambda1,
                     *r.image, *wz, w.side if w is not None else None, w.time if w is not None else None])
    return header, rows


def cmd_focal_scan(sc: Scenario, out: Path, threads: int | None) -> int:
    scan = verify._focal_scan(sc, threads)
    header, rows = _focal_rows(sc, scan)
    csv_name = f"{sc.name}_focal.csv"
    write_csv(out / csv_name, header, rows)
    forms: dict[str, int] = {}
    for rec in scan.records:
        forms[rec.localform] = forms.get(rec.localform, 0) + 1
    lam = scan.lambdas
    results = {
        "rays": len(scan.coords),
        "records": len(scan.records),
        "regular": sum(r.regular for r in scan.records),
        "localforms": dict(sorted(forms.items())),
        "lambda_min": [float(np.min(lam[:, j])) for j in range(scan.jmax)],
        "lambda_max": [float(np.max(lam[:, j])) for j in range(scan.jmax)],
    }
    settings = {"rays": len(scan.coords), "tmax": sc.T_max, "jmax": scan.jmax, **scan.settings}
    write_summary(out / f"{sc.name}_focal.json", _summary(sc, "focal-scan", settings, results, [csv_name], "ok"))
    print(f"focal-scan {sc.name}: {len(scan.records)} focal records on {len(scan.coords)} rays -> {out / csv_name}")
    return EXIT_OK


def cmd_cut_scan(sc: Scenario, out: Path, threads: int | None) -> int:
    coords = sc.cut_rays()
    fscan = verify._focal_scan(sc, threads, classify=True, coords=coords)
    cs, fan, _ = verify.cut_scan_for(sc, threads, focal_scan=fscan, coords=coords)
    header, rows = _cut_rows(sc, cs)
    csv_name = f"{sc.name}_cut.csv"
    write_csv(out / csv_name, header, rows)
    eps = 2.0 * verify.grid_spacing(sc, coords)
    reasons: dict[str, int] = {}
    for r in cs.records:
        reasons[r.reason] = reasons.get(r.reason, 0) + 1
    t3 = cut_mod.t3_not_cut_check(fscan, cs, sc.tolerances["cut"])
    results = {
        "rays": len(cs.records),
        "reasons": dict(sorted(reasons.items())),
        "closure_fraction": cut_mod.closure_check(cs.records, sc.chart, eps),
        "closure_epsilon": eps,
        "rho_minus_lambda": cut_mod.rho_le_lambda_report(cs.records),
        "t3_not_cut": {k: v for k, v in t3.items() if k != "coincident"} | {"coincident": len(t3["coincident"])},
    }
    settings = {"rays": len(coords), "tmax": sc.T_max, **cs.settings}
    write_summary(out / f"{sc.name}_cut.json", _summary(sc, "cut-scan", settings, results, [csv_name], "ok"))
    print(f"cut-scan {sc.name}: {len(cs.records)} rays, closure fraction {results['closure_fraction']:.6g} "
          f"-> {out / csv_name}")
    return EXIT_OK


def cmd_verify(sc: Scenario, suite: str, out: Path, threads: int | None) -> int:
    report = verify.run_suite(suite, sc, threads)
    status = report["status"]
    name = f"{sc.name}_verify_{suite}.json"
    write_summary(out / name, _summary(sc, f"verify {suite}", {"suite": suite}, report, [], status))
    print(f"verify {suite} {sc.name}: {status}")
    if suite == "derivative-report":
        print(f"{'ray':>24} {'lambda_1':>14} {'fd':>14} {'closed_form':>14} {'difference':>14}")
        for r in report["rows"]:
            if "error" in r:
                print(f"{str(r['ray']):>24} {r['error']}")
                continue
            print(f"{str([round(v, 6) for v in r['ray']]):>24} {r['lambda_1']:14.8g} {r['fd']:14.8g} "
                  f"{r['closed_form']:14.8g} {r['difference']:14.8g}")
    return EXIT_OK if status in ("pass", "report") else EXIT_FAIL


def _floats(rows, keys):
    return np.array([[float(r[k]) if r[k] not in ("", None) else np.nan for k in keys] for r in rows]).reshape(
        len(rows), len(keys))


def cmd_plot(sc: Scenario, out: Path, focal_csv: Path | None, cut_csv: Path | None, samples: int = 12) -> int:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "finfocal"
    import matplotlib.pyplot as plt

    from .jacobi import shoot

    if sc.metric.coord_dim != 2:
        raise FinfocalError("plot draws 2D chart scenarios only")
    focal_csv = focal_csv or out / f"{sc.name}_focal.csv"
    cut_csv = cut_csv or out / f"{sc.name}_cut.csv"
    fig, ax = plt.subplots(figsize=(6, 6))
    chart = sc.chart
    sub = sc.submanifold
    if sub.param_dim:
        P = np.array([sub.point(u) for u in sub.sample(400)])
        if sub.periods[0]:
            P = np.vstack([P, P[:1]])
        ax.plot(P[:, 0], P[:, 1], color="black", lw=1.2, label="N")
    else:
        p = sub.point(np.zeros(0))
        ax.plot([p[0]], [p[1]], "ko", label="N")
    if focal_csv.exists():
        _, rows = read_csv(focal_csv)
        if rows:
            img = _floats(rows, ["image_x0", "image_x1"])
            first = np.array([r["i"] == "1" for r in rows])
            ax.plot(img[first, 0], img[first, 1], ".", ms=2.5, color="tab:red", label="focal locus")
    cut_rows = []
    if cut_csv.exists():
        _, cut_rows = read_csv(cut_csv)
        if cut_rows:
            img = _floats(cut_rows, ["image_x0", "image_x1"])
            fin = np.array([r["rho"] != "inf" for r in cut_rows])
            ax.plot(img[fin, 0], img[fin, 1], ".", ms=2.5, color="tab:blue", label="cut locus")
    if cut_rows:
        zs = _floats(cut_rows, [f"z{i}" for i in range(chart.dim)])
        rho = _floats(cut_rows, ["rho"])[:, 0]
        pick = np.unique(np.linspace(0, len(zs) - 1, min(samples, len(zs))).round().astype(int))
        for i in pick:
            T = rho[i] if np.isfinite(rho[i]) else sc.T_max
            ts = np.linspace(0.0, T, 40)
            pts = np.array([shoot(chart, zs[i], t) for t in ts])
            ax.plot(pts[:, 0], pts[:, 1], color="tab:gray", lw=0.6)
    ax.set_aspect("equal")
    ax.set_title(sc.name)
    handles, labels = ax.get_legend_handles_labels()
    if handles:
        ax.legend(loc="upper right", fontsize=8)
    svg = out / f"{sc.name}.svg"
    fig.savefig(svg, format="svg", metadata={"Date": None})
    plt.close(fig)
    print(f"plot {sc.name} -> {svg}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario file (YAML or JSON) or a stock scenario name")
    common.add_argument("--out", default="out", help="output directory (default: ./out)")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: available cores)")
    common.add_argument("--tmax", type=float, default=None, help="override the scenario time horizon")
    common.add_argument("--tol", type=float, default=None,
                        help="override the command's tolerance (focal time for focal-scan, cut tolerance otherwise)")
    p = argparse.ArgumentParser(prog="finfocal", description="Focal and cut loci of submanifolds in Finsler manifolds.")
    p.add_argument("--version", action="version", version=f"finfocal {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("focal-scan", parents=[common], help="detect, check and classify focal points on every ray")
    sub.add_parser("cut-scan", parents=[common], help="cut times, separating points and closure fraction")
    v = sub.add_parser("verify", parents=[common], help="run a verification suite")
    v.add_argument("suite", choices=sorted(verify.SUITES))
    pl = sub.add_parser("plot", parents=[common], help="SVG of N, focal locus, cut locus and sample geodesics")
    pl.add_argument("--focal-csv", type=Path, default=None)
    pl.add_argument("--cut-csv", type=Path, default=None)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FINFOCAL_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    overrides: dict = {}
    if args.tmax is not None:
        overrides["tmax"] = args.tmax
    if args.tol is not None:
        key = "time" if args.command == "focal-scan" else "cut"
        overrides["tolerances"] = {key: args.tol}
    try:
        sc = load_scenario(args.scenario, overrides)
        sc.chart  # build eagerly so that geometry errors surface as scenario errors
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "focal-scan":
            return cmd_focal_scan(sc, out, args.threads)
        if args.command == "cut-scan":
            return cmd_cut_scan(sc, out, args.threads)
        if args.command == "verify":
            return cmd_verify(sc, args.suite, out, args.threads)
        return cmd_plot(sc, out, args.focal_csv, args.cut_csv)
    except ScenarioError as exc:
        print(f"finfocal: scenario error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except NumericFailure as exc:
        print(f"finfocal: numeric failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FinfocalError as exc:
        print(f"finfocal: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
