from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from finfocal import __version__
from finfocal.cli import main
from finfocal.formats import read_csv, summary_schema


@lru_cache(maxsize=None)
def _run(tag: str, *argv: str) -> Path:
    # one output directory per distinct command line, shared across tests
    import tempfile

    out = Path(tempfile.mkdtemp(prefix=f"finfocal-{tag}-"))
    assert main([*argv, "--out", str(out)]) == 0
    return out


def focal_out(name, threads="1"):
    return _run(f"focal-{threads}", "focal-scan", "--scenario", name, "--threads", threads)


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_focal_scan_circle_outputs():
    out = focal_out("circle")
    header, rows = read_csv(out / "circle_focal.csv")
    assert header[:4] == ["ray", "z0", "focal_time", "k"]
    assert len(rows) == 360
    assert all(abs(float(r["focal_time"]) - 1.0) < 1e-9 for r in rows)
    assert {r["localform"] for r in rows} == {"T2"}
    summary = json.loads((out / "circle_focal.json").read_text())
    assert summary["status"] == "ok"
    assert summary["files"] == ["circle_focal.csv"]
    assert summary["results"]["records"] == 360
    assert len(summary["scenario"]["sha256"]) == 64


def test_summaries_validate_against_schema():
    out = focal_out("circle")
    jsonschema.validate(json.loads((out / "circle_focal.json").read_text()), summary_schema())


def test_line_gives_empty_csv():
    out = focal_out("line")
    header, rows = read_csv(out / "line_focal.csv")
    assert rows == [] and "focal_time" in header
    summary = json.loads((out / "line_focal.json").read_text())
    assert summary["results"]["records"] == 0
    jsonschema.validate(summary, summary_schema())


def test_sphere_equator_second_focal_value():
    out = focal_out("sphere_equator")
    _, rows = read_csv(out / "sphere_equator_focal.csv")
    lam2 = np.array([float(r["lambda_2"]) for r in rows])
    assert np.allclose(lam2, 1.5 * np.pi, atol=1e-8)
    assert {r["i"] for r in rows} == {"1", "2"}


def test_rerun_is_byte_identical(tmp_path):
    first = focal_out("circle")
    assert main(["focal-scan", "--scenario", "circle", "--threads", "1", "--out", str(tmp_path)]) == 0
    for f in ("circle_focal.csv", "circle_focal.json"):
        assert (tmp_path / f).read_bytes() == (first / f).read_bytes()


def test_thread_count_does_not_change_output():
    a, b = focal_out("circle", "1"), focal_out("circle", "2")
    assert (a / "circle_focal.csv").read_bytes() == (b / "circle_focal.csv").read_bytes()


def test_overrides_recorded(tmp_path):
    assert main(["focal-scan", "--scenario", "circle", "--tmax", "0.5", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "circle_focal.json").read_text())
    assert summary["settings"]["tmax"] == 0.5
    assert summary["results"]["records"] == 0


def test_bad_scenario_exit_code(tmp_path, capsys):
    assert main(["focal-scan", "--scenario", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: bad\nmetric: {kind: riemannian}\n")
    assert main(["verify", "adjoint", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert "scenario" in capsys.readouterr().err


def test_verify_derivative_report(tmp_path, capsys):
    assert main(["verify", "derivative-report", "--scenario", "circle", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "circle_verify_derivative-report.json").read_text())
    assert summary["status"] == "report"
    assert "closed_form" in capsys.readouterr().out


def test_cut_scan_circle():
    out = _run("cut", "cut-scan", "--scenario", "circle")
    _, rows = read_csv(out / "circle_cut.csv")
    assert len(rows) == 360
    assert all(abs(float(r["rho"]) - 1.0) < 1e-3 for r in rows)
    assert all(r["focal"] == "true" and r["separating"] == "true" for r in rows)
    summary = json.loads((out / "circle_cut.json").read_text())
    jsonschema.validate(summary, summary_schema())
    assert summary["results"]["closure_fraction"] == 1.0


def test_plot_is_deterministic(tmp_path):
    out = _run("cut", "cut-scan", "--scenario", "circle")
    assert main(["plot", "--scenario", "circle", "--out", str(out)]) == 0
    first = (out / "circle.svg").read_bytes()
    assert main(["plot", "--scenario", "circle", "--out", str(out)]) == 0
    assert (out / "circle.svg").read_bytes() == first
    assert b"<svg" in first


def test_plot_with_empty_scan():
    out = focal_out("line")
    assert main(["plot", "--scenario", "line", "--out", str(out)]) == 0
    assert b"<svg" in (out / "line.svg").read_bytes()


@pytest.mark.parametrize("suite,name", [("adjoint", "sphere_equator"), ("closure", "ellipse")])
def test_verify_suites_pass(tmp_path, suite, name):
    assert main(["verify", suite, "--scenario", name, "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / f"{name}_verify_{suite}.json").read_text())
    assert summary["status"] == "pass"
    if suite == "closure":
        assert summary["results"]["fraction"] == 1.0


def test_plot_rejects_non_planar_chart(tmp_path, capsys):
    assert main(["plot", "--scenario", "sphere_equator", "--out", str(tmp_path)]) == 1
    assert "2D" in capsys.readouterr().err
