from __future__ import annotations

from functools import lru_cache

import numpy as np
import pytest

from finfocal import metric as M
from finfocal import submanifold as S
from finfocal.geodesic import GeodesicSystem
from finfocal.scenario import load_scenario
from finfocal.submanifold import NormalSphereChart


@lru_cache(maxsize=None)
def scenario(name: str):
    sc = load_scenario(name)
    sc.chart
    return sc


@lru_cache(maxsize=None)
def euclid_system(dim: int = 2) -> GeodesicSystem:
    return GeodesicSystem(M.riemannian(np.eye(dim)))


@lru_cache(maxsize=None)
def randers_system(bx: float = 0.3) -> GeodesicSystem:
    return GeodesicSystem(M.randers(np.eye(2), [bx, 0.0]))


@lru_cache(maxsize=None)
def sphere_system() -> GeodesicSystem:
    return GeodesicSystem(M.embedded_hypersurface(lambda x: x @ x, 3, 1.0))


@lru_cache(maxsize=None)
def circle_chart(side: float = -1.0) -> NormalSphereChart:
    return NormalSphereChart(S.circle(1.0), euclid_system(), side=side)


@lru_cache(maxsize=None)
def ellipse_chart() -> NormalSphereChart:
    return NormalSphereChart(S.ellipse(2.0, 1.0), euclid_system(), side=-1.0)


@lru_cache(maxsize=None)
def equator_chart() -> NormalSphereChart:
    return NormalSphereChart(S.equator(), sphere_system(), side=1.0)


@lru_cache(maxsize=None)
def sphere_point_chart() -> NormalSphereChart:
    return NormalSphereChart(S.point([1.0, 0.0, 0.0]), sphere_system())


@lru_cache(maxsize=None)
def line_chart() -> NormalSphereChart:
    return NormalSphereChart(S.line(), euclid_system(), side=1.0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)


@lru_cache(maxsize=None)
def focal_scan_of(name: str, classify: bool = True):
    from finfocal.verify import _focal_scan

    return _focal_scan(scenario(name), classify=classify)


@lru_cache(maxsize=None)
def cut_scan_of(name: str):
    """(cut scan, fan, classified focal scan) on the scenario's cut rays."""
    from finfocal.verify import cut_scan_for

    sc = scenario(name)
    coords = sc.cut_rays()
    if len(coords) == len(sc.rays()):
        fs = focal_scan_of(name)
    else:
        from finfocal.verify import _focal_scan

        fs = _focal_scan(sc, classify=True, coords=coords)
    return cut_scan_for(sc, focal_scan=fs, coords=coords)


@lru_cache(maxsize=None)
def grid_oracle(name: str):
    from finfocal.oracle import GridGraphOracle

    sc = scenario(name)
    o = sc.oracle_settings
    return GridGraphOracle(sc.metric, sc.submanifold, np.asarray(o["box"], float), o["resolution"], o["stencil_radius"])


# -- acceptance report ---------------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, title: str, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {title} ({detail})"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
