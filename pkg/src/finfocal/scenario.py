"""Scenario files: a validated key-value tree describing metric, submanifold, grids and tolerances."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import sympy
import yaml

from . import metric as metric_mod
from . import submanifold as sub_mod
from ._jax import jnp
from .errors import ScenarioError
from .geodesic import GeodesicSystem
from .submanifold import NormalSphereChart

__all__ = ["Scenario", "load_scenario", "stock_scenarios", "stock_path", "scenario_schema", "ray_coords",
           "DEFAULT_TOLERANCES"]

DEFAULT_TOLERANCES = {
    "time": 1e-9,
    "cut": 1e-3,
    "rank": 1e-7,
    "position": 1e-8,
    "adjoint": 1e-7,
    "probe_radius": 1e-2,
}

STOCK = ("circle", "ellipse", "sphere_equator", "sphere_point", "randers_circle")


def scenario_schema() -> dict:
    text = resources.files("finfocal").joinpath("schemas/scenario.schema.json").read_text()
    return json.loads(text)


def stock_path(name: str) -> Path:
    return Path(str(resources.files("finfocal").joinpath(f"scenarios/{name}.yaml")))


def stock_scenarios() -> list[str]:
    root = resources.files("finfocal").joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def _symbols(prefix: str, n: int):
    return sympy.symbols(" ".join(f"{prefix}{i}" for i in range(n)) + " ", seq=True)


def _compile(expr, names, prefix: str):
    """Compile an expression string in the given symbols to a jax-traceable function of a vector."""
    try:
        e = sympy.sympify(expr, locals={str(s): s for s in names})
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ScenarioError(f"cannot parse expression {expr!r}: {exc}") from exc
    extra = {str(s) for s in e.free_symbols} - {str(s) for s in names}
    if extra:
        raise ScenarioError(f"expression {expr!r} uses unknown symbols {sorted(extra)}; use {prefix}0, {prefix}1, ...")
    f = sympy.lambdify(names, e, modules="jax")
    return lambda x: jnp.asarray(f(*[x[i] for i in range(len(names))]), dtype=jnp.float64)


def _field(value, n: int, prefix: str = "x"):
    """Numbers give a constant array; any string entry turns the whole array into a field of x."""
    arr = np.asarray(value, dtype=object)
    if not any(isinstance(v, str) for v in arr.ravel()):
        return np.asarray(value, float), True
    names = _symbols(prefix, n)
    fns = [_compile(str(v), names, prefix) for v in arr.ravel()]
    shape = arr.shape

    def fld(x):
        return jnp.stack([f(x) for f in fns]).reshape(shape)

    return fld, False


@dataclass(eq=False)
class Scenario:
    raw: dict
    path: str = ""
    digest: str = ""
    overrides: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def tolerances(self) -> dict:
        tol = dict(DEFAULT_TOLERANCES)
        tol.update(self.raw.get("tolerances", {}))
        tol.update({k: float(v) for k, v in self.overrides.get("tolerances", {}).items()})
        return tol

    @property
    def grid(self) -> dict:
        g = {"jmax": 2}
        g.update(self.raw["grid"])
        if "tmax" in self.overrides:
            g["tmax"] = float(self.overrides["tmax"])
        return g

    @property
    def T_max(self) -> float:
        return float(self.grid["tmax"])

    @property
    def oracle_settings(self) -> dict:
        o = {"resolution": 151, "stencil_radius": 10, "index_mesh": 200}
        o.update(self.raw.get("oracle", {}))
        return o

    @property
    def cut_settings(self) -> dict:
        c = {"starts": 1440 if self.system.flat else 64}
        c.update(self.raw.get("cut", {}))
        return c

    @property
    def side(self) -> float:
        s = self.raw.get("normal_side", 1)
        return {"inward": -1.0, "outward": 1.0, "positive": 1.0, "negative": -1.0}.get(s, s) * 1.0

    @cached_property
    def metric(self) -> metric_mod.MetricModel:
        m = self.raw["metric"]
        kind = m["kind"]
        if kind == "riemannian":
            mat = m["matrix"]
            fld, const = _field(mat, len(mat))
            return metric_mod.riemannian(fld, dim=len(mat), flat=const)
        if kind == "randers":
            n = len(m["drift"])
            a, ca = _field(m.get("matrix", np.eye(n).tolist()), n)
            b, cb = _field(m["drift"], n)
            return metric_mod.randers(a, b, dim=n, flat=ca and cb, seed=self.seed)
        if kind == "minkowski":
            n = int(m["dim"])
            f = _compile(m["norm"], _symbols("v", n), "v")
            return metric_mod.minkowski(f, n)
        n = int(m["ambient_dim"])
        level = _compile(m["level"], _symbols("x", n), "x")
        return metric_mod.embedded_hypersurface(level, n, float(m.get("value", 0.0)))

    @cached_property
    def submanifold(self) -> sub_mod.Submanifold:
        s = self.raw["submanifold"]
        kind = s["kind"]
        if kind == "circle":
            return sub_mod.circle(s.get("radius", 1.0), s.get("center", (0.0, 0.0)))
        if kind == "ellipse":
            if "a" not in s or "b" not in s:
                raise ScenarioError("ellipse needs semi-axes a and b")
            return sub_mod.ellipse(s["a"], s["b"], s.get("center", (0.0, 0.0)))
        if kind == "line":
            return sub_mod.line(s.get("point", (0.0, 0.0)), s.get("direction", (1.0, 0.0)), s.get("half_length", 5.0))
        if kind == "equator":
            return sub_mod.equator(s.get("radius", 1.0))
        if kind == "point":
            if "coords" not in s:
                raise ScenarioError("point submanifold needs coords")
            return sub_mod.point(s["coords"])
        if "embedding" not in s:
            raise ScenarioError("curve submanifold needs an embedding")
        fns = [_compile(e, _symbols("u", 1), "u") for e in s["embedding"]]

        def emb(u):
            u = jnp.atleast_1d(u)
            return jnp.stack([f(u) for f in fns])

        period = s.get("period")
        bounds = s.get("bounds", (0.0, period if period else 1.0))
        return sub_mod.curve(emb, len(fns), period=period, bounds=tuple(bounds))

    @cached_property
    def system(self) -> GeodesicSystem:
        return GeodesicSystem(self.metric)

    @cached_property
    def chart(self) -> NormalSphereChart:
        try:
            return NormalSphereChart(self.submanifold, self.system, side=self.side)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc

    def rays(self, count: int | None = None) -> np.ndarray:
        return ray_coords(self.chart, int(count or self.grid["rays"]))

    def cut_rays(self) -> np.ndarray:
        return self.rays(self.grid.get("cut_rays", self.grid["rays"]))

    def describe(self) -> dict:
        return {"name": self.name, "path": self.path, "sha256": self.digest}


def ray_coords(chart: NormalSphereChart, rays: int) -> np.ndarray:
    """Regular grid of chart coordinates with ``rays`` points per chart axis.

    Periodic axes start at their lower bound; bounded axes use cell midpoints,
    which keeps rays off chart poles and segment ends.
    """
    axes = []
    for i in range(chart.dim):
        per = chart.periods[i]
        if i < chart.m:
            lo, hi = chart.sub.bounds[i]
        else:
            lo, hi = 0.0, (per if per else np.pi)
        if per:
            axes.append(lo + per * np.arange(rays) / rays)
        else:
            axes.append(lo + (hi - lo) * (np.arange(rays) + 0.5) / rays)
    if not axes:
        return np.zeros((1, 0))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def load_scenario(source, overrides: dict | None = None) -> Scenario:
    """Load and validate a scenario from a path, a stock name or a dict."""
    if isinstance(source, dict):
        raw = source
        text = json.dumps(source, sort_keys=True).encode()
        path = ""
    else:
        p = Path(source)
        if not p.exists() and str(source) in stock_scenarios():
            p = stock_path(str(source))
        try:
            text = p.read_bytes()
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {source}: {exc}") from exc
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"scenario {p} is not valid YAML/JSON: {exc}") from exc
        path = str(p)
    try:
        jsonschema.validate(raw, scenario_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ScenarioError(f"scenario schema violation at {where}: {exc.message}") from exc
    return Scenario(raw, path, hashlib.sha256(text).hexdigest(), dict(overrides or {}))
