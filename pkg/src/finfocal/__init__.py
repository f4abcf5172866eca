"""Focal and cut loci of submanifolds in Finsler manifolds, by shooting along normal geodesics."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import FinfocalError, NumericFailure, ScenarioError  # noqa: E402

__all__ = ["__version__", "FinfocalError", "NumericFailure", "ScenarioError"]
