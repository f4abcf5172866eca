"""Shared jax import with 64-bit floats and a persistent compilation cache.

Compiled kernels are cached under ``$FINFOCAL_JAX_CACHE`` (default
``~/.cache/finfocal/jax``); set the variable to an empty string to disable.
"""

from __future__ import annotations

import os
from pathlib import Path

import jax

jax.config.update("jax_enable_x64", True)

_cache = os.environ.get("FINFOCAL_JAX_CACHE", str(Path.home() / ".cache" / "finfocal" / "jax"))
if _cache:
    try:
        Path(_cache).mkdir(parents=True, exist_ok=True)
        jax.config.update("jax_compilation_cache_dir", _cache)
        jax.config.update("jax_persistent_cache_min_compile_time_secs", 0.05)
    except OSError:
        pass

import jax.numpy as jnp  # noqa: E402

__all__ = ["jax", "jnp"]
