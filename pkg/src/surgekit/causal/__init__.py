"""Honest causal forest with cross-fitting and little-bags intervals."""

from .forest import (
    AteResult,
    CausalData,
    CausalSample,
    ForestConfig,
    ForestModel,
    LocalEffects,
    ate,
    dumps_forest,
    fit,
    load_forest,
    loads_forest,
    local_effect,
    save_forest,
)
from .kernels import BACKEND

__all__ = [
    "AteResult",
    "BACKEND",
    "CausalData",
    "CausalSample",
    "ForestConfig",
    "ForestModel",
    "LocalEffects",
    "ate",
    "dumps_forest",
    "fit",
    "load_forest",
    "loads_forest",
    "local_effect",
    "save_forest",
]
