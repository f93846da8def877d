"""Hybrid radiance fields: a static Eulerian feature grid plus moving appearance particles.

Attributes resolve lazily so the CLI can cap BLAS threads before numpy is imported.
"""

from __future__ import annotations

import importlib
from typing import Any

__version__ = "0.1.0"

_EXPORTS = {
    "BoundingBox": "types",
    "CameraPose": "types",
    "Frame": "types",
    "LossRecord": "types",
    "LifecycleEvent": "types",
    "RunManifest": "types",
    "VelocityField": "types",
    "TrainConfig": "config",
    "FieldModel": "model_interface",
    "FieldSnapshot": "model_interface",
    "ModelRegistry": "model_registry",
    "default_registry": "model_registry",
    "select_dtype": "selector",
    "select_thread_count": "selector",
    "Trainer": "trainer",
    "load_checkpoint": "trainer",
    "HybridFieldError": "errors",
    "InputError": "errors",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str) -> Any:
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module 'hybridfield' has no attribute {name!r}")
    return getattr(importlib.import_module(f".{module}", __name__), name)
