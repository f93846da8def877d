from __future__ import annotations

import os
from typing import Any, Mapping

_DTYPES = {
    "float32": "float32",
    "f32": "float32",
    "single": "float32",
    "float64": "float64",
    "f64": "float64",
    "double": "float64",
}

THREAD_ENV = "HYBRIDFIELD_THREADS"
BLAS_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def select_dtype(precision: str) -> Any:
    """Map a precision name to a numpy dtype (32-bit training, 64-bit verification)."""
    import numpy as np

    key = str(precision or "float32").strip().lower()
    name = _DTYPES.get(key)
    if name is None:
        raise ValueError(f"Unknown precision {precision!r}; expected float32 or float64")
    return np.dtype(name)


def select_thread_count(
    *,
    flag: int | None,
    env: Mapping[str, str] | None = None,
    cpu_count: int | None = None,
) -> int:
    """Resolve the kernel thread cap: explicit flag, then HYBRIDFIELD_THREADS, then the CPU count."""
    source = os.environ if env is None else env
    if flag is not None and int(flag) > 0:
        return int(flag)
    raw = str(source.get(THREAD_ENV, "") or "").strip()
    if raw:
        try:
            value = int(raw)
        except ValueError:
            value = 0
        if value > 0:
            return value
    cpus = cpu_count if cpu_count is not None else (os.cpu_count() or 1)
    return max(1, int(cpus))


def apply_thread_cap(threads: int, env: dict[str, str] | None = None) -> dict[str, str]:
    """Export the thread cap to the BLAS runtimes; only effective before numpy is imported."""
    target = os.environ if env is None else env
    value = str(max(1, int(threads)))
    for name in BLAS_THREAD_VARS:
        target[name] = value
    return {name: value for name in BLAS_THREAD_VARS}
