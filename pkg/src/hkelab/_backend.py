"""Select the compiled kernels when available, the numpy twins otherwise."""
from __future__ import annotations

import numpy as np

from . import _core_py

try:
    from . import _core as _compiled
except ImportError:  # extension not built
    _compiled = None

_KERNELS = ("farthest_point_order", "pair_distortion", "assignment_costs",
            "local_search", "triangle_violation")


class _Dispatch:
    def __init__(self):
        self.name = ""
        self.set("compiled" if _compiled is not None else "python")

    def set(self, name: str) -> None:
        if name == "compiled":
            if _compiled is None:
                raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
            mod = _compiled
        elif name == "python":
            mod = _core_py
        else:
            raise ValueError(f"unknown backend {name!r}")
        for k in _KERNELS:
            setattr(self, k, getattr(mod, k))
        self.name = name


core = _Dispatch()


def available_backends() -> list[str]:
    """Names of the kernel backends usable in this interpreter."""
    return ["compiled", "python"] if _compiled is not None else ["python"]


def set_backend(name: str) -> None:
    """Switch kernels to ``"compiled"`` or ``"python"``."""
    core.set(name)


def get_backend() -> str:
    """Name of the active kernel backend."""
    return core.name


def as_index(a) -> np.ndarray:
    """Contiguous int64 copy suitable for either backend."""
    return np.ascontiguousarray(a, dtype=np.int64)


def as_matrix(a) -> np.ndarray:
    """C-contiguous float64 view/copy suitable for either backend."""
    return np.ascontiguousarray(a, dtype=np.float64)
