"""Heat kernel estimates and convergence diagnostics on fractal graph models."""
from ._backend import available_backends, get_backend, set_backend

__version__ = "0.1.0"

__all__ = ["available_backends", "get_backend", "set_backend", "__version__"]
