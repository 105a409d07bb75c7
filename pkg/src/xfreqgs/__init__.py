"""Cross-frequency wireless radiation field reconstruction via differentiable
Gaussian splatting, with a physics-based synthetic-data oracle and full
train/evaluate tooling.

Heavy submodules import numpy; keep this package root import-light so the
CLI can pin BLAS thread counts before numeric code loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "core",
    "physics",
    "scene",
    "network",
    "renderer",
    "training",
    "metrics",
    "experiments",
    "storage",
    "errors",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
