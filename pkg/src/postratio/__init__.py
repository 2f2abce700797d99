"""Transfer learning via class-posterior ratio estimation.

Submodules are imported lazily so that the CLI can pin BLAS threading
before numpy is first loaded (required for bit-stable experiment output).
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "data",
    "knn",
    "classifiers",
    "ratio",
    "composite",
    "baselines",
    "experiments",
    "figures",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
