"""Backend selection for the BART hot loops.

The compiled Cython module is used when importable; otherwise (or when
``CFIMPUTE_PURE_PYTHON=1``) the numpy fallback is used. Both expose
``sweep`` and ``predict`` with identical signatures and identical output.
"""
import importlib
import os

from . import _bartcore_py

BACKENDS = ("compiled", "python")


def load_backend(name):
    """Return the kernel module for ``name`` (``"compiled"`` or ``"python"``)."""
    if name == "python":
        return _bartcore_py
    if name == "compiled":
        return importlib.import_module("cfimpute._bartcore")
    raise ValueError(f"unknown kernel backend {name!r}; expected one of {BACKENDS}")


def _select():
    if os.environ.get("CFIMPUTE_PURE_PYTHON", "") not in ("", "0"):
        return "python", _bartcore_py
    try:
        return "compiled", load_backend("compiled")
    except ImportError:
        return "python", _bartcore_py


BACKEND, _impl = _select()
sweep = _impl.sweep
predict = _impl.predict
