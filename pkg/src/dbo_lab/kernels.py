"""Kernel backend selection.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is loaded. Set ``DBO_LAB_BACKEND=python`` to force the fallback.
"""
import os

from . import _pykernels

python_kernels = _pykernels

try:
    from . import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

if compiled_kernels is not None and os.environ.get("DBO_LAB_BACKEND", "").lower() != "python":
    active = compiled_kernels
else:
    active = _pykernels

BACKEND = active.NAME


def available():
    """Names of the backends importable in this environment."""
    return ["python"] + (["cython"] if compiled_kernels is not None else [])


def get(name=None):
    if name is None:
        return active
    if name == "python":
        return _pykernels
    if name == "cython":
        if compiled_kernels is None:
            raise ImportError("compiled kernels are not built")
        return compiled_kernels
    raise ValueError(f"unknown backend {name!r}")
