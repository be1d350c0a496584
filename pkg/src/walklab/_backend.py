"""Pick the compiled enumeration core when importable, else the pure-Python one.

Set ``WALKLAB_PURE_PYTHON=1`` to force the fallback.
"""
import os

if os.environ.get("WALKLAB_PURE_PYTHON") == "1":
    from . import _pycore as kernels

    BACKEND = "python"
else:
    try:
        from . import _core as kernels

        BACKEND = "cython"
    except ImportError:
        from . import _pycore as kernels

        BACKEND = "python"

__all__ = ["kernels", "BACKEND"]
