"""Select the sweep implementation at import time.

The compiled extension is used when it was built; ``GIBBSLAB_BACKEND=python``
forces the pure-Python twin.
"""
import os

from . import _sweep_py

_forced = os.environ.get("GIBBSLAB_BACKEND", "").strip().lower()

if _forced == "python":
    sweep = _sweep_py
else:
    try:
        from . import _sweep as sweep
    except ImportError:
        if _forced == "cython":
            raise
        sweep = _sweep_py

BACKEND = sweep.BACKEND
run_sweeps = sweep.run_sweeps
