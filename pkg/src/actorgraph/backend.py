"""Kernel backend selection.

The package ships two interchangeable kernel sets: a compiled extension
(``actorgraph._native``, built from Cython) and a pure numpy fallback
(``actorgraph._kernels_py``). By default the compiled module is used when its
import succeeds. Set ``ARG_BACKEND=python`` or ``ARG_BACKEND=native`` to force
one side; ``native`` raises if the extension is unavailable.
"""

import os

from .errors import ConfigError


def _select():
    choice = os.environ.get("ARG_BACKEND", "auto").lower()
    if choice not in ("auto", "native", "python"):
        raise ConfigError(f"ARG_BACKEND must be auto, native or python, got {choice!r}")
    if choice in ("auto", "native"):
        try:
            from . import _native

            return _native, "native"
        except ImportError:
            if choice == "native":
                raise ConfigError("ARG_BACKEND=native but the compiled extension is not built")
    from . import _kernels_py

    return _kernels_py, "python"


kernels, backend_name = _select()
