"""Hot numerical kernels, compiled when available.

Set ``PSRSPOOF_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
lstm_forward = _kernels_py.lstm_forward
lstm_backward = _kernels_py.lstm_backward
gelu = _kernels_py.gelu

if os.environ.get("PSRSPOOF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels_c
    except ImportError:
        pass
    else:
        lstm_forward = _kernels_c.lstm_forward
        lstm_backward = _kernels_c.lstm_backward
        gelu = _kernels_c.gelu
        BACKEND = "cython"
