"""Hot numeric kernels with a compiled and a pure-numpy backend.

The compiled Cython extension is preferred when it imported cleanly;
otherwise the numpy fallback is used.  The environment variable
``SPSD_VIT_BACKEND`` (``"cython"`` or ``"python"``) forces a choice at
import time, and :func:`use_backend` switches at runtime (used by the
benchmark).  Call sites must access kernels through this module object
(``kernels.softmax_forward(...)``) so rebinding takes effect.

Kernel contract: arrays are C-contiguous, float32 or float64, and every
kernel preserves the input dtype.  ``layer_norm_*`` and ``softmax_*``
operate row-wise on 2-D arrays; ``gelu_*`` is elementwise on any shape;
``adamw_update`` mutates 1-D parameter/moment views in place.
"""

import os

from ..errors import ConfigError
from . import _pykernels

try:
    from . import _cykernels
except ImportError:
    _cykernels = None

_FUNCTIONS = (
    "layer_norm_forward",
    "layer_norm_backward",
    "softmax_forward",
    "softmax_backward",
    "gelu_forward",
    "gelu_backward",
    "adamw_update",
)


def available_backends():
    """Names of the backends that can be selected, preferred first."""
    names = []
    if _cykernels is not None:
        names.append("cython")
    names.append("python")
    return names


def get_backend():
    """Name of the backend currently bound to the module-level kernels."""
    return _active


def use_backend(name):
    """Bind all kernel functions to the named backend.

    Returns the previously active backend name so callers can restore it.
    """
    if name == "cython":
        if _cykernels is None:
            raise ConfigError(
                "kernel backend 'cython' requested but the compiled "
                "extension is not available"
            )
        module = _cykernels
    elif name == "python":
        module = _pykernels
    else:
        raise ConfigError(
            f"unknown kernel backend {name!r}; expected 'cython' or 'python'"
        )
    global _active
    previous = _active
    for fn in _FUNCTIONS:
        globals()[fn] = getattr(module, fn)
    _active = name
    return previous


_active = None
use_backend(os.environ.get("SPSD_VIT_BACKEND") or available_backends()[0])
