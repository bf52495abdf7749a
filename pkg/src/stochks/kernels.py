"""Backend selection for the stepping kernels.

The compiled extension is used when it imports; ``STOCHKS_PURE_PYTHON=1``
forces the numpy implementation.  Both expose the same functions.
"""
import os

from . import _pykernels

python = _pykernels

try:
    from . import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("STOCHKS_PURE_PYTHON") != "1":
    active = compiled
else:
    active = _pykernels

BACKENDS = {"python": _pykernels}
if compiled is not None:
    BACKENDS["compiled"] = compiled


def get(name=None):
    """Kernel module by name, or the active one."""
    if name is None:
        return active
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; have {sorted(BACKENDS)}") from None
