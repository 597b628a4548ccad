"""Pick the kernel implementation once, at import time.

The compiled extension is used when it imports cleanly. Setting the
environment variable ``CUBETHIN_BACKEND=python`` forces the pure-Python
kernels; ``CUBETHIN_BACKEND=compiled`` makes a missing extension an error.
"""

import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

_choice = os.environ.get("CUBETHIN_BACKEND", "auto").lower()

if _choice == "python":
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels
    except ImportError as exc:
        if _choice == "compiled":
            raise
        logger.info("compiled kernels unavailable (%s); using pure Python", exc)
        kernels = _kernels_py

NAME = "python" if kernels is _kernels_py else "compiled"


def get(name=None):
    """Return a kernel module by name (``"python"``, ``"compiled"``) or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
