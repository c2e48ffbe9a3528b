"""Cycle-level fabric model.

Two interchangeable kernels execute the per-cycle step loop: a Cython
extension (``mavec.fabric._kernel``) built at install time when a C
toolchain is available, and a pure-Python transliteration
(``mavec.fabric._pykernel``) that is always importable.  Selection
happens here at import; ``KERNEL_BACKEND`` records which one is active
and the MAVEC_KERNEL environment variable ("python" or "cython")
forces the choice.
"""

import os

KERNEL_BACKEND = "python"
_forced = os.environ.get("MAVEC_KERNEL", "").strip().lower()

if _forced == "python":
    from . import _pykernel as kernel
elif _forced == "cython":
    from . import _kernel as kernel  # type: ignore[no-redef]

    KERNEL_BACKEND = "cython"
else:
    try:
        from . import _kernel as kernel  # type: ignore[no-redef]

        KERNEL_BACKEND = "cython"
    except ImportError:
        from . import _pykernel as kernel

__all__ = ["kernel", "KERNEL_BACKEND"]
