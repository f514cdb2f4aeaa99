"""Pick the compiled kernels when available, else the numpy fallback.

Set ``NACL_BACKEND=python`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
patch_aggregate = _fallback.patch_aggregate
im2col = _fallback.im2col
col2im = _fallback.col2im

if os.environ.get("NACL_BACKEND", "").lower() != "python":
    try:
        from . import _ext
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        patch_aggregate = _ext.patch_aggregate
        im2col = _ext.im2col
        col2im = _ext.col2im
