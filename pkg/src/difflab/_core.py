"""Select the compiled kernel backend when available.

Set ``DIFFLAB_PURE=1`` to force the Python fallback.
"""

import os

from . import _fallback

BACKEND = "python"
thin_walk = _fallback.thin_walk
sample_rows = _fallback.sample_rows

if os.environ.get("DIFFLAB_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "compiled"
        thin_walk = _kernels.thin_walk
        sample_rows = _kernels.sample_rows
