"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy/scipy
fallback. Set ``HUGESTURE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("HUGESTURE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        compiled_backend = None

_impl = compiled_backend or python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"

forward_scaled = _impl.forward_scaled
backward_scaled = _impl.backward_scaled
estep = _impl.estep
label_regions = _impl.label_regions
region_stats = _impl.region_stats
