"""Pick the sampling kernels: compiled if importable, numpy otherwise.

Set ``RISKPVF_BACKEND=python`` to force the numpy kernels.
"""

import os

from . import _fallback

if os.environ.get("RISKPVF_BACKEND", "").lower() == "python":
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

if _compiled is not None:
    BACKEND = "cython"
    rollout_batch = _compiled.rollout_batch
    filter_batch = _compiled.filter_batch
else:
    BACKEND = "python"
    rollout_batch = _fallback.rollout_batch
    filter_batch = _fallback.filter_batch
