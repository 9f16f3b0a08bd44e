"""Backend selection for the hot loops.

The compiled extension is preferred; set ``UMTREE_PURE_PYTHON=1`` to force the
numpy fallback. ``BACKEND`` names the active choice.
"""

import os

from . import _fallback

if os.environ.get("UMTREE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

apply_events = _impl.apply_events
apply_events_coupled = _impl.apply_events_coupled
exp_functional_path = _impl.exp_functional_path
lineage_drop_times = _impl.lineage_drop_times
subtree_lengths = _impl.subtree_lengths

BACKENDS = {"python": _fallback}
try:
    from . import _kernels

    BACKENDS["cython"] = _kernels
except ImportError:
    pass
