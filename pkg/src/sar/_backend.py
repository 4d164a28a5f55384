"""Selects the chain-inference kernels at import time.

The compiled extension is preferred; the NumPy implementation is the
drop-in fallback. Set SAR_PURE_PYTHON=1 to force the fallback (used by the
benchmark and handy when debugging kernel-level issues).
"""

from __future__ import annotations

import os

if os.environ.get("SAR_PURE_PYTHON"):
    from . import _chain_numpy as _impl
else:
    try:
        from . import _chain_fast as _impl  # type: ignore[no-redef]
    except ImportError:
        from . import _chain_numpy as _impl  # type: ignore[no-redef]

BACKEND_NAME = "compiled" if _impl.__name__.endswith("_chain_fast") else "numpy"

forward_backward = _impl.forward_backward
viterbi_path = _impl.viterbi_path
log_partition = _impl.log_partition
