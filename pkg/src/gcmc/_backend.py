"""Select the compiled kernels when available, else the numpy fallback.

Set GCMC_PURE_PYTHON=1 to force the fallback (used by the benchmark and the
backend parity tests).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("GCMC_PURE_PYTHON"):
    _impl = _kernels_py
    COMPILED = False
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        _impl = _kernels_py
        COMPILED = False

BACKEND = "compiled" if COMPILED else "python"

gaussian_gibbs_chain = _impl.gaussian_gibbs_chain
rwm_quad_chains = _impl.rwm_quad_chains
