"""Kernel backend selection.

The hot numeric loops (batched model forwards/backwards, prefix-mask loss
scans, pairwise distances) exist twice: numba-compiled in _kernels_nb and
pure numpy in _kernels_np. The AMRC_BACKEND environment variable picks one:

    AMRC_BACKEND=numba   require the compiled kernels (error if unavailable)
    AMRC_BACKEND=numpy   force the pure-numpy path
    unset / auto         numba when importable, numpy otherwise

benchmarks/bench_backends.py times the two side by side.
"""

from __future__ import annotations

import os

_choice = os.environ.get("AMRC_BACKEND", "auto").strip().lower()
if _choice not in {"auto", "numba", "numpy"}:
    raise RuntimeError(
        f"AMRC_BACKEND must be one of auto|numba|numpy, got {_choice!r}"
    )

if _choice == "numpy":
    from . import _kernels_np as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _kernels_nb as _impl

        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        from . import _kernels_np as _impl

        BACKEND = "numpy"

mse_rows = _impl.mse_rows
linear_forward = _impl.linear_forward
linear_backward = _impl.linear_backward
mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
masked_losses_linear = _impl.masked_losses_linear
masked_losses_mlp = _impl.masked_losses_mlp
pairwise_sqdist = _impl.pairwise_sqdist
