"""Backend selection for the sequential matrix-product scans.

The compiled extension is used when it was built; set
``EVOCONTROL_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _kernels_py

if os.environ.get("EVOCONTROL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

chain_products = _impl.chain_products
pairwise_products = _impl.pairwise_products

__all__ = ["BACKEND", "chain_products", "pairwise_products"]
