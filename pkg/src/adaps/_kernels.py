"""Select the compiled GMM kernels when available, else the numpy versions.

Set ``ADAPS_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
gmm_denoise = _pykernels.gmm_denoise
gmm_x0_vjp = _pykernels.gmm_x0_vjp
gmm_logpdf = _pykernels.gmm_logpdf

if os.environ.get("ADAPS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        gmm_denoise = _ckernels.gmm_denoise
        gmm_x0_vjp = _ckernels.gmm_x0_vjp
        BACKEND = "cython"

__all__ = ["BACKEND", "gmm_denoise", "gmm_x0_vjp", "gmm_logpdf"]
