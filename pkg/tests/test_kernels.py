import numpy as np
import pytest

from adaps import _kernels, _pykernels

try:
    from adaps import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def _mixture(rng, K, n):
    w = rng.uniform(0.1, 1.0, K)
    return rng.normal(0, 2, (K, n)), np.log(w / w.sum()), rng.uniform(0.05, 1.5, K)


@needs_ext
@pytest.mark.parametrize("K,n,B", [(1, 1, 1), (2, 1, 500), (5, 3, 64), (3, 16, 10)])
def test_compiled_matches_python(K, n, B, rng):
    means, logw, var = _mixture(rng, K, n)
    x = rng.normal(0, 3, (B, n))
    v = rng.standard_normal((B, n))
    for abar in (1e-4, 0.3, 0.999):
        e1, x1 = _pykernels.gmm_denoise(x, means, logw, var, abar)
        e2, x2 = _ckernels.gmm_denoise(x, means, logw, var, abar)
        np.testing.assert_allclose(e2, e1, rtol=1e-12, atol=1e-12 * np.abs(e1).max())
        np.testing.assert_allclose(x2, x1, rtol=1e-12, atol=1e-12 * np.abs(x1).max())
        j1 = _pykernels.gmm_x0_vjp(x, v, means, logw, var, abar)
        j2 = _ckernels.gmm_x0_vjp(x, v, means, logw, var, abar)
        np.testing.assert_allclose(j2, j1, rtol=1e-10, atol=1e-10 * np.abs(j1).max())


def test_backend_flag():
    assert _kernels.BACKEND in ("cython", "python")
    if _ckernels is not None and _kernels.BACKEND == "cython":
        assert _kernels.gmm_denoise is _ckernels.gmm_denoise


def test_python_fallback_selected_by_env():
    import os
    import subprocess
    import sys

    env = dict(os.environ, ADAPS_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import adaps; print(adaps.KERNEL_BACKEND)"], env=env, capture_output=True, text=True
    )
    assert out.stdout.strip() == "python"
