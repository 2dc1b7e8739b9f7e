"""Pure-numpy GMM kernels; reference implementation and import fallback.

Each component ``N(mu_k, s2_k I)`` of the prior diffuses to
``N(sqrt(abar) mu_k, v_k I)`` with ``v_k = abar s2_k + 1 - abar``.
"""

import numpy as np


def _terms(x, means, log_weights, variances, abar):
    n = x.shape[-1]
    v = abar * variances + (1.0 - abar)
    m = np.sqrt(abar) * means
    diff = m[None, :, :] - x[:, None, :]
    logp = log_weights - 0.5 * n * np.log(2 * np.pi * v) - 0.5 * np.einsum("bki,bki->bk", diff, diff) / v
    logp -= logp.max(axis=1, keepdims=True)
    w = np.exp(logp)
    w /= w.sum(axis=1, keepdims=True)
    u = diff / v[None, :, None]
    return w, u, v


def gmm_denoise(x, means, log_weights, variances, abar):
    """Return ``(eps, x0_hat)`` for a batch ``x`` of shape ``(B, n)``."""
    w, u, _ = _terms(x, means, log_weights, variances, abar)
    score = np.einsum("bk,bki->bi", w, u)
    eps = -np.sqrt(1.0 - abar) * score
    x0 = (x + (1.0 - abar) * score) / np.sqrt(abar)
    return eps, x0


def gmm_x0_vjp(x, v, means, log_weights, variances, abar):
    """``J^T v`` with ``J = d x0_hat / d x``; ``J`` is symmetric."""
    w, u, var = _terms(x, means, log_weights, variances, abar)
    s = np.einsum("bk,bki->bi", w, u)
    p = np.einsum("bki,bi->bk", u, v)
    sv = np.einsum("bi,bi->b", s, v)
    c = w @ (1.0 / var)
    hv = -c[:, None] * v + np.einsum("bk,bki->bi", w * p, u) - s * sv[:, None]
    return (v + (1.0 - abar) * hv) / np.sqrt(abar)


def gmm_logpdf(x, means, log_weights, variances, abar):
    n = x.shape[-1]
    v = abar * variances + (1.0 - abar)
    m = np.sqrt(abar) * means
    diff = m[None, :, :] - x[:, None, :]
    logp = log_weights - 0.5 * n * np.log(2 * np.pi * v) - 0.5 * np.einsum("bki,bki->bk", diff, diff) / v
    top = logp.max(axis=1)
    return top + np.log(np.exp(logp - top[:, None]).sum(axis=1))
