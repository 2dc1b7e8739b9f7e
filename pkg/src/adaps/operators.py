"""Linear measurement operators with adjoints and regularized gram solves.

Every operator acts on the last axis of its input, so a batch of chains with
shape ``(B, n)`` maps to ``(B, m)``. Image operators take flattened signals and
reshape internally using their ``shape``. Convolutions use periodic
boundaries, which makes blur operators exactly circulant.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError, SingularityError

__all__ = [
    "LinearOperator",
    "IdentityOperator",
    "DenseOperator",
    "CirculantOperator",
    "SubsampledCirculantOperator",
    "ComposedOperator",
    "MatrixFreeOperator",
    "Measurement",
    "apply",
    "adjoint",
    "gram_solve",
    "cg_gram_solve",
    "make_operator",
    "synthesize",
    "gaussian_kernel",
    "bicubic_kernel",
    "motion_kernel",
    "read_kernel_file",
    "write_kernel_file",
]

CG_MAXITER = 500
CG_RTOL = 1e-10
_SINGULAR_TOL = 1e-13


class LinearOperator:
    """Base class. Subclasses implement ``_apply``, ``_adjoint`` and optionally ``_gram_solve``."""

    backend = "CG-generic"

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)

    def __repr__(self):
        return f"{type(self).__name__}(in_dim={self.in_dim}, out_dim={self.out_dim}, backend={self.backend!r})"

    @staticmethod
    def _check(arr, dim, what):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 0 or arr.shape[-1] != dim:
            raise ConfigurationError(f"{what}: expected last dimension {dim}, got shape {arr.shape}")
        return arr

    def apply(self, x):
        return self._apply(self._check(x, self.in_dim, "apply"))

    def adjoint(self, v):
        return self._adjoint(self._check(v, self.out_dim, "adjoint"))

    def gram_matvec(self, lam, v):
        """``(A A^T + lam I) v``."""
        return self._apply(self._adjoint(v)) + lam * v

    def gram_solve(self, lam, v):
        """``(A A^T + lam I)^{-1} v``."""
        v = self._check(v, self.out_dim, "gram_solve")
        if lam < 0:
            raise ConfigurationError(f"regularizer must be >= 0, got {lam}")
        return self._gram_solve(float(lam), v)

    def _gram_solve(self, lam, v):
        if lam == 0.0:
            raise SingularityError(f"{self.backend} backend cannot certify a solve with lambda = 0")
        return cg_gram_solve(self, lam, v)

    def to_dense(self) -> np.ndarray:
        return self._apply(np.eye(self.in_dim)).T.copy()

    __matmul__ = apply


def apply(op: LinearOperator, x):
    return op.apply(x)


def adjoint(op: LinearOperator, v):
    return op.adjoint(v)


def gram_solve(op: LinearOperator, lam, v):
    return op.gram_solve(lam, v)


def cg_gram_solve(op: LinearOperator, lam, v, maxiter: int = CG_MAXITER, rtol: float = CG_RTOL):
    """Conjugate gradients on ``A A^T + lam I``, one independent system per row.

    Rows that reach the tolerance are frozen, so the result for a row does not
    depend on what else is in the batch.
    """
    v = np.asarray(v, dtype=np.float64)
    m = op.out_dim
    V = v.reshape(-1, m)
    X = np.zeros_like(V)
    R = V.copy()
    P = R.copy()
    rs = np.einsum("ij,ij->i", R, R)
    thresh = (rtol**2) * rs.copy()
    active = rs > thresh
    it = 0
    while np.any(active) and it < maxiter:
        idx = np.flatnonzero(active)
        Pa = P[idx]
        Ap = op.gram_matvec(lam, Pa)
        pAp = np.einsum("ij,ij->i", Pa, Ap)
        if np.any(pAp <= 0):
            raise NumericalError("CG encountered a non-positive curvature direction", iteration=it)
        alpha = rs[idx] / pAp
        X[idx] += alpha[:, None] * Pa
        R[idx] -= alpha[:, None] * Ap
        rs_new = np.einsum("ij,ij->i", R[idx], R[idx])
        beta = rs_new / rs[idx]
        P[idx] = R[idx] + beta[:, None] * Pa
        rs[idx] = rs_new
        active[idx] = rs_new > thresh[idx]
        it += 1
    if np.any(active):
        rel = np.sqrt(rs[active] / np.maximum(thresh[active] / rtol**2, 1e-300))
        raise NumericalError(
            f"CG did not converge in {maxiter} iterations (relative residual {rel.max():.3e})",
            residual=float(rel.max()),
            iteration=it,
        )
    return X.reshape(v.shape)


class IdentityOperator(LinearOperator):
    backend = "identity"

    def __init__(self, n: int):
        super().__init__(n, n)

    def _apply(self, x):
        return x.copy()

    def _adjoint(self, v):
        return v.copy()

    def _gram_solve(self, lam, v):
        return v / (1.0 + lam)


class DenseOperator(LinearOperator):
    """Explicit matrix with an SVD-backed gram solve."""

    backend = "dense-SVD"

    def __init__(self, matrix):
        A = np.array(matrix, dtype=np.float64)
        if A.ndim != 2 or A.size == 0:
            raise ConfigurationError(f"dense operator needs a non-empty 2-D matrix, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ConfigurationError("dense operator matrix has non-finite entries")
        super().__init__(A.shape[1], A.shape[0])
        A.setflags(write=False)
        self.matrix = A
        U, s, _ = np.linalg.svd(A, full_matrices=True)
        s_full = np.zeros(A.shape[0])
        s_full[: s.size] = s
        self._U = U
        self._s2 = s_full**2

    def _apply(self, x):
        return x @ self.matrix.T

    def _adjoint(self, v):
        return v @ self.matrix

    def _gram_solve(self, lam, v):
        denom = self._s2 + lam
        if lam == 0.0 and denom.min() <= _SINGULAR_TOL * max(denom.max(), 1.0):
            raise SingularityError("A A^T is singular (A is not full row rank) and lambda = 0")
        return ((v @ self._U) / denom) @ self._U.T

    def to_dense(self):
        return self.matrix.copy()


def _embed_kernel(kernel, shape, origin):
    """Periodic embedding of ``kernel`` into ``shape`` with ``origin`` at index 0."""
    out = np.zeros(shape)
    grids = np.meshgrid(*[np.arange(k) for k in kernel.shape], indexing="ij")
    idx = tuple((g - o) % s for g, o, s in zip(grids, origin, shape))
    np.add.at(out, idx, kernel)
    return out


class CirculantOperator(LinearOperator):
    """Periodic convolution ``y[i] = sum_j k[j] x[i - j + origin]`` on a 1-D or 2-D grid."""

    backend = "circulant-FFT"

    def __init__(self, kernel, shape: Sequence[int], origin: Sequence[int] | None = None):
        kernel = np.array(kernel, dtype=np.float64)
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if kernel.ndim != len(shape) or len(shape) not in (1, 2):
            raise ConfigurationError(f"kernel of ndim {kernel.ndim} does not match grid shape {shape}")
        if origin is None:
            origin = (0,) * kernel.ndim
        origin = tuple(int(o) for o in origin)
        n = int(np.prod(shape))
        super().__init__(n, n)
        self.kernel = kernel
        self.shape = shape
        self.origin = origin
        self._axes = tuple(range(-len(shape), 0))
        self.transfer = np.fft.fftn(_embed_kernel(kernel, shape, origin))
        self._power = np.abs(self.transfer) ** 2

    def _grid(self, x):
        return x.reshape(x.shape[:-1] + self.shape)

    def _filter(self, x, H):
        X = np.fft.fftn(self._grid(x), axes=self._axes)
        out = np.fft.ifftn(X * H, axes=self._axes).real
        return out.reshape(x.shape)

    def _apply(self, x):
        return self._filter(x, self.transfer)

    def _adjoint(self, v):
        return self._filter(v, np.conj(self.transfer))

    def _gram_solve(self, lam, v):
        denom = self._power + lam
        if lam == 0.0 and denom.min() <= _SINGULAR_TOL * max(denom.max(), 1.0):
            raise SingularityError("circulant operator has a zero frequency response and lambda = 0")
        return self._filter(v, 1.0 / denom)


class SubsampledCirculantOperator(LinearOperator):
    """Circulant filter followed by stride-``factor`` subsampling on every axis.

    ``gram="cg"`` solves the gram system with conjugate gradients. ``gram="fft"``
    uses the exact polyphase form: ``S C S^T`` is circulant on the coarse grid
    with kernel equal to the subsampled autocorrelation of the filter.
    """

    backend = "subsampled-circulant"

    def __init__(self, blur: CirculantOperator, factor: int, gram: str = "cg"):
        factor = int(factor)
        if factor < 1 or any(s % factor for s in blur.shape):
            raise ConfigurationError(f"factor {factor} must divide grid shape {blur.shape}")
        if gram not in ("cg", "fft"):
            raise ConfigurationError(f"gram must be 'cg' or 'fft', got {gram!r}")
        self.blur = blur
        self.factor = factor
        self.gram = gram
        self.shape = blur.shape
        self.low_shape = tuple(s // factor for s in blur.shape)
        super().__init__(blur.in_dim, int(np.prod(self.low_shape)))
        autocorr = np.fft.ifftn(blur._power).real
        sl = tuple(slice(None, None, factor) for _ in self.shape)
        self._low_power = np.fft.fftn(autocorr[sl]).real
        self._low_axes = tuple(range(-len(self.shape), 0))

    def _sub(self, x):
        g = x.reshape(x.shape[:-1] + self.shape)
        sl = (Ellipsis,) + tuple(slice(None, None, self.factor) for _ in self.shape)
        return g[sl].reshape(x.shape[:-1] + (self.out_dim,))

    def _upsample(self, v):
        g = np.zeros(v.shape[:-1] + self.shape)
        sl = (Ellipsis,) + tuple(slice(None, None, self.factor) for _ in self.shape)
        g[sl] = v.reshape(v.shape[:-1] + self.low_shape)
        return g.reshape(v.shape[:-1] + (self.in_dim,))

    def _apply(self, x):
        return self._sub(self.blur._apply(x))

    def _adjoint(self, v):
        return self.blur._adjoint(self._upsample(v))

    def _gram_solve(self, lam, v):
        if self.gram == "cg":
            return super()._gram_solve(lam, v)
        denom = self._low_power + lam
        if lam == 0.0 and denom.min() <= _SINGULAR_TOL * max(denom.max(), 1.0):
            raise SingularityError("subsampled operator is not full row rank and lambda = 0")
        g = v.reshape(v.shape[:-1] + self.low_shape)
        G = np.fft.fftn(g, axes=self._low_axes)
        out = np.fft.ifftn(G / denom, axes=self._low_axes).real
        return out.reshape(v.shape)


class ComposedOperator(LinearOperator):
    """``outer(inner(x))``; gram solves fall back to CG."""

    backend = "composed"

    def __init__(self, outer: LinearOperator, inner: LinearOperator):
        if outer.in_dim != inner.out_dim:
            raise ConfigurationError(f"cannot compose: inner out_dim {inner.out_dim} != outer in_dim {outer.in_dim}")
        super().__init__(inner.in_dim, outer.out_dim)
        self.outer = outer
        self.inner = inner

    def _apply(self, x):
        return self.outer._apply(self.inner._apply(x))

    def _adjoint(self, v):
        return self.inner._adjoint(self.outer._adjoint(v))


class MatrixFreeOperator(LinearOperator):
    """Operator given by a pair of callables acting on the last axis."""

    backend = "CG-generic"

    def __init__(self, matvec: Callable, rmatvec: Callable, in_dim: int, out_dim: int):
        super().__init__(in_dim, out_dim)
        self._matvec = matvec
        self._rmatvec = rmatvec

    def _apply(self, x):
        return np.asarray(self._matvec(x), dtype=np.float64)

    def _adjoint(self, v):
        return np.asarray(self._rmatvec(v), dtype=np.float64)


@dataclass(frozen=True)
class Measurement:
    y: np.ndarray
    sigma_y: float

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if not np.all(np.isfinite(y)):
            raise ConfigurationError("measurement has non-finite entries")
        if self.sigma_y < 0:
            raise ConfigurationError(f"sigma_y must be >= 0, got {self.sigma_y}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma_y", float(self.sigma_y))


def synthesize(op, x0, sigma_y: float, rng_seed) -> Measurement:
    """``y = A x0 + sigma_y z`` with ``z`` drawn from a generator seeded by ``rng_seed``."""
    if sigma_y < 0:
        raise ConfigurationError(f"sigma_y must be >= 0, got {sigma_y}")
    clean = np.asarray(op.apply(x0), dtype=np.float64)
    if sigma_y == 0:
        return Measurement(clean, 0.0)
    rng = np.random.default_rng(rng_seed)
    return Measurement(clean + sigma_y * rng.standard_normal(clean.shape), sigma_y)


# -- kernels ---------------------------------------------------------------


def gaussian_kernel(size: int = 5, std: float = 10.0) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd and positive, got {size}")
    if std <= 0:
        raise ConfigurationError(f"std must be positive, got {std}")
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2.0 * std**2))
    k = np.outer(g, g)
    return k / k.sum()


def _keys_cubic(x, a=-0.5):
    x = np.abs(x)
    out = np.zeros_like(x)
    m1 = x <= 1
    m2 = (x > 1) & (x < 2)
    out[m1] = (a + 2) * x[m1] ** 3 - (a + 3) * x[m1] ** 2 + 1
    out[m2] = a * x[m2] ** 3 - 5 * a * x[m2] ** 2 + 8 * a * x[m2] - 4 * a
    return out


def bicubic_kernel(factor: int, ndim: int = 2) -> np.ndarray:
    """Keys (a = -0.5) anti-aliasing filter for ``factor``-fold downsampling, unit sum."""
    if factor < 1:
        raise ConfigurationError(f"factor must be >= 1, got {factor}")
    half = 2 * factor - 1
    w = _keys_cubic(np.arange(-half, half + 1) / factor)
    w /= w.sum()
    k = w
    for _ in range(ndim - 1):
        k = np.multiply.outer(k, w)
    return k / k.sum()


def motion_kernel(size: int = 9, length: float = 7.0, angle: float = 0.0) -> np.ndarray:
    """Linear-trajectory motion blur rasterized with bilinear weights, unit sum."""
    if size < 1 or size % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd and positive, got {size}")
    if length <= 0 or length > size:
        raise ConfigurationError(f"length must lie in (0, size], got {length}")
    c = size // 2
    ts = np.linspace(-length / 2, length / 2, int(4 * np.ceil(length)) + 1)
    rows = c - ts * np.sin(np.deg2rad(angle))
    cols = c + ts * np.cos(np.deg2rad(angle))
    k = np.zeros((size, size))
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    fr = rows - r0
    fc = cols - c0
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            rr = np.clip(r0 + dr, 0, size - 1)
            cc = np.clip(c0 + dc, 0, size - 1)
            np.add.at(k, (rr, cc), wr * wc)
    return k / k.sum()


_HEADERS = {"kernel": "ADAPS-KERNEL v1", "matrix": "ADAPS-MATRIX v1"}


def write_kernel_file(path, array, kind: str = "kernel") -> None:
    arr = np.atleast_2d(np.asarray(array, dtype=np.float64))
    if arr.ndim != 2:
        raise ConfigurationError("kernel and matrix files hold 2-D arrays")
    lines = [_HEADERS[kind], f"{arr.shape[0]} {arr.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in arr]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kernel_file(path, kind: str = "kernel") -> np.ndarray:
    text = Path(path).read_text().split("\n")
    if not text or text[0].strip() != _HEADERS[kind]:
        raise ConfigurationError(f"{path}: missing header {_HEADERS[kind]!r}")
    try:
        rows, cols = (int(t) for t in text[1].split())
        values = np.array(" ".join(text[2:]).split(), dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise ConfigurationError(f"{path}: malformed {kind} file") from exc
    if values.size != rows * cols:
        raise ConfigurationError(f"{path}: expected {rows * cols} coefficients, found {values.size}")
    return values.reshape(rows, cols)


def _normalized(kernel):
    kernel = np.asarray(kernel, dtype=np.float64)
    if any(s % 2 == 0 for s in kernel.shape):
        raise ConfigurationError(f"kernel sizes must be odd, got {kernel.shape}")
    total = kernel.sum()
    if total == 0:
        raise ConfigurationError("kernel sums to zero")
    return kernel / total


def _centered_circulant(kernel, shape):
    kernel = _normalized(kernel)
    return CirculantOperator(kernel, shape, origin=tuple(s // 2 for s in kernel.shape))


def make_operator(kind: str, **params) -> LinearOperator:
    """Construct an operator by name with the cheapest exact gram-solve backend.

    kinds: ``identity`` (n), ``dense`` (matrix | matrix_file), ``gaussian-blur``
    (shape, size=5, std=10), ``motion-blur`` (shape, kernel | kernel_file | size,
    length, angle), ``sr-bicubic`` (shape, factor=4, gram='cg').
    """
    try:
        if kind == "identity":
            return IdentityOperator(int(params["n"]))
        if kind == "dense":
            if "matrix_file" in params:
                return DenseOperator(read_kernel_file(params["matrix_file"], kind="matrix"))
            return DenseOperator(params["matrix"])
        shape = tuple(int(s) for s in np.atleast_1d(params["shape"]))
        if kind == "gaussian-blur":
            k = gaussian_kernel(int(params.get("size", 5)), float(params.get("std", 10.0)))
            return _centered_circulant(k, shape)
        if kind == "motion-blur":
            if "kernel_file" in params:
                k = read_kernel_file(params["kernel_file"])
            elif "kernel" in params:
                k = np.asarray(params["kernel"], dtype=np.float64)
            else:
                k = motion_kernel(
                    int(params.get("size", 9)),
                    float(params.get("length", 7.0)),
                    float(params.get("angle", 0.0)),
                )
            return _centered_circulant(k, shape)
        if kind == "sr-bicubic":
            factor = int(params.get("factor", 4))
            k = bicubic_kernel(factor, ndim=len(shape))
            return SubsampledCirculantOperator(_centered_circulant(k, shape), factor, params.get("gram", "cg"))
    except KeyError as exc:
        raise ConfigurationError(f"operator {kind!r} requires parameter {exc.args[0]!r}") from exc
    raise ConfigurationError(f"unknown operator kind {kind!r}")
