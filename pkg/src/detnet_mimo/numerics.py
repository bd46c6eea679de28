"""Dense linear algebra and seeded randomness that the rest of the package
builds on.

All matrices and vectors are C-contiguous float64 ndarrays; NumPy/LAPACK do
the factorizations.  What this module pins down is the error contracts and
the random-stream discipline:

* every random draw comes from a :class:`Rng`, keyed by ``(seed, path)``;
* identical keys reproduce identical streams across runs (PCG64 keyed via
  ``SeedSequence``; normal draws use NumPy's ziggurat sampler, fixed for a
  given NumPy build);
* concurrent tasks never share a stream -- they each take ``rng.child(i)``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ShapeError, SingularityError

Array = np.ndarray


class Rng:
    """Deterministic random stream addressed by a seed and a spawn path.

    ``Rng(seed)`` is the root stream; ``rng.child(*path)`` derives an
    independent stream for a subtask.  Children are pure functions of
    ``(seed, path)``: no state leaks from parent to child, so the split is
    safe under any execution order.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in _path)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def child(self, *path: int) -> "Rng":
        return Rng(self.seed, self.path + path)

    def normal(self, shape=None) -> Array:
        """Standard normal draws; scalar float when shape is None."""
        if shape is None:
            return float(self._gen.standard_normal())
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape=None):
        if shape is None:
            return float(self._gen.uniform(low, high))
        return self._gen.uniform(low, high, shape)

    def signs(self, shape) -> Array:
        """Uniform +/-1 entries as float64."""
        return 2.0 * self._gen.integers(0, 2, size=shape).astype(np.float64) - 1.0

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"


def matmul(a: Array, b: Array) -> Array:
    """Matrix product with an explicit dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def solve_spd(a: Array, b: Array) -> Array:
    """Solve a @ v = b for symmetric positive definite ``a`` via Cholesky."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"solve_spd expects a square matrix, got {a.shape}")
    if b.ndim != 1 or b.shape[0] != a.shape[0]:
        raise ShapeError(f"solve_spd rhs length {b.shape} does not match {a.shape}")
    if not np.isfinite(a).all() or not np.isfinite(b).all():
        raise SingularityError("solve_spd received non-finite entries")
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"matrix is not positive definite: {exc}") from exc
    z = solve_triangular(chol, b, lower=True)
    return solve_triangular(chol.T, z, lower=False)


def sym_eig(a: Array) -> tuple[Array, Array]:
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues ascending, eigenvectors as columns) with
    a = V diag(w) V^T.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"sym_eig expects a square matrix, got {a.shape}")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * scale):
        raise ShapeError("sym_eig expects a symmetric matrix")
    w, v = np.linalg.eigh(a)
    return w, v


def haar_orthogonal(rng: Rng, n: int, k: int) -> Array:
    """n x k matrix with orthonormal columns, Haar-distributed.

    QR of an i.i.d. Gaussian matrix with the R-diagonal sign correction that
    makes the distribution exactly uniform over the Stiefel manifold.
    """
    if k < 1 or n < k:
        raise ShapeError(f"haar_orthogonal requires n >= k >= 1, got n={n}, k={k}")
    g = rng.normal((n, k))
    q, r = np.linalg.qr(g, mode="reduced")
    d = np.sign(np.diagonal(r)).copy()
    d[d == 0.0] = 1.0
    return q * d


def randn(rng: Rng, n: int) -> Array:
    """n i.i.d. standard normal draws."""
    return rng.normal((int(n),))
