"""Linear-channel sample generation: y = H x + w with BPSK symbols.

Two channel regimes are supported:

* fixed channel: one deterministic H whose Gram matrix is a rho-Toeplitz
  matrix (ill-conditioned by design), with Haar-random left singular vectors
  drawn once from a persisted seed;
* varying channel: a fresh i.i.d. N(0,1) matrix per sample.

SNR convention (dB): signal-to-noise per receive dimension,
``SNR_linear = trace(H^T H) / (N * sigma^2)``, so
``sigma^2 = trace(H^T H) / (N * 10^(SNR_dB/10))``.  This is well defined for
both regimes and is used consistently by training and evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .errors import ShapeError, SingularityError
from .numerics import Array, Rng, haar_orthogonal, sym_eig


@dataclass(frozen=True)
class SystemDims:
    """Transmit/receive dimensions (K symbols into N observations)."""

    k_tx: int
    n_rx: int

    def __post_init__(self):
        if not (1 <= self.k_tx <= self.n_rx):
            raise ShapeError(
                f"need n_rx >= k_tx >= 1, got k_tx={self.k_tx}, n_rx={self.n_rx}"
            )


@dataclass(frozen=True)
class SnrSpec:
    """Closed SNR range in dB; draws are uniform over it."""

    snr_min_db: float
    snr_max_db: float

    def __post_init__(self):
        if not self.snr_min_db <= self.snr_max_db:
            raise ShapeError(
                f"snr_min_db {self.snr_min_db} > snr_max_db {self.snr_max_db}"
            )


@dataclass(frozen=True)
class FixedChannelSpec:
    """Recipe for the fixed ill-conditioned channel.

    ``seed`` drives the Haar draw of the left singular vectors and is part of
    the experiment config, so the same H is rebuilt across process restarts.
    """

    rho: float
    dims: SystemDims
    seed: int

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise ShapeError(f"rho must be in (0, 1), got {self.rho}")


@dataclass(frozen=True)
class ChannelSample:
    """One realization of y = H x + w."""

    h: Array
    x: Array
    y: Array
    sigma2: float
    snr_db: float

    def __post_init__(self):
        if not np.all(np.abs(self.x) == 1.0):
            raise ShapeError("x entries must be +/-1")
        if not self.sigma2 > 0.0:
            raise ShapeError(f"sigma2 must be positive, got {self.sigma2}")


@dataclass(frozen=True)
class SampleBatch:
    """Stacked samples: h (B,N,K), x (B,K), y (B,N), sigma2 (B,), snr_db (B,)."""

    h: Array
    x: Array
    y: Array
    sigma2: Array
    snr_db: Array

    def __len__(self):
        return self.x.shape[0]


def toeplitz_gram(rho: float, k: int) -> Array:
    """K x K Toeplitz matrix with entries rho^|i-j|."""
    return toeplitz(rho ** np.arange(k, dtype=np.float64))


def build_fixed_channel(spec: FixedChannelSpec) -> Array:
    """Deterministic N x K channel with H^T H equal to the rho-Toeplitz Gram.

    Factors T = V diag(lam) V^T and returns H = Q diag(sqrt(lam)) V^T with Q
    an N x K Haar orthonormal-column matrix drawn from ``spec.seed``.
    """
    k, n = spec.dims.k_tx, spec.dims.n_rx
    t = toeplitz_gram(spec.rho, k)
    lam, v = sym_eig(t)
    if lam.min() <= 0.0:
        raise SingularityError(
            f"Toeplitz Gram with rho={spec.rho} is numerically not positive definite"
        )
    q = haar_orthogonal(Rng(spec.seed), n, k)
    return (q * np.sqrt(lam)) @ v.T


def sample_vc_channel(rng: Rng, dims: SystemDims) -> Array:
    """Fresh N x K channel with i.i.d. N(0,1) entries."""
    return rng.normal((dims.n_rx, dims.k_tx))


def sigma2_from_snr(h: Array, snr_db: float) -> float:
    """Noise variance for the given channel at the given SNR (dB)."""
    if not np.isfinite(snr_db):
        raise ShapeError(f"snr_db must be finite, got {snr_db}")
    trace_gram = float(np.sum(h * h))
    if trace_gram <= 0.0:
        raise SingularityError("channel has zero energy; SNR is undefined")
    n_rx = h.shape[0]
    return trace_gram / (n_rx * 10.0 ** (snr_db / 10.0))


def sample(rng: Rng, h: Array, snr: SnrSpec) -> ChannelSample:
    """Draw one sample: x uniform on {+/-1}^K, SNR uniform in dB, w Gaussian.

    Draw order is fixed (x, then snr_db, then w) so a seed pins the sample.
    """
    n_rx, k_tx = h.shape
    x = rng.signs(k_tx)
    snr_db = rng.uniform(snr.snr_min_db, snr.snr_max_db)
    sigma2 = sigma2_from_snr(h, snr_db)
    w = np.sqrt(sigma2) * rng.normal(n_rx)
    y = h @ x + w
    return ChannelSample(h=h, x=x, y=y, sigma2=sigma2, snr_db=snr_db)


def sample_batch(
    rng: Rng,
    dims: SystemDims,
    snr: SnrSpec,
    batch: int,
    fixed_h: Array | None = None,
) -> SampleBatch:
    """Draw ``batch`` samples at once (vectorized).

    With ``fixed_h`` every sample shares that channel; otherwise each sample
    gets a fresh i.i.d. Gaussian H.  Draw order is fixed: H block (varying
    channel only), then x block, then snr block, then noise block.
    """
    n, k = dims.n_rx, dims.k_tx
    if fixed_h is None:
        h = rng.normal((batch, n, k))
    else:
        if fixed_h.shape != (n, k):
            raise ShapeError(f"fixed_h shape {fixed_h.shape} != {(n, k)}")
        h = np.broadcast_to(fixed_h, (batch, n, k))
    x = rng.signs((batch, k))
    if snr.snr_min_db == snr.snr_max_db:
        snr_db = np.full(batch, snr.snr_min_db, dtype=np.float64)
    else:
        snr_db = rng.uniform(snr.snr_min_db, snr.snr_max_db, (batch,))
    trace_gram = np.sum(h * h, axis=(1, 2))
    if np.any(trace_gram <= 0.0):
        raise SingularityError("channel with zero energy in batch")
    sigma2 = trace_gram / (n * 10.0 ** (snr_db / 10.0))
    w = np.sqrt(sigma2)[:, None] * rng.normal((batch, n))
    y = np.einsum("bnk,bk->bn", h, x) + w
    return SampleBatch(
        h=np.ascontiguousarray(h), x=x, y=y, sigma2=sigma2, snr_db=snr_db
    )
