"""Classical baseline detectors: matched filter, zero forcing, MMSE,
exact maximum likelihood (exhaustive), and real-valued BPSK AMP.

All detectors are pure functions; the only randomness is AMP's optional
mis-specified noise level, drawn from a caller-supplied stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CapacityError, ParameterError, ShapeError
from .numerics import Array, Rng, solve_spd

ML_MAX_K = 24


def sign_pm1(v):
    """Sign with the fixed tie-break sign(0) := +1."""
    return np.where(np.asarray(v) >= 0.0, 1.0, -1.0)


@dataclass
class DetectionResult:
    """Hard +/-1 decisions plus the soft values they were sliced from."""

    x_hat: Array
    soft: Array
    iterations_used: int = 0

    def __post_init__(self):
        self.soft = np.asarray(self.soft, dtype=np.float64)
        self.x_hat = np.asarray(self.x_hat, dtype=np.float64)


@dataclass(frozen=True)
class AmpConfig:
    """Iteration budget and optional dB-domain noise-level mis-specification."""

    num_iterations: int
    snr_bias_db_std: float = 0.0

    def __post_init__(self):
        if self.num_iterations < 1:
            raise ParameterError(
                f"num_iterations must be >= 1, got {self.num_iterations}"
            )
        if self.snr_bias_db_std < 0.0:
            raise ParameterError(
                f"snr_bias_db_std must be >= 0, got {self.snr_bias_db_std}"
            )


def _check_hy(h: Array, y: Array):
    if h.ndim != 2:
        raise ShapeError(f"h must be 2-D, got shape {h.shape}")
    if y.shape != (h.shape[0],):
        raise ShapeError(f"y has shape {y.shape}, expected {(h.shape[0],)}")


def matched_filter(h: Array, y: Array) -> DetectionResult:
    """soft = H^T y."""
    _check_hy(h, y)
    soft = h.T @ y
    return DetectionResult(x_hat=sign_pm1(soft), soft=soft)


def zero_forcing(h: Array, y: Array) -> DetectionResult:
    """Decorrelator: soft = (H^T H)^{-1} H^T y via SPD solve."""
    _check_hy(h, y)
    soft = solve_spd(h.T @ h, h.T @ y)
    return DetectionResult(x_hat=sign_pm1(soft), soft=soft)


def mmse(h: Array, y: Array, sigma2: float) -> DetectionResult:
    """Regularized linear detector: soft = (H^T H + sigma2 I)^{-1} H^T y."""
    _check_hy(h, y)
    if sigma2 < 0.0:
        raise ParameterError(f"sigma2 must be >= 0, got {sigma2}")
    gram = h.T @ h + sigma2 * np.eye(h.shape[1])
    soft = solve_spd(gram, h.T @ y)
    return DetectionResult(x_hat=sign_pm1(soft), soft=soft)


def ml_bruteforce(h: Array, y: Array) -> DetectionResult:
    """Exact minimizer of ||y - H x||^2 over {+/-1}^K by full enumeration.

    Ties break toward the lexicographically smallest x (with -1 < +1).
    """
    _check_hy(h, y)
    k = h.shape[1]
    if k > ML_MAX_K:
        raise CapacityError(f"ml_bruteforce limited to K <= {ML_MAX_K}, got K={k}")
    xhat = kernels.ml_detect(np.ascontiguousarray(h[None]), np.ascontiguousarray(y[None]))[0]
    return DetectionResult(x_hat=xhat, soft=xhat.copy())


def amp(
    h: Array,
    y: Array,
    sigma2: float,
    cfg: AmpConfig,
    rng: Rng | None = None,
) -> DetectionResult:
    """Real-valued BPSK AMP for ``cfg.num_iterations`` rounds.

    With ``snr_bias_db_std > 0`` the noise level handed to the recursion is
    first perturbed by a Gaussian dB offset (mis-specified SNR); that is the
    only use of ``rng``.  Diverging iterates are truncated at the last finite
    estimate, reported via ``iterations_used``.
    """
    _check_hy(h, y)
    if not sigma2 > 0.0:
        raise ParameterError(f"sigma2 must be > 0, got {sigma2}")
    sigma2_used = sigma2
    if cfg.snr_bias_db_std > 0.0:
        if rng is None:
            raise ParameterError("snr_bias_db_std > 0 requires an rng")
        bias_db = cfg.snr_bias_db_std * rng.normal()
        sigma2_used = sigma2 * 10.0 ** (-bias_db / 10.0)
    soft, iters = kernels.amp_detect(
        np.ascontiguousarray(h[None]),
        np.ascontiguousarray(y[None]),
        np.array([sigma2_used]),
        cfg.num_iterations,
    )
    return DetectionResult(
        x_hat=sign_pm1(soft[0]), soft=soft[0], iterations_used=int(iters[0])
    )
