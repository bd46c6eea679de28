"""Monte-Carlo BER estimation over SNR sweeps.

Common random numbers: the sample stream at a sweep point is a pure function
of ``(sweep seed, point index)`` and never of the detector, so every detector
is scored on identical samples.  Detectors that need their own randomness
(mis-specified-SNR AMP) draw from a separate stream keyed by the detector
slot, leaving the sample stream untouched.

Statistical outputs (bits, errors, BER) are deterministic given the seed;
detect-time columns are wall-clock and therefore not.  Timing can be
disabled, which zeroes that column and makes result files byte-stable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .channel import SampleBatch, SnrSpec, SystemDims, sample_batch
from .detectors import AmpConfig, sign_pm1
from .detnet import DetNetParams
from .errors import CapacityError, ShapeError, SingularityError
from .numerics import Array, Rng

CSV_HEADER = "detector,snr_db,bits_tested,bit_errors,ber,mean_detect_time_us"

_CHUNK = 2048


@dataclass(frozen=True)
class SweepSpec:
    """SNR grid plus the stopping rule: stop a point once ``min_bit_errors``
    have been seen or ``max_samples`` samples are spent."""

    snr_points_db: tuple[float, ...]
    min_bit_errors: int = 100
    max_samples: int = 100_000
    seed: int = 0
    measure_timing: bool = True

    def __post_init__(self):
        points = tuple(float(p) for p in self.snr_points_db)
        object.__setattr__(self, "snr_points_db", points)
        if len(points) == 0:
            raise ShapeError("snr_points_db must be non-empty")
        if any(b <= a for a, b in zip(points, points[1:])):
            raise ShapeError("snr_points_db must be strictly increasing")
        if self.min_bit_errors < 1:
            raise ShapeError(f"min_bit_errors must be >= 1, got {self.min_bit_errors}")
        if self.max_samples < 1:
            raise ShapeError(f"max_samples must be >= 1, got {self.max_samples}")


@dataclass
class BerPoint:
    snr_db: float
    bits_tested: int
    bit_errors: int
    ber: float
    mean_detect_time: float  # seconds per sample


@dataclass
class BerCurve:
    detector: str
    points: list[BerPoint]


class Detector:
    """Batch detector handle: maps a sample batch to hard +/-1 decisions."""

    name: str

    def detect_batch(self, batch: SampleBatch, rng: Rng) -> Array:
        raise NotImplementedError


class MatchedFilterDetector(Detector):
    def __init__(self, name: str = "mf"):
        self.name = name

    def detect_batch(self, batch, rng):
        soft = np.einsum("bnk,bn->bk", batch.h, batch.y)
        return sign_pm1(soft)


class ZeroForcingDetector(Detector):
    def __init__(self, name: str = "zf"):
        self.name = name

    def detect_batch(self, batch, rng):
        gram, hty = kernels.gram_and_hty(batch.h, batch.y)
        try:
            soft = np.linalg.solve(gram, hty[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularityError(f"singular Gram matrix in batch: {exc}") from exc
        return sign_pm1(soft)


class MmseDetector(Detector):
    """Uses the true per-sample noise variance (genie-aided)."""

    def __init__(self, name: str = "mmse"):
        self.name = name

    def detect_batch(self, batch, rng):
        gram, hty = kernels.gram_and_hty(batch.h, batch.y)
        k = gram.shape[-1]
        gram = gram + batch.sigma2[:, None, None] * np.eye(k)
        soft = np.linalg.solve(gram, hty[..., None])[..., 0]
        return sign_pm1(soft)


class MlDetector(Detector):
    def __init__(self, name: str = "ml"):
        self.name = name

    def detect_batch(self, batch, rng):
        if batch.x.shape[1] > 24:
            raise CapacityError("ml detector limited to K <= 24")
        return kernels.ml_detect(batch.h, batch.y)


class AmpDetector(Detector):
    """AMP with the true noise variance; an optional Gaussian dB bias per
    sample models a mis-specified SNR."""

    def __init__(self, cfg: AmpConfig, name: str = "amp"):
        self.cfg = cfg
        self.name = name

    def detect_batch(self, batch, rng):
        sigma2 = batch.sigma2
        if self.cfg.snr_bias_db_std > 0.0:
            bias_db = self.cfg.snr_bias_db_std * rng.normal((len(batch),))
            sigma2 = sigma2 * 10.0 ** (-bias_db / 10.0)
        soft, _ = kernels.amp_detect(batch.h, batch.y, sigma2, self.cfg.num_iterations)
        return sign_pm1(soft)


class DetNetDetector(Detector):
    """Trained network, optionally exiting at an early layer."""

    def __init__(self, params: DetNetParams, exit_layer: int | None = None,
                 name: str = "detnet"):
        big_l = params.arch.num_layers
        if exit_layer is None:
            exit_layer = big_l
        if not (1 <= exit_layer <= big_l):
            raise ShapeError(f"exit_layer must be in [1, {big_l}], got {exit_layer}")
        self.params = params
        self.exit_layer = exit_layer
        self.name = name

    def detect_batch(self, batch, rng):
        p = self.params
        gram, hty = kernels.gram_and_hty(batch.h, batch.y)
        soft = kernels.detnet_detect(
            p.w1, p.b1, p.w2, p.b2, p.w3, p.b3, p.t,
            p.arch.residual_alpha, hty, gram, self.exit_layer,
        )
        return sign_pm1(soft)


class TruthDetector(Detector):
    """Ground-truth passthrough; calibration aid for the harness itself."""

    def __init__(self, name: str = "truth"):
        self.name = name

    def detect_batch(self, batch, rng):
        return batch.x.copy()


def run_sweep(
    detector: Detector,
    dims: SystemDims,
    spec: SweepSpec,
    fixed_h: Array | None = None,
    detector_slot: int = 0,
) -> BerCurve:
    """BER curve for one detector.

    Per point, samples are generated in chunks at the pinned SNR (the
    uniform-SNR randomization is a training-time device only) until the
    stopping rule fires.  Wall time covers the detect call only.
    """
    root = Rng(spec.seed)
    points = []
    for p_idx, snr_db in enumerate(spec.snr_points_db):
        samp_rng = root.child(p_idx, 0)
        det_rng = root.child(p_idx, 1 + detector_slot)
        pinned = SnrSpec(snr_db, snr_db)
        samples_done = 0
        bit_errors = 0
        detect_seconds = 0.0
        while samples_done < spec.max_samples and bit_errors < spec.min_bit_errors:
            n = min(_CHUNK, spec.max_samples - samples_done)
            batch = sample_batch(samp_rng, dims, pinned, n, fixed_h)
            t0 = time.perf_counter()
            xhat = detector.detect_batch(batch, det_rng)
            detect_seconds += time.perf_counter() - t0
            if xhat.shape != batch.x.shape:
                raise ShapeError(
                    f"detector {detector.name} returned shape {xhat.shape}, "
                    f"expected {batch.x.shape}"
                )
            bit_errors += int(np.sum(xhat != batch.x))
            samples_done += n
        bits = samples_done * dims.k_tx
        points.append(
            BerPoint(
                snr_db=snr_db,
                bits_tested=bits,
                bit_errors=bit_errors,
                ber=bit_errors / bits,
                mean_detect_time=detect_seconds / samples_done,
            )
        )
    return BerCurve(detector=detector.name, points=points)


def compare(
    detectors: list[Detector],
    dims: SystemDims,
    spec: SweepSpec,
    fixed_h: Array | None = None,
) -> list[BerCurve]:
    """Run every detector over the sweep on the identical sample stream."""
    if not detectors:
        raise ShapeError("compare needs at least one detector")
    return [
        run_sweep(det, dims, spec, fixed_h, detector_slot=i)
        for i, det in enumerate(detectors)
    ]


def curves_to_csv(curves: list[BerCurve], measure_timing: bool = True) -> str:
    """Render curves as CSV text (one row per detector and SNR point).

    With timing disabled the time column is a constant 0.000, which makes
    the whole file deterministic for a fixed seed.
    """
    lines = [CSV_HEADER]
    for curve in curves:
        for pt in curve.points:
            us = pt.mean_detect_time * 1e6 if measure_timing else 0.0
            lines.append(
                f"{curve.detector},{pt.snr_db!r},{pt.bits_tested},"
                f"{pt.bit_errors},{pt.ber!r},{us:.3f}"
            )
    return "\n".join(lines) + "\n"


def write_csv(curves: list[BerCurve], path: str, measure_timing: bool = True) -> None:
    with open(path, "w") as f:
        f.write(curves_to_csv(curves, measure_timing))
