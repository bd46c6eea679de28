"""Deep-unfolded MIMO detection: a trained projected-gradient network,
classical baseline detectors, and a Monte-Carlo BER evaluation harness."""

from .channel import (
    ChannelSample,
    FixedChannelSpec,
    SnrSpec,
    SystemDims,
    build_fixed_channel,
    sample,
    sample_vc_channel,
    sigma2_from_snr,
)
from .detectors import (
    AmpConfig,
    DetectionResult,
    amp,
    matched_filter,
    ml_bruteforce,
    mmse,
    zero_forcing,
)
from .detnet import (
    ArchConfig,
    DetNetParams,
    LayerTrace,
    detect,
    forward,
    load_params,
    relu,
    save_params,
    soft_sign,
)
from .evaluation import BerCurve, SweepSpec, compare, run_sweep
from .kernels import BACKEND_NAME, HAVE_COMPILED
from .numerics import Rng
from .training import TrainConfig, TrainReport, adam_step, backward, loss, train

__version__ = "0.1.0"

__all__ = [
    "AmpConfig",
    "ArchConfig",
    "BACKEND_NAME",
    "BerCurve",
    "ChannelSample",
    "DetNetParams",
    "DetectionResult",
    "FixedChannelSpec",
    "HAVE_COMPILED",
    "LayerTrace",
    "Rng",
    "SnrSpec",
    "SweepSpec",
    "SystemDims",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "amp",
    "backward",
    "build_fixed_channel",
    "compare",
    "detect",
    "forward",
    "load_params",
    "loss",
    "matched_filter",
    "ml_bruteforce",
    "mmse",
    "relu",
    "run_sweep",
    "sample",
    "sample_vc_channel",
    "save_params",
    "sigma2_from_snr",
    "soft_sign",
    "train",
    "zero_forcing",
]
