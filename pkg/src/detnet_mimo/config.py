"""Experiment configuration: a strict JSON schema with a format version.

Unknown keys are rejected (typos in experiment files should fail loudly) and
every error message carries the offending field path.  ``parse_config`` and
``serialize_config`` round-trip exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .channel import FixedChannelSpec, SnrSpec, SystemDims
from .detnet import ArchConfig
from .errors import ConfigError, ShapeError
from .evaluation import SweepSpec
from .training import TrainConfig

CONFIG_FORMAT_VERSION = 1

DETECTOR_TYPES = ("mf", "zf", "mmse", "ml", "amp", "detnet")


@dataclass(frozen=True)
class DetectorSpec:
    """One detector entry of the comparison list."""

    type: str
    name: str
    num_iterations: int | None = None  # amp only; default 3K
    snr_bias_db_std: float = 0.0  # amp only
    exit_layer: int | None = None  # detnet only


@dataclass(frozen=True)
class OutputPaths:
    checkpoint: str
    train_log: str
    results: str


@dataclass(frozen=True)
class ExperimentConfig:
    dims: SystemDims
    arch: ArchConfig
    channel: FixedChannelSpec | None  # None = varying channel
    train: TrainConfig
    sweep: SweepSpec
    detectors: tuple[DetectorSpec, ...]
    outputs: OutputPaths


def _require_dict(node, path):
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected an object")
    return node


def _no_unknown(node, path, allowed):
    for key in node:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown field")


def _get(node, path, key, required=True, default=None):
    if key not in node:
        if required:
            raise ConfigError(f"{path}.{key}: missing required field")
        return default
    return node[key]


def _as_int(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _as_float(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _as_str(value, path):
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def _as_bool(value, path):
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    return value


def parse_config(doc: dict) -> ExperimentConfig:
    _require_dict(doc, "config")
    _no_unknown(
        doc,
        "config",
        {
            "format_version",
            "dims",
            "arch",
            "channel",
            "train",
            "sweep",
            "detectors",
            "outputs",
        },
    )
    version = _get(doc, "config", "format_version")
    if version != CONFIG_FORMAT_VERSION:
        raise ConfigError(
            f"config.format_version: expected {CONFIG_FORMAT_VERSION}, got {version!r}"
        )

    try:
        dims_node = _require_dict(_get(doc, "config", "dims"), "dims")
        _no_unknown(dims_node, "dims", {"k_tx", "n_rx"})
        dims = SystemDims(
            k_tx=_as_int(_get(dims_node, "dims", "k_tx"), "dims.k_tx"),
            n_rx=_as_int(_get(dims_node, "dims", "n_rx"), "dims.n_rx"),
        )

        arch_node = _get(doc, "config", "arch", required=False)
        if arch_node is None:
            arch = ArchConfig.from_dims(dims)
        else:
            _require_dict(arch_node, "arch")
            _no_unknown(
                arch_node, "arch", {"num_layers", "z_size", "v_size", "residual_alpha"}
            )
            arch = ArchConfig(
                dims=dims,
                num_layers=_as_int(
                    _get(arch_node, "arch", "num_layers"), "arch.num_layers"
                ),
                z_size=_as_int(_get(arch_node, "arch", "z_size"), "arch.z_size"),
                v_size=_as_int(_get(arch_node, "arch", "v_size"), "arch.v_size"),
                residual_alpha=_as_float(
                    _get(arch_node, "arch", "residual_alpha", required=False, default=0.9),
                    "arch.residual_alpha",
                ),
            )

        chan_node = _require_dict(_get(doc, "config", "channel"), "channel")
        mode = _as_str(_get(chan_node, "channel", "mode"), "channel.mode")
        if mode == "vc":
            _no_unknown(chan_node, "channel", {"mode"})
            channel = None
        elif mode == "fc":
            _no_unknown(chan_node, "channel", {"mode", "rho", "seed"})
            channel = FixedChannelSpec(
                rho=_as_float(_get(chan_node, "channel", "rho"), "channel.rho"),
                dims=dims,
                seed=_as_int(_get(chan_node, "channel", "seed"), "channel.seed"),
            )
        else:
            raise ConfigError(f"channel.mode: expected 'fc' or 'vc', got {mode!r}")

        tr = _require_dict(_get(doc, "config", "train"), "train")
        _no_unknown(
            tr,
            "train",
            {
                "batch_size",
                "num_iterations",
                "snr_min_db",
                "snr_max_db",
                "learning_rate",
                "adam_beta1",
                "adam_beta2",
                "adam_eps",
                "seed",
                "log_every",
            },
        )
        train = TrainConfig(
            batch_size=_as_int(_get(tr, "train", "batch_size"), "train.batch_size"),
            num_iterations=_as_int(
                _get(tr, "train", "num_iterations"), "train.num_iterations"
            ),
            snr=SnrSpec(
                _as_float(_get(tr, "train", "snr_min_db"), "train.snr_min_db"),
                _as_float(_get(tr, "train", "snr_max_db"), "train.snr_max_db"),
            ),
            learning_rate=_as_float(
                _get(tr, "train", "learning_rate", required=False, default=1e-4),
                "train.learning_rate",
            ),
            adam_beta1=_as_float(
                _get(tr, "train", "adam_beta1", required=False, default=0.9),
                "train.adam_beta1",
            ),
            adam_beta2=_as_float(
                _get(tr, "train", "adam_beta2", required=False, default=0.999),
                "train.adam_beta2",
            ),
            adam_eps=_as_float(
                _get(tr, "train", "adam_eps", required=False, default=1e-8),
                "train.adam_eps",
            ),
            seed=_as_int(_get(tr, "train", "seed"), "train.seed"),
            fixed_channel=channel,
            log_every=_as_int(
                _get(tr, "train", "log_every", required=False, default=100),
                "train.log_every",
            ),
        )

        sw = _require_dict(_get(doc, "config", "sweep"), "sweep")
        _no_unknown(
            sw,
            "sweep",
            {"snr_points_db", "min_bit_errors", "max_samples", "seed", "measure_timing"},
        )
        points = _get(sw, "sweep", "snr_points_db")
        if not isinstance(points, list) or not points:
            raise ConfigError("sweep.snr_points_db: expected a non-empty list")
        sweep = SweepSpec(
            snr_points_db=tuple(
                _as_float(p, f"sweep.snr_points_db[{i}]") for i, p in enumerate(points)
            ),
            min_bit_errors=_as_int(
                _get(sw, "sweep", "min_bit_errors", required=False, default=100),
                "sweep.min_bit_errors",
            ),
            max_samples=_as_int(
                _get(sw, "sweep", "max_samples", required=False, default=100_000),
                "sweep.max_samples",
            ),
            seed=_as_int(_get(sw, "sweep", "seed"), "sweep.seed"),
            measure_timing=_as_bool(
                _get(sw, "sweep", "measure_timing", required=False, default=True),
                "sweep.measure_timing",
            ),
        )

        det_list = _get(doc, "config", "detectors")
        if not isinstance(det_list, list) or not det_list:
            raise ConfigError("detectors: expected a non-empty list")
        detectors = []
        for i, node in enumerate(det_list):
            path = f"detectors[{i}]"
            _require_dict(node, path)
            dtype = _as_str(_get(node, path, "type"), f"{path}.type")
            if dtype not in DETECTOR_TYPES:
                raise ConfigError(
                    f"{path}.type: expected one of {DETECTOR_TYPES}, got {dtype!r}"
                )
            allowed = {"type", "name"}
            if dtype == "amp":
                allowed |= {"num_iterations", "snr_bias_db_std"}
            if dtype == "detnet":
                allowed |= {"exit_layer"}
            _no_unknown(node, path, allowed)
            name = _as_str(
                _get(node, path, "name", required=False, default=dtype),
                f"{path}.name",
            )
            num_iterations = _get(node, path, "num_iterations", required=False)
            if num_iterations is not None:
                num_iterations = _as_int(num_iterations, f"{path}.num_iterations")
            exit_layer = _get(node, path, "exit_layer", required=False)
            if exit_layer is not None:
                exit_layer = _as_int(exit_layer, f"{path}.exit_layer")
            detectors.append(
                DetectorSpec(
                    type=dtype,
                    name=name,
                    num_iterations=num_iterations,
                    snr_bias_db_std=_as_float(
                        _get(node, path, "snr_bias_db_std", required=False, default=0.0),
                        f"{path}.snr_bias_db_std",
                    ),
                    exit_layer=exit_layer,
                )
            )
        names = [d.name for d in detectors]
        if len(set(names)) != len(names):
            raise ConfigError("detectors: names must be unique")

        out = _require_dict(_get(doc, "config", "outputs"), "outputs")
        _no_unknown(out, "outputs", {"checkpoint", "train_log", "results"})
        outputs = OutputPaths(
            checkpoint=_as_str(_get(out, "outputs", "checkpoint"), "outputs.checkpoint"),
            train_log=_as_str(_get(out, "outputs", "train_log"), "outputs.train_log"),
            results=_as_str(_get(out, "outputs", "results"), "outputs.results"),
        )
    except ShapeError as exc:
        raise ConfigError(str(exc)) from exc

    return ExperimentConfig(
        dims=dims,
        arch=arch,
        channel=channel,
        train=train,
        sweep=sweep,
        detectors=tuple(detectors),
        outputs=outputs,
    )


def serialize_config(config: ExperimentConfig) -> dict:
    doc: dict = {
        "format_version": CONFIG_FORMAT_VERSION,
        "dims": {"k_tx": config.dims.k_tx, "n_rx": config.dims.n_rx},
        "arch": {
            "num_layers": config.arch.num_layers,
            "z_size": config.arch.z_size,
            "v_size": config.arch.v_size,
            "residual_alpha": config.arch.residual_alpha,
        },
    }
    if config.channel is None:
        doc["channel"] = {"mode": "vc"}
    else:
        doc["channel"] = {
            "mode": "fc",
            "rho": config.channel.rho,
            "seed": config.channel.seed,
        }
    tr = config.train
    doc["train"] = {
        "batch_size": tr.batch_size,
        "num_iterations": tr.num_iterations,
        "snr_min_db": tr.snr.snr_min_db,
        "snr_max_db": tr.snr.snr_max_db,
        "learning_rate": tr.learning_rate,
        "adam_beta1": tr.adam_beta1,
        "adam_beta2": tr.adam_beta2,
        "adam_eps": tr.adam_eps,
        "seed": tr.seed,
        "log_every": tr.log_every,
    }
    sw = config.sweep
    doc["sweep"] = {
        "snr_points_db": list(sw.snr_points_db),
        "min_bit_errors": sw.min_bit_errors,
        "max_samples": sw.max_samples,
        "seed": sw.seed,
        "measure_timing": sw.measure_timing,
    }
    dets = []
    for d in config.detectors:
        node: dict = {"type": d.type, "name": d.name}
        if d.type == "amp":
            if d.num_iterations is not None:
                node["num_iterations"] = d.num_iterations
            node["snr_bias_db_std"] = d.snr_bias_db_std
        if d.type == "detnet" and d.exit_layer is not None:
            node["exit_layer"] = d.exit_layer
        dets.append(node)
    doc["detectors"] = dets
    doc["outputs"] = {
        "checkpoint": config.outputs.checkpoint,
        "train_log": config.outputs.train_log,
        "results": config.outputs.results,
    }
    return doc


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)


def save_config(config: ExperimentConfig, path: str) -> None:
    with open(path, "w") as f:
        json.dump(serialize_config(config), f, indent=2)
        f.write("\n")
