"""The unfolded detection network.

Each of the L layers mimics one projected-gradient step on the maximum
likelihood objective, lifted to a learned hidden width: the layer input is
the concatenation [H^T y; x_hat; H^T H x_hat; v], the hard projection is
replaced by the piecewise-linear soft sign, and consecutive layer outputs
are blended ResNet-style with weight ``residual_alpha``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .channel import SystemDims
from .detectors import DetectionResult, sign_pm1
from .errors import CheckpointError, ParameterError, ShapeError
from .numerics import Array

# psi_t divides by |t|; training clamps |t| at this floor.
T_FLOOR = 1e-2

CHECKPOINT_FORMAT_VERSION = 1


def relu(x):
    """max(0, x), elementwise."""
    return np.maximum(x, 0.0)


def soft_sign(x, t: float):
    """Piecewise-linear soft sign: -1 below -|t|, x/|t| inside, +1 above |t|."""
    at = abs(t)
    if at < T_FLOOR:
        raise ParameterError(f"|t| must be >= {T_FLOOR}, got {t}")
    return np.clip(x / at, -1.0, 1.0)


@dataclass(frozen=True)
class ArchConfig:
    """Network shape: layer count, hidden width, side-state width, residual mix."""

    dims: SystemDims
    num_layers: int
    z_size: int
    v_size: int
    residual_alpha: float = 0.9

    def __post_init__(self):
        if self.num_layers < 1:
            raise ShapeError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.z_size < 1:
            raise ShapeError(f"z_size must be >= 1, got {self.z_size}")
        if self.v_size < 0:
            raise ShapeError(f"v_size must be >= 0, got {self.v_size}")
        if not (0.0 <= self.residual_alpha <= 1.0):
            raise ShapeError(
                f"residual_alpha must be in [0, 1], got {self.residual_alpha}"
            )

    @property
    def input_dim(self) -> int:
        return 3 * self.dims.k_tx + self.v_size

    @classmethod
    def from_dims(cls, dims: SystemDims, residual_alpha: float = 0.9) -> "ArchConfig":
        """Standard scaling: 3K layers, hidden width 8K, side width 2K."""
        k = dims.k_tx
        return cls(
            dims=dims,
            num_layers=3 * k,
            z_size=8 * k,
            v_size=2 * k,
            residual_alpha=residual_alpha,
        )


_ARRAY_FIELDS = ("w1", "b1", "w2", "b2", "w3", "b3", "t")


@dataclass
class DetNetParams:
    """All learned weights, stacked over layers (leading axis L)."""

    arch: ArchConfig
    w1: Array  # (L, Z, 3K+V)
    b1: Array  # (L, Z)
    w2: Array  # (L, K, Z)
    b2: Array  # (L, K)
    w3: Array  # (L, V, Z)
    b3: Array  # (L, V)
    t: Array  # (L,)

    def __post_init__(self):
        a = self.arch
        k, z, v, big_l = a.dims.k_tx, a.z_size, a.v_size, a.num_layers
        expected = {
            "w1": (big_l, z, a.input_dim),
            "b1": (big_l, z),
            "w2": (big_l, k, z),
            "b2": (big_l, k),
            "w3": (big_l, v, z),
            "b3": (big_l, v),
            "t": (big_l,),
        }
        for name, shape in expected.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise ShapeError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)
        if np.any(np.abs(self.t) < T_FLOOR):
            raise ParameterError(f"every |t| must be >= {T_FLOOR}")

    def as_dict(self) -> dict[str, Array]:
        return {name: getattr(self, name) for name in _ARRAY_FIELDS}

    def copy(self) -> "DetNetParams":
        return DetNetParams(self.arch, **{n: getattr(self, n).copy() for n in _ARRAY_FIELDS})

    def allclose(self, other: "DetNetParams", rtol=0.0, atol=0.0) -> bool:
        return self.arch == other.arch and all(
            np.allclose(getattr(self, n), getattr(other, n), rtol=rtol, atol=atol)
            for n in _ARRAY_FIELDS
        )


@dataclass
class LayerTrace:
    """Per-layer intermediate states of one forward pass.

    Row j holds layer j+1's hidden activation z, output x_hat, and side
    state v (so ``x_hat[-1]`` is the network's final soft output).
    """

    z: Array  # (L, Z)
    x_hat: Array  # (L, K)
    v: Array  # (L, V)


def _check_sample_shapes(params: DetNetParams, h: Array, y: Array):
    dims = params.arch.dims
    if h.shape != (dims.n_rx, dims.k_tx):
        raise ShapeError(f"h has shape {h.shape}, expected {(dims.n_rx, dims.k_tx)}")
    if y.shape != (dims.n_rx,):
        raise ShapeError(f"y has shape {y.shape}, expected {(dims.n_rx,)}")


def forward(params: DetNetParams, h: Array, y: Array) -> LayerTrace:
    """Run all layers on one sample and record the full trace.

    H^T y and H^T H are formed once; the estimate enters y only through
    H^T y (the compressed sufficient statistic).
    """
    _check_sample_shapes(params, h, y)
    gram, hty = kernels.gram_and_hty(h[None], y[None])
    _, zs, _, xs, vs = kernels.detnet_forward(
        params.w1, params.b1, params.w2, params.b2, params.w3, params.b3,
        params.t, params.arch.residual_alpha, hty, gram,
    )
    return LayerTrace(z=zs[0], x_hat=xs[0], v=vs[0])


def detect(
    params: DetNetParams, h: Array, y: Array, exit_layer: int | None = None
) -> DetectionResult:
    """Hard decisions from the soft output at ``exit_layer`` (default: last).

    Layers past the exit are never evaluated, which is what makes early exit
    cheaper.
    """
    _check_sample_shapes(params, h, y)
    big_l = params.arch.num_layers
    if exit_layer is None:
        exit_layer = big_l
    if not (1 <= exit_layer <= big_l):
        raise ShapeError(f"exit_layer must be in [1, {big_l}], got {exit_layer}")
    gram, hty = kernels.gram_and_hty(h[None], y[None])
    soft = kernels.detnet_detect(
        params.w1, params.b1, params.w2, params.b2, params.w3, params.b3,
        params.t, params.arch.residual_alpha, hty, gram, exit_layer,
    )[0]
    return DetectionResult(x_hat=sign_pm1(soft), soft=soft, iterations_used=exit_layer)


def save_params(params: DetNetParams, path: str) -> None:
    """Write a JSON checkpoint; floats round-trip exactly via repr."""
    a = params.arch
    layers = []
    for j in range(a.num_layers):
        layer = {}
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            arr = getattr(params, name)[j]
            layer[name] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
        layer["t"] = float(params.t[j])
        layers.append(layer)
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "arch": {
            "k_tx": a.dims.k_tx,
            "n_rx": a.dims.n_rx,
            "num_layers": a.num_layers,
            "z_size": a.z_size,
            "v_size": a.v_size,
            "residual_alpha": a.residual_alpha,
        },
        "layers": layers,
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_params(path: str) -> DetNetParams:
    """Read a checkpoint written by :func:`save_params`."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {doc.get('format_version')!r}"
        )
    try:
        a = doc["arch"]
        arch = ArchConfig(
            dims=SystemDims(k_tx=a["k_tx"], n_rx=a["n_rx"]),
            num_layers=a["num_layers"],
            z_size=a["z_size"],
            v_size=a["v_size"],
            residual_alpha=a["residual_alpha"],
        )
        stacks = {name: [] for name in ("w1", "b1", "w2", "b2", "w3", "b3")}
        ts = []
        if len(doc["layers"]) != arch.num_layers:
            raise CheckpointError(
                f"checkpoint has {len(doc['layers'])} layers, arch says {arch.num_layers}"
            )
        for layer in doc["layers"]:
            for name in stacks:
                entry = layer[name]
                arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
                stacks[name].append(arr)
            ts.append(layer["t"])
        params = DetNetParams(
            arch=arch,
            **{name: np.stack(vals) for name, vals in stacks.items()},
            t=np.array(ts, dtype=np.float64),
        )
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, ShapeError, ParameterError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    return params
