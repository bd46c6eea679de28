"""Training: the layer-weighted normalized loss, hand-derived reverse-mode
gradients through the unfolded network, an Adam optimizer, and the batched
stochastic training loop with randomized SNR.

The gradient code lives in the kernel backends; this module owns the loss
definition, the normalizer guard, parameter initialization, and the
finite-difference machinery used to certify the gradients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .channel import (
    FixedChannelSpec,
    SampleBatch,
    SnrSpec,
    SystemDims,
    build_fixed_channel,
    sample_batch,
)
from .detnet import T_FLOOR, ArchConfig, DetNetParams, LayerTrace
from .errors import ShapeError, TrainingError
from .numerics import Array, Rng, solve_spd

# Normalizer ||x - xtilde||^2 is clamped below at this value; the loss is
# otherwise undefined when the decorrelator is exact.
NORMALIZER_FLOOR = 1e-12

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3", "t")


@dataclass(frozen=True)
class TrainConfig:
    """Batched stochastic training setup.

    ``fixed_channel=None`` means the varying-channel regime (fresh H per
    sample); otherwise every sample shares the channel built from the spec.
    """

    batch_size: int
    num_iterations: int
    snr: SnrSpec
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    fixed_channel: FixedChannelSpec | None = None
    log_every: int = 100

    def __post_init__(self):
        if self.batch_size < 1:
            raise ShapeError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.num_iterations < 1:
            raise ShapeError(f"num_iterations must be >= 1, got {self.num_iterations}")
        # lr = 0 is allowed: it is the documented "train nothing" guard
        if self.learning_rate < 0.0:
            raise ShapeError(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not (0.0 <= b < 1.0):
                raise ShapeError(f"{name} must be in [0, 1), got {b}")
        if self.log_every < 1:
            raise ShapeError(f"log_every must be >= 1, got {self.log_every}")


@dataclass
class TrainLogRow:
    iteration: int
    loss: float
    ber: float
    elapsed_ms: float


@dataclass
class TrainReport:
    rows: list[TrainLogRow] = field(default_factory=list)


def layer_weights(num_layers: int) -> Array:
    """log(k) weight for layer k = 1..L; the first layer's weight vanishes."""
    return np.log(np.arange(1, num_layers + 1, dtype=np.float64))


def initial_params(arch: ArchConfig, rng: Rng) -> DetNetParams:
    """Small-gain start: W ~ N(0, 0.01^2), biases zero, t = 0.5.

    Draw order is fixed (w1, w2, w3 per layer, layers in order) so a seed
    pins the initialization.
    """
    k, z, v, big_l = arch.dims.k_tx, arch.z_size, arch.v_size, arch.num_layers
    d = arch.input_dim
    scale = 0.01
    w1 = np.empty((big_l, z, d))
    w2 = np.empty((big_l, k, z))
    w3 = np.empty((big_l, v, z))
    for j in range(big_l):
        w1[j] = scale * rng.normal((z, d))
        w2[j] = scale * rng.normal((k, z))
        w3[j] = scale * rng.normal((v, z))
    return DetNetParams(
        arch=arch,
        w1=w1,
        b1=np.zeros((big_l, z)),
        w2=w2,
        b2=np.zeros((big_l, k)),
        w3=w3,
        b3=np.zeros((big_l, v)),
        t=np.full(big_l, 0.5),
    )


def decorrelator_normalizer(gram: Array, hty: Array, x_true: Array) -> Array:
    """Per-sample ||x - (H^T H)^{-1} H^T y||^2, clamped at the floor.

    ``gram``/``hty`` are batched; uses one LAPACK solve over the stack.
    """
    xtilde = np.linalg.solve(gram, hty[..., None])[..., 0]
    d = np.sum((x_true - xtilde) ** 2, axis=-1)
    return np.maximum(d, NORMALIZER_FLOOR)


def loss(trace: LayerTrace, x_true: Array, h: Array, y: Array) -> float:
    """Sum over layers of log(k) * ||x - x_hat_k||^2 / ||x - xtilde||^2."""
    big_l = trace.x_hat.shape[0]
    xtilde = solve_spd(h.T @ h, h.T @ y)
    d = max(float(np.sum((x_true - xtilde) ** 2)), NORMALIZER_FLOOR)
    errs = np.sum((x_true[None, :] - trace.x_hat) ** 2, axis=1)
    return float(np.dot(layer_weights(big_l), errs) / d)


def _batch_forward_backward(params: DetNetParams, batch_h, batch_y, batch_x):
    """Shared batched path: returns (loss, grads dict, final-layer soft xs)."""
    arch = params.arch
    gram, hty = kernels.gram_and_hty(batch_h, batch_y)
    norm = decorrelator_normalizer(gram, hty, batch_x)
    qs, zs, ss, xs, _ = kernels.detnet_forward(
        params.w1, params.b1, params.w2, params.b2, params.w3, params.b3,
        params.t, arch.residual_alpha, hty, gram,
    )
    out = kernels.detnet_backward(
        params.w1, params.w2, params.w3, params.t, arch.residual_alpha,
        gram, qs, zs, ss, xs, batch_x, norm, layer_weights(arch.num_layers),
    )
    loss_value = out[0]
    grads = dict(zip(PARAM_NAMES, out[1:]))
    return loss_value, grads, xs[:, -1, :]


def backward(
    params: DetNetParams, h: Array, y: Array, x_true: Array
) -> tuple[float, dict[str, Array]]:
    """Loss and exact reverse-mode gradients for one sample.

    Kink conventions: relu'(0) = 0; the soft-sign derivative uses 1/|t| on
    the closed linear region and 0 outside; the threshold t receives the
    matching region-split gradient.
    """
    dims = params.arch.dims
    if h.shape != (dims.n_rx, dims.k_tx) or y.shape != (dims.n_rx,):
        raise ShapeError(f"sample shapes {h.shape}/{y.shape} do not match {dims}")
    if x_true.shape != (dims.k_tx,):
        raise ShapeError(f"x_true has shape {x_true.shape}, expected {(dims.k_tx,)}")
    loss_value, grads, _ = _batch_forward_backward(
        params, np.ascontiguousarray(h[None]), np.ascontiguousarray(y[None]),
        np.ascontiguousarray(x_true[None]),
    )
    for name, g in grads.items():
        if not np.isfinite(g).all():
            bad = np.argwhere(~np.isfinite(g.reshape(g.shape[0], -1)).all(axis=1))
            layer = int(bad[0, 0]) if bad.size else -1
            raise TrainingError(
                f"non-finite gradient in {name} at layer {layer + 1}", layer=layer + 1
            )
    return loss_value, grads


@dataclass
class AdamState:
    """First/second moment buffers, one pair per parameter array."""

    m: dict[str, Array]
    v: dict[str, Array]

    @classmethod
    def zeros_like(cls, params: DetNetParams) -> "AdamState":
        return cls(
            m={n: np.zeros_like(a) for n, a in params.as_dict().items()},
            v={n: np.zeros_like(a) for n, a in params.as_dict().items()},
        )


def adam_step(
    params: DetNetParams,
    grads: dict[str, Array],
    state: AdamState,
    cfg: TrainConfig,
    step: int,
) -> tuple[DetNetParams, AdamState]:
    """Standard bias-corrected Adam update (in place); clamps |t| afterwards."""
    if step < 1:
        raise ShapeError(f"step must be >= 1, got {step}")
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    for name, p in params.as_dict().items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + eps)
    t = params.t
    below = np.abs(t) < T_FLOOR
    if np.any(below):
        t[below] = np.where(t[below] < 0.0, -T_FLOOR, T_FLOOR)
    return params, state


def _batch_ber(soft_final: Array, x_true: Array) -> float:
    decisions = np.where(soft_final >= 0.0, 1.0, -1.0)
    return float(np.mean(decisions != x_true))


def train(cfg: TrainConfig, arch: ArchConfig) -> tuple[DetNetParams, TrainReport]:
    """Batched Adam training; deterministic given ``cfg.seed``.

    Streams: child(0) initializes weights, child(1) drives data sampling.
    Per iteration a fresh batch is drawn (fixed channel: shared H, fresh
    x/noise/SNR; varying channel: fresh H per sample), the mean-batch
    gradient is applied, and every ``log_every`` iterations a report row
    (iteration, mean loss, final-layer batch BER, elapsed ms) is appended.
    """
    root = Rng(cfg.seed)
    params = initial_params(arch, root.child(0))
    data_rng = root.child(1)
    state = AdamState.zeros_like(params)
    report = TrainReport()

    fixed_h = None
    if cfg.fixed_channel is not None:
        if cfg.fixed_channel.dims != arch.dims:
            raise ShapeError(
                f"fixed channel dims {cfg.fixed_channel.dims} != arch dims {arch.dims}"
            )
        fixed_h = build_fixed_channel(cfg.fixed_channel)

    start = time.perf_counter()
    for it in range(1, cfg.num_iterations + 1):
        batch = sample_batch(data_rng, arch.dims, cfg.snr, cfg.batch_size, fixed_h)
        loss_value, grads, soft_final = _batch_forward_backward(
            params, batch.h, batch.y, batch.x
        )
        if not np.isfinite(loss_value):
            raise TrainingError(
                f"non-finite loss {loss_value} at iteration {it}", report=report
            )
        params, state = adam_step(params, grads, state, cfg, it)
        if it % cfg.log_every == 0 or it == cfg.num_iterations:
            elapsed_ms = (time.perf_counter() - start) * 1e3
            report.rows.append(
                TrainLogRow(
                    iteration=it,
                    loss=loss_value,
                    ber=_batch_ber(soft_final, batch.x),
                    elapsed_ms=elapsed_ms,
                )
            )
    return params, report


def evaluate_batch_ber(
    params: DetNetParams, batch: SampleBatch, exit_layer: int | None = None
) -> float:
    """Final (or early-exit) hard-decision BER of the network on a batch."""
    arch = params.arch
    gram, hty = kernels.gram_and_hty(batch.h, batch.y)
    soft = kernels.detnet_detect(
        params.w1, params.b1, params.w2, params.b2, params.w3, params.b3,
        params.t, arch.residual_alpha, hty, gram,
        arch.num_layers if exit_layer is None else exit_layer,
    )
    return _batch_ber(soft, batch.x)


# ---------------------------------------------------------------------------
# Finite-difference certification

def _loss_only(params: DetNetParams, hty, gram, x_true, norm) -> float:
    arch = params.arch
    _, _, _, xs, _ = kernels.detnet_forward(
        params.w1, params.b1, params.w2, params.b2, params.w3, params.b3,
        params.t, arch.residual_alpha, hty, gram,
    )
    err = xs - x_true[:, None, :]
    w = layer_weights(arch.num_layers)
    return float(np.mean((err**2).sum(axis=2) @ w / norm))


def _kink_margin(params: DetNetParams, qs, ss) -> float:
    """Distance of the nearest pre-activation to a relu/soft-sign kink."""
    margin = np.inf
    for j in range(params.arch.num_layers):
        a = qs[:, j] @ params.w1[j].T + params.b1[j]
        margin = min(margin, float(np.abs(a).min()))
        margin = min(margin, float(np.abs(np.abs(ss[:, j]) - abs(params.t[j])).min()))
    return margin


def _draw_checkable_instance(arch: ArchConfig, root: Rng, kink_margin: float,
                             snr_db: float):
    """Random network + sample suitable for derivative checks.

    Redraws until (a) every pre-activation clears the kink margin and
    (b) both non-linearities show a mix of regimes per layer, so the check
    exercises live and dead branches with a non-degenerate gradient.
    """
    for attempt in range(64):
        rng = root.child(attempt)
        params = _generic_params(arch, rng)
        batch = sample_batch(rng, arch.dims, SnrSpec(snr_db, snr_db), 1)
        gram, hty = kernels.gram_and_hty(batch.h, batch.y)
        norm = decorrelator_normalizer(gram, hty, batch.x)
        qs, zs, ss, xs, _ = kernels.detnet_forward(
            params.w1, params.b1, params.w2, params.b2, params.w3, params.b3,
            params.t, arch.residual_alpha, hty, gram,
        )
        frac_linear = float(np.mean(np.abs(ss) <= np.abs(params.t)[None, :, None]))
        frac_active = float(np.mean(zs > 0.0))
        if (
            _kink_margin(params, qs, ss) > kink_margin
            and 0.2 <= frac_linear <= 0.95
            and 0.2 <= frac_active <= 0.95
        ):
            return params, batch, gram, hty, norm, (qs, zs, ss, xs)
    raise TrainingError("could not find a kink-free evaluation point")


def _generic_params(arch: ArchConfig, rng: Rng) -> DetNetParams:
    """Weights in generic position for derivative checks (larger than the
    training init so pre-activations stay away from kinks)."""
    k, z, v, big_l = arch.dims.k_tx, arch.z_size, arch.v_size, arch.num_layers
    return DetNetParams(
        arch=arch,
        w1=0.15 * rng.normal((big_l, z, arch.input_dim)),
        b1=0.05 * rng.normal((big_l, z)),
        w2=0.15 * rng.normal((big_l, k, z)),
        b2=0.05 * rng.normal((big_l, k)),
        w3=0.15 * rng.normal((big_l, v, z)),
        b3=0.05 * rng.normal((big_l, v)),
        t=rng.uniform(0.3, 0.9, (big_l,)),
    )


def gradient_check(
    dims: SystemDims,
    num_layers: int,
    seed: int,
    step: float = 1e-5,
    kink_margin: float = 1e-4,
    snr_db: float = 10.0,
) -> dict[str, float]:
    """Compare reverse-mode gradients against central finite differences.

    Draws a random generic-position network and one sample, redrawing until
    every pre-activation is at least ``kink_margin`` away from a relu or
    soft-sign kink (the loss is non-differentiable there).  Returns the
    relative error ||g_analytic - g_fd|| / ||g_fd|| per parameter block.
    """
    arch = ArchConfig(
        dims=dims,
        num_layers=num_layers,
        z_size=8 * dims.k_tx,
        v_size=2 * dims.k_tx,
        residual_alpha=0.9,
    )
    root = Rng(seed)
    params, batch, gram, hty, norm, (qs, zs, ss, xs) = _draw_checkable_instance(
        arch, root, kink_margin, snr_db
    )

    out = kernels.detnet_backward(
        params.w1, params.w2, params.w3, params.t, arch.residual_alpha,
        gram, qs, zs, ss, xs, batch.x, norm, layer_weights(arch.num_layers),
    )
    analytic = dict(zip(PARAM_NAMES, out[1:]))

    errors = {}
    for name in PARAM_NAMES:
        arr = getattr(params, name)
        fd = np.zeros_like(arr)
        flat = arr.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = _loss_only(params, hty, gram, batch.x, norm)
            flat[i] = orig - step
            lo = _loss_only(params, hty, gram, batch.x, norm)
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * step)
        denom = max(float(np.linalg.norm(fd)), 1e-12)
        errors[name] = float(np.linalg.norm(analytic[name] - fd)) / denom
    return errors


def directional_derivative_check(
    dims: SystemDims, num_layers: int, seed: int, step: float = 1e-6
) -> tuple[float, float]:
    """(analytic, finite-difference) directional derivative along a random
    direction; used as an independent whole-gradient probe."""
    arch = ArchConfig(
        dims=dims,
        num_layers=num_layers,
        z_size=8 * dims.k_tx,
        v_size=2 * dims.k_tx,
        residual_alpha=0.9,
    )
    root = Rng(seed)
    params, batch, gram, hty, norm, _caches = _draw_checkable_instance(
        arch, root, 1e-4, 10.0
    )

    _, grads, _ = _batch_forward_backward(params, batch.h, batch.y, batch.x)
    direction = {
        name: root.child(1000, i).normal(getattr(params, name).shape)
        for i, name in enumerate(PARAM_NAMES)
    }
    analytic = sum(float(np.sum(grads[n] * direction[n])) for n in PARAM_NAMES)

    def shifted(eps):
        p = params.copy()
        for n in PARAM_NAMES:
            getattr(p, n)[...] += eps * direction[n]
        return _loss_only(p, hty, gram, batch.x, norm)

    fd = (shifted(step) - shifted(-step)) / (2.0 * step)
    return analytic, fd
