"""Command-line entry point.

Subcommands:
    train         train a network from an experiment config
    eval          run the configured detector comparison, write results CSV
    gradcheck     finite-difference certification of the gradient engine
    make-channel  build and persist the fixed channel of a config

Exit codes: 0 success, 1 usage/config error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import sys

import numpy as np

from . import detnet, evaluation, training
from .channel import SystemDims, build_fixed_channel, sample_batch
from .config import ExperimentConfig, load_config
from .detectors import AmpConfig
from .errors import CheckpointError, ConfigError, DetnetMimoError
from .evaluation import (
    AmpDetector,
    Detector,
    DetNetDetector,
    MatchedFilterDetector,
    MlDetector,
    MmseDetector,
    ZeroForcingDetector,
)
from .numerics import Rng

GRADCHECK_MAX_K = 4
GRADCHECK_TOLERANCE = 1e-5


def _thread_limit(n):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _replace_train_seed(config: ExperimentConfig, seed):
    if seed is None:
        return config
    import dataclasses

    return dataclasses.replace(
        config, train=dataclasses.replace(config.train, seed=seed)
    )


def _replace_sweep_seed(config: ExperimentConfig, seed):
    if seed is None:
        return config
    import dataclasses

    return dataclasses.replace(
        config, sweep=dataclasses.replace(config.sweep, seed=seed)
    )


def _ensure_compatible(params: detnet.DetNetParams, config: ExperimentConfig):
    """Checkpoint vs config shape check with an explicit diff."""
    if params.arch == config.arch:
        return
    want, got = config.arch, params.arch
    lines = ["checkpoint incompatible with configured layout:"]
    for field in ("dims", "num_layers", "z_size", "v_size", "residual_alpha"):
        w, g = getattr(want, field), getattr(got, field)
        if w != g:
            lines.append(f"  {field}: expected {w}, found {g}")
    k, z, v = want.dims.k_tx, want.z_size, want.v_size
    lines.append(
        f"  expected per-layer shapes: w1 ({z},{want.input_dim}) w2 ({k},{z}) w3 ({v},{z})"
    )
    gk, gz, gv = got.dims.k_tx, got.z_size, got.v_size
    lines.append(
        f"  found per-layer shapes:    w1 ({gz},{got.input_dim}) w2 ({gk},{gz}) w3 ({gv},{gz})"
    )
    raise CheckpointError("\n".join(lines))


def _build_detectors(
    config: ExperimentConfig, checkpoint_path: str | None, extra_exit_layer: int | None
) -> list[Detector]:
    k = config.dims.k_tx
    needs_net = any(d.type == "detnet" for d in config.detectors)
    params = None
    if needs_net:
        path = checkpoint_path or config.outputs.checkpoint
        if path is None:
            raise ConfigError("a detnet detector is configured but no checkpoint given")
        params = detnet.load_params(path)
        _ensure_compatible(params, config)

    detectors: list[Detector] = []
    for spec in config.detectors:
        if spec.type == "mf":
            detectors.append(MatchedFilterDetector(name=spec.name))
        elif spec.type == "zf":
            detectors.append(ZeroForcingDetector(name=spec.name))
        elif spec.type == "mmse":
            detectors.append(MmseDetector(name=spec.name))
        elif spec.type == "ml":
            detectors.append(MlDetector(name=spec.name))
        elif spec.type == "amp":
            iters = spec.num_iterations if spec.num_iterations is not None else 3 * k
            cfg = AmpConfig(num_iterations=iters, snr_bias_db_std=spec.snr_bias_db_std)
            detectors.append(AmpDetector(cfg, name=spec.name))
        elif spec.type == "detnet":
            detectors.append(
                DetNetDetector(params, exit_layer=spec.exit_layer, name=spec.name)
            )
        else:  # pragma: no cover - config parser already rejects
            raise ConfigError(f"unknown detector type {spec.type!r}")
        if spec.type == "detnet" and extra_exit_layer is not None:
            detectors.append(
                DetNetDetector(
                    params,
                    exit_layer=extra_exit_layer,
                    name=f"{spec.name}@l{extra_exit_layer}",
                )
            )
    return detectors


def cmd_train(args) -> int:
    config = _replace_train_seed(load_config(args.config), args.seed)
    params, report = training.train(config.train, config.arch)

    checkpoint_path = args.checkpoint or config.outputs.checkpoint
    detnet.save_params(params, checkpoint_path)

    log_path = args.out or config.outputs.train_log
    with open(log_path, "w") as f:
        f.write("iteration,loss,ber,elapsed_ms\n")
        for row in report.rows:
            f.write(f"{row.iteration},{row.loss!r},{row.ber!r},{row.elapsed_ms:.3f}\n")

    fixed_h = None
    if config.channel is not None:
        fixed_h = build_fixed_channel(config.channel)
    heldout = sample_batch(
        Rng(config.train.seed).child(2),
        config.dims,
        config.train.snr,
        2000,
        fixed_h,
    )
    net_ber = training.evaluate_batch_ber(params, heldout)
    zf_hat = ZeroForcingDetector().detect_batch(heldout, Rng(0))
    zf_ber = float(np.mean(zf_hat != heldout.x))
    print(f"checkpoint written to {checkpoint_path}")
    print(f"training log written to {log_path}")
    print(f"held-out BER (2000 samples, training SNR range): "
          f"network {net_ber:.6f}, zero-forcing {zf_ber:.6f}")
    return 0


def cmd_eval(args) -> int:
    config = _replace_sweep_seed(load_config(args.config), args.seed)
    detectors = _build_detectors(config, args.checkpoint, args.exit_layer)
    fixed_h = None
    if config.channel is not None:
        fixed_h = build_fixed_channel(config.channel)
    curves = evaluation.compare(detectors, config.dims, config.sweep, fixed_h)
    out_path = args.out or config.outputs.results
    evaluation.write_csv(curves, out_path, config.sweep.measure_timing)
    print(f"results written to {out_path}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.k > GRADCHECK_MAX_K:
        raise ConfigError(f"gradcheck is limited to K <= {GRADCHECK_MAX_K}")
    dims = SystemDims(k_tx=args.k, n_rx=args.n)
    errors = training.gradient_check(dims, args.layers, args.seed)
    worst = max(errors.values())
    ok = True
    for name in sorted(errors):
        status = "pass" if errors[name] < GRADCHECK_TOLERANCE else "FAIL"
        ok &= errors[name] < GRADCHECK_TOLERANCE
        print(f"{name:>3}: max relative error {errors[name]:.3e}  [{status}]")
    print(
        f"gradcheck {'PASSED' if ok else 'FAILED'} "
        f"(worst {worst:.3e}, tolerance {GRADCHECK_TOLERANCE:.0e})"
    )
    return 0 if ok else 2


def cmd_make_channel(args) -> int:
    config = load_config(args.config)
    if config.channel is None:
        raise ConfigError("make-channel requires a config with channel.mode = 'fc'")
    h = build_fixed_channel(config.channel)
    doc = {
        "format_version": 1,
        "rho": config.channel.rho,
        "k_tx": config.dims.k_tx,
        "n_rx": config.dims.n_rx,
        "seed": config.channel.seed,
        "h": {"shape": list(h.shape), "data": h.ravel().tolist()},
    }
    with open(args.out, "w") as f:
        json.dump(doc, f)
    print(f"fixed channel ({h.shape[0]}x{h.shape[1]}) written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detnet-mimo",
        description="Deep-unfolded MIMO detection: training, baselines, BER sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a network from a config")
    p_train.add_argument("--config", required=True, help="experiment config JSON")
    p_train.add_argument("--checkpoint", help="override checkpoint output path")
    p_train.add_argument("--out", help="override training-log output path")
    p_train.add_argument("--seed", type=int, help="override the training seed")
    p_train.add_argument("--threads", type=int, help="cap linear-algebra threads")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="run the configured detector comparison")
    p_eval.add_argument("--config", required=True, help="experiment config JSON")
    p_eval.add_argument("--checkpoint", help="checkpoint to load for detnet detectors")
    p_eval.add_argument("--out", help="override results CSV path")
    p_eval.add_argument("--seed", type=int, help="override the sweep seed")
    p_eval.add_argument("--threads", type=int, help="cap linear-algebra threads")
    p_eval.add_argument(
        "--exit-layer",
        type=int,
        help="additionally score every detnet detector at this early exit layer",
    )
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p_grad.add_argument("--k", type=int, default=3, help="transmit dimension (<= 4)")
    p_grad.add_argument("--n", type=int, default=6, help="receive dimension")
    p_grad.add_argument("--layers", type=int, default=3)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--threads", type=int, help="cap linear-algebra threads")
    p_grad.set_defaults(func=cmd_gradcheck)

    p_mk = sub.add_parser("make-channel", help="persist the config's fixed channel")
    p_mk.add_argument("--config", required=True, help="experiment config JSON")
    p_mk.add_argument("--out", required=True, help="output JSON path")
    p_mk.add_argument("--threads", type=int, help="cap linear-algebra threads")
    p_mk.set_defaults(func=cmd_make_channel)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        with _thread_limit(getattr(args, "threads", None)):
            return args.func(args)
    except (ConfigError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DetnetMimoError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
