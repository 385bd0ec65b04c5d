"""Command-line interface: simulate | train | sweep | selftest.

Every command is driven by one JSON config file plus flag overrides
(flags win).  Exit codes: 0 success, 1 test failure, 2 usage/IO/config
error.  Long-running commands print progress lines to stdout.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as cfgmod
from .channel import FiberParams, SsfmConfig, amplifier_for_span, propagate_link
from .dataset import Scenario, generate_epoch, save_dataset
from .dsp import CdcConfig, cdc, residual_distortion_metrics
from .errors import ConfigError, MteqError
from .evaluation import METHODS, erfc_inverse, q_factor_from_ber, sweep, write_sweep_csv
from .nn.model import EqualizerModel, ModelConfig
from .nn.serialize import load_model, save_model
from .nn.train import train
from .signal import (
    PulseShapeConfig,
    generate_frame,
    matched_filter_and_downsample,
    set_launch_power,
    shape_pulse,
)


def _set_override(raw: dict, spec: str) -> None:
    """Apply one ``a.b.c=value`` override onto the raw config tree."""
    if "=" not in spec:
        raise ConfigError(f"--set expects key=value, got {spec!r}")
    key, _, value = spec.partition("=")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value  # bare strings stay strings
    node = raw
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {part} is not a section")
    node[parts[-1]] = parsed


def _load_experiment(args) -> cfgmod.ExperimentConfig:
    if args.config:
        with open(args.config) as f:
            raw = json.load(f)
    else:
        raw = {}
    for spec in args.set or []:
        _set_override(raw, spec)
    cfg = cfgmod.from_dict(raw)
    if args.desk_scale:
        cfg = cfgmod.desk_scale(cfg)
        cfg.validate()
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads, training=replace(cfg.training, threads=args.threads))
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load_experiment(args)
    ds = generate_epoch(
        cfg.sampler,
        cfg.training.epoch_size,
        epoch_index=args.epoch_index,
        master_seed=cfg.training.master_seed,
        sim=cfg.sim(),
        window=cfg.model.window,
        subframe_symbols=cfg.training.subframe_symbols,
        threads=cfg.threads,
    )
    ds.config_hash = cfg.digest()
    out = args.out
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    save_dataset(ds, out)
    print(f"wrote {len(ds)} examples to {out}")
    print(f"dataset_digest={ds.digest()}")
    print(f"config_digest={cfg.digest()}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_experiment(args)
    out_dir = args.out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    result = train(
        cfg.model,
        cfg.training,
        cfg.sampler,
        cfg.sim(),
        out_dir=out_dir,
        progress=lambda line: print(line, flush=True),
        provenance={"config_digest": cfg.digest()},
    )
    model_path = os.path.join(out_dir, f"model_{cfg.sampler.mode.value}.mteqm")
    save_model(
        model_path,
        result.model,
        result.adam,
        provenance={
            "mode": cfg.sampler.mode.value,
            "epochs_completed": cfg.training.epochs,
            "master_seed": cfg.training.master_seed,
            "config_digest": cfg.digest(),
        },
    )
    loss_path = os.path.join(out_dir, "loss.csv")
    with open(loss_path, "w") as f:
        f.write(f"# config_digest={cfg.digest()}\n")
        f.write("epoch,loss,wall_time_s,scenario_digest\n")
        for s in result.history:
            f.write(f"{s.epoch},{s.loss:.8e},{s.wall_time_s:.3f},{s.scenario_digest}\n")
    print(f"model written to {model_path}")
    print(f"loss history written to {loss_path}")
    return 0


def _load_method_models(specs: list[str]) -> list[tuple[str, object]]:
    methods: list[tuple[str, object]] = [("cdc", None)]
    for spec in specs or []:
        if "=" not in spec:
            raise ConfigError(f"--model expects label=path, got {spec!r}")
        label, _, path = spec.partition("=")
        if label not in METHODS or label == "cdc":
            raise ConfigError(f"--model label must be one of {[m for m in METHODS if m != 'cdc']}")
        model, _, _, _ = load_model(path)
        want = 5 if label == "mtl_power" else 4
        if model.config.input_features != want:
            raise ConfigError(
                f"--model {label}: model has {model.config.input_features} input features, needs {want}"
            )
        methods.append((label, model))
    return methods


def cmd_sweep(args) -> int:
    cfg = _load_experiment(args)
    methods = _load_method_models(args.model)
    out_dir = args.out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    fixed = Scenario(
        p_dbm=cfg.sampler.fixed_p_dbm,
        rs_gbd=cfg.sampler.fixed_rs_gbd,
        n_spans=cfg.sampler.fixed_n_spans,
        seed=0,
    )
    axes = ("spans", "power", "rate") if args.axis == "all" else (args.axis,)
    grids = {"spans": cfg.sampler.span_grid, "power": cfg.sampler.power_grid, "rate": cfg.sampler.rate_grid}
    for axis in axes:
        results = sweep(
            methods,
            axis,
            grids[axis],
            fixed,
            n_symbols=cfg.eval.n_symbols,
            master_seed=cfg.eval.seed,
            sim=cfg.sim(),
            window=cfg.model.window,
            subframe_symbols=cfg.eval.subframe_symbols,
            floor=cfg.eval.floor,
            progress=lambda line: print(line, flush=True),
        )
        path = os.path.join(out_dir, f"sweep_{axis}.csv")
        write_sweep_csv(results, path, cfg.digest())
        print(f"sweep written to {path}")
    return 0


def _selftest_checks(sabotage: str | None):
    checks = []

    # Energy conservation: lossless nonlinear 2-span link
    fiber = FiberParams(alpha_db_per_km=0.0, span_length_km=25.0)
    pulse = PulseShapeConfig()
    frame = generate_frame(512, seed=11)
    wave = set_launch_power(shape_pulse(frame, pulse, 40e9), 5.0)
    out = propagate_link(wave, 2, fiber, amplifier_for_span(fiber), SsfmConfig(), seed=1, ase=False)
    err = abs(out.energy() / wave.energy() - 1.0)
    checks.append(("energy-conservation", err < 1e-9, f"relative error {err:.3e}"))

    # CDC inversion of a linear-only link
    fiber_lin = FiberParams(gamma_per_w_km=0.0, span_length_km=50.0)
    wave = set_launch_power(shape_pulse(frame, pulse, 40e9), 0.0)
    out = propagate_link(wave, 4, fiber_lin, amplifier_for_span(fiber_lin), SsfmConfig(), seed=1, ase=False)
    beta2 = fiber_lin.beta2() * (-1.0 if sabotage == "cdc_sign" else 1.0)
    out = cdc(out, CdcConfig(total_length_m=fiber_lin.total_length_m(4), beta2=beta2))
    rx_x, _ = matched_filter_and_downsample(out, pulse, 512)
    scale = np.sqrt(np.mean(np.abs(rx_x) ** 2))
    evm, _ = residual_distortion_metrics(rx_x / scale, frame.x_symbols)
    checks.append(("cdc-inversion", evm < -40.0, f"EVM {evm:.1f} dB"))

    # Analytic BPTT vs central finite differences on a tiny model
    model = EqualizerModel.init(ModelConfig(n_layers=2, hidden=4, input_features=4, window=9, dtype="f64"), seed=3)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 9, 4))
    y = rng.normal(size=(3, 2)).astype(np.float64)
    _, grads = model.loss_and_grads(x, y)
    worst = 0.0
    for name, p in model.parameters().items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        idx = rng.choice(flat.size, size=min(10, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + 1e-5
            up, _ = model.loss_and_grads(x, y)
            flat[i] = old - 1e-5
            dn, _ = model.loss_and_grads(x, y)
            flat[i] = old
            fd = (up - dn) / 2e-5
            worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-8))
    checks.append(("gradient-check", worst < 1e-4, f"max relative error {worst:.3e}"))

    # BER -> Q conversion against the forward erfc
    q = q_factor_from_ber(1e-3)
    ok = abs(q - 9.7998) < 0.01
    grid = np.logspace(-6, np.log10(0.49), 100)
    qs = [q_factor_from_ber(b) for b in grid]
    mono = all(qs[i] > qs[i + 1] for i in range(len(qs) - 1))
    x0 = erfc_inverse(2e-3)
    ok = ok and abs(math.erfc(x0) - 2e-3) < 1e-12
    checks.append(("ber-q-oracle", ok and mono, f"Q(1e-3)={q:.4f} dB, monotonic={mono}"))
    return checks


def cmd_selftest(args) -> int:
    checks = _selftest_checks(getattr(args, "sabotage", None))
    width = max(len(name) for name, _, _ in checks)
    failed = 0
    for name, ok, detail in checks:
        status = "PASS" if ok else "FAIL"
        print(f"{name.ljust(width)}  {status}  {detail}")
        failed += 0 if ok else 1
    print(f"{failed} of {len(checks)} checks failed" if failed else "all checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mteq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config (defaults apply if omitted)")
        p.add_argument("--desk-scale", action="store_true", help="shrink to the desk-scale preset")
        p.add_argument("--threads", type=int, default=None, help="worker processes (results identical)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")

    p = sub.add_parser("simulate", help="generate and serialize one epoch dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset path (.mteq)")
    p.add_argument("--epoch-index", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train an equalizer in the configured mode")
    common(p)
    p.add_argument("--out-dir", help="checkpoint/model/loss output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="evaluate CDC and models over a scenario axis")
    common(p)
    p.add_argument("--axis", choices=("spans", "power", "rate", "all"), default="all")
    p.add_argument("--model", action="append", metavar="LABEL=PATH", help="equalizer model file")
    p.add_argument("--out-dir", help="CSV output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("selftest", help="run the fast invariant suite")
    p.add_argument("--sabotage", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MteqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
