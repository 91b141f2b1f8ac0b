"""Command-line surface.

Exit codes: 0 = success / check passed, 1 = check failed, 2 = usage or
configuration error, 3 = numerical error (NaN/Inf in checked mode).
Every command is deterministic given --seed. MAF_CHECKED=0|1 toggles
NaN/Inf detection.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import gradcheck as gc
from .analysis import count_costs, erf_map, erf_radius, write_heatmap_csv, write_heatmap_pgm
from .errors import ConfigError, MafError, NumericalError, SerializationError, ShapeError
from .model import (
    ModelConfig,
    build_model,
    calibrate_bn_stats,
    fuse_model,
    ghks_kernels,
    load_config,
    nano_config,
    rep_units,
    toy_config,
)
from .repconv import branch_path, randomize_bn_stats, randomize_weights
from .serialize import load_weights, save_weights
from .tensor import Tensor, no_grad
from .train import ToyClassifier, make_blob_dataset, train_toy, write_curve_csv

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _load_model_config(args) -> ModelConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return nano_config(seed=getattr(args, "seed", 0))


def _emit(args, payload: dict, text: str) -> None:
    if getattr(args, "format", "text") == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_summary(args) -> int:
    cfg = _load_model_config(args)
    model = build_model(cfg)
    if args.fused:
        model.eval()
        fuse_model(model)
    report = count_costs(model, args.input_size)
    schedule = ghks_kernels(model)
    payload = report.to_dict()
    payload["kernel_schedule"] = schedule
    text = report.format_table() + (
        f"\nkernel schedule: backbone {schedule['backbone']}, neck {schedule['neck']}"
    )
    _emit(args, payload, text)
    return EXIT_OK


def cmd_verify_fuse(args) -> int:
    cfg = _load_model_config(args)
    if args.tol is None:
        args.tol = 1e-4 if args.mode == "unit" else 1e-3
    model = build_model(cfg)
    if args.weights:
        load_weights(model, args.weights)
    model.eval()
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    lines = []
    if args.mode == "unit":
        units = rep_units(model)
        for name, unit in units:
            unit_worst = 0.0
            for _ in range(args.trials):
                if not args.weights:
                    randomize_weights(unit, rng)
                    randomize_bn_stats(unit, rng)
                unit.fuse()
                x = Tensor(
                    rng.standard_normal((2, unit.channels, 16, 16)).astype(np.float32)
                )
                with no_grad():
                    dev = float(
                        np.abs(unit.forward_train(x).data - unit.forward_fused(x).data).max()
                    )
                unit_worst = max(unit_worst, dev)
            worst = max(worst, unit_worst)
            lines.append((name, unit_worst))
    else:
        if not args.weights:
            # finalize running statistics at the evaluation resolution so the
            # branch and fused paths are compared on sane activation scales
            calibrate_bn_stats(
                model, rng, input_shape=(1, cfg.in_channels, args.input_size, args.input_size)
            )
        fuse_model(model)
        branch_s = fused_s = 0.0
        for trial in range(args.trials):
            x = Tensor(
                rng.standard_normal((1, cfg.in_channels, args.input_size, args.input_size))
                .astype(np.float32)
            )
            with no_grad():
                t0 = time.time()
                with branch_path():
                    outs_train, _ = model.forward_taps(x)
                t1 = time.time()
                outs_fused, _ = model.forward_taps(x)
                t2 = time.time()
            branch_s += t1 - t0
            fused_s += t2 - t1
            trial_worst = 0.0
            for k in outs_train:
                dev = float(np.abs(outs_train[k].data - outs_fused[k].data).max())
                trial_worst = max(trial_worst, dev)
            worst = max(worst, trial_worst)
            lines.append((f"trial{trial}", trial_worst))
        n = max(args.trials, 1)
        # informal speed note; not part of the stable JSON schema
        lines_footer = (
            f"forward time (informal): branch path {branch_s / n:.2f}s, "
            f"fused path {fused_s / n:.2f}s per pass"
        )
    ok = worst <= args.tol
    payload = {
        "mode": args.mode,
        "trials": args.trials,
        "tol": args.tol,
        "max_deviation": worst,
        "pass": ok,
        "per_item": [{"name": n, "max_deviation": d} for n, d in lines],
    }
    text = "\n".join([f"{n}: max deviation {d:.3e}" for n, d in lines])
    if args.mode == "model":
        text += "\n" + lines_footer
    text += f"\nmax deviation {worst:.3e} vs tol {args.tol:g}: {'PASS' if ok else 'FAIL'}"
    _emit(args, payload, text)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_gradcheck(args) -> int:
    names = [s for s in args.ops.split(",") if s]
    if not names:
        raise ConfigError("gradcheck: empty op list")
    if args.corrupt_op:
        gc.CORRUPT_OP = args.corrupt_op
    try:
        ok, rows = gc.run_gradcheck(names, rtol=args.tol, seed=args.seed)
    finally:
        gc.CORRUPT_OP = None
    payload = {
        "tol": args.tol,
        "pass": ok,
        "checks": [{"op": label, "max_rel_err": err, "pass": o} for label, err, o in rows],
    }
    text = "\n".join(
        f"{label:30s} max rel err {err:.3e}  {'ok' if o else 'FAIL'}" for label, err, o in rows
    )
    text += f"\ngradcheck: {'PASS' if ok else 'FAIL'} (tol {args.tol:g})"
    _emit(args, payload, text)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_erf(args) -> int:
    cfg = _load_model_config(args)
    model = build_model(cfg)
    shape = (1, cfg.in_channels, args.input_size, args.input_size)
    if args.random_inputs:
        rng = np.random.default_rng(args.seed)
        heats = [
            erf_map(model, args.tap, Tensor(rng.standard_normal(shape).astype(np.float32)))
            for _ in range(args.random_inputs)
        ]
        heat = np.mean(heats, axis=0)
        heat /= heat.sum()
    else:
        heat = erf_map(model, args.tap, Tensor(np.ones(shape, dtype=np.float32)))
    radius = erf_radius(heat, args.mass)
    if args.out:
        write_heatmap_csv(heat, args.out)
    if args.pgm:
        write_heatmap_pgm(heat, args.pgm)
    payload = {
        "tap": args.tap,
        "input_size": args.input_size,
        "mass": args.mass,
        "radius": radius,
    }
    _emit(args, payload, f"tap {args.tap}: {int(100 * args.mass)}%-mass radius = {radius}")
    return EXIT_OK


def cmd_toy_train(args) -> int:
    cfg = toy_config(seed=args.seed)
    ds = make_blob_dataset(n=args.samples, size=args.size, seed=args.seed)
    model = ToyClassifier(cfg)
    t0 = time.time()
    result = train_toy(model, ds, steps=args.steps, lr=args.lr, batch_size=args.batch_size)
    dt = time.time() - t0
    if args.out:
        write_curve_csv(result, args.out)
    if args.save_weights:
        save_weights(model, args.save_weights)
    payload = {
        "steps": result.steps,
        "final_loss": result.final_loss,
        "accuracy": result.accuracy,
    }
    _emit(
        args,
        payload,
        f"{result.steps} steps in {dt:.1f}s: final loss {result.final_loss:.4f}, "
        f"train accuracy {result.accuracy:.3f}",
    )
    return EXIT_OK


def _ablate_rows(preset: str, seed: int):
    """(label, ModelConfig) grid for a structure-toggle preset."""
    import dataclasses

    def cfg(saf=True, aaf=True, elan=True, rep=True, large=True):
        c = nano_config(seed=seed)
        c.use_elan = elan
        c.use_rep = rep
        c.use_large = large
        c.neck = dataclasses.replace(
            c.neck,
            enable_saf=saf,
            enable_aaf=aaf,
            use_elan=elan,
            use_rep=rep,
            use_large=large,
        )
        return c

    if preset == "table2":
        return [
            ("plain", cfg(elan=False, large=False, rep=False)),
            ("elan", cfg(elan=True, large=False, rep=False)),
            ("elan+rep", cfg(elan=True, large=False, rep=True)),
            ("elan+lk", cfg(elan=True, large=True, rep=False)),
            ("lk+rep", cfg(elan=False, large=True, rep=True)),
            ("elan+lk+rep", cfg(elan=True, large=True, rep=True)),
        ]
    if preset == "table3":
        return [
            ("none", cfg(saf=False, aaf=False)),
            ("saf", cfg(saf=True, aaf=False)),
            ("aaf", cfg(saf=False, aaf=True)),
            ("saf+aaf", cfg(saf=True, aaf=True)),
        ]
    if preset == "table5":
        return [
            ("baseline", cfg(saf=False, aaf=False, elan=False, rep=False, large=False)),
            ("+neck", cfg(saf=True, aaf=True, elan=False, rep=False, large=False)),
            ("+blocks", cfg(saf=True, aaf=True, elan=True, rep=True, large=False)),
            ("+kernels", cfg(saf=True, aaf=True, elan=True, rep=True, large=True)),
        ]
    raise ConfigError(f"unknown ablation preset {preset!r} (table2|table3|table5)")


def cmd_ablate(args) -> int:
    rows = []
    for label, cfg in _ablate_rows(args.preset, args.seed):
        model = build_model(cfg)
        train_report = count_costs(model, args.input_size)
        model.eval()
        fuse_model(model)
        fused_report = count_costs(model, args.input_size)
        rows.append(
            {
                "variant": label,
                "params": train_report.total_params,
                "flops": train_report.flops,
                "fused_params": fused_report.total_params,
                "fused_flops": fused_report.flops,
            }
        )
    text_lines = [f"preset {args.preset} @ {args.input_size}x{args.input_size}"]
    text_lines.append(f"{'variant':<14} {'params':>10} {'FLOPs':>14} {'fused params':>13} {'fused FLOPs':>14}")
    for r in rows:
        text_lines.append(
            f"{r['variant']:<14} {r['params']:>10} {r['flops']:>14} "
            f"{r['fused_params']:>13} {r['fused_flops']:>14}"
        )
    _emit(args, {"preset": args.preset, "rows": rows}, "\n".join(text_lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="maf",
        description="build, verify and analyze reparameterized multi-branch fusion networks",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--format", choices=["text", "json"], default="text")
        if config:
            sp.add_argument("--config", help="model config JSON path (default: built-in nano)")

    sp = sub.add_parser("summary", help="parameter/MAC table for a model config")
    common(sp)
    sp.add_argument("--input-size", type=int, default=640)
    sp.add_argument("--fused", action="store_true", help="count the fused inference path")
    sp.set_defaults(fn=cmd_summary)

    sp = sub.add_parser("verify-fuse", help="train vs fused forward equivalence")
    common(sp)
    sp.add_argument("--weights", help="weight file (default: randomized statistics)")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument(
        "--tol", type=float, default=None,
        help="max deviation (default: 1e-4 unit mode, 1e-3 model mode)",
    )
    sp.add_argument("--mode", choices=["unit", "model"], default="unit")
    sp.add_argument("--input-size", type=int, default=320, help="model-mode input size")
    sp.set_defaults(fn=cmd_verify_fuse)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    common(sp, config=False)
    sp.add_argument("--ops", default="all", help="comma-separated op list or 'all'")
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--corrupt-op", help=argparse.SUPPRESS)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("erf", help="effective-receptive-field map and radius")
    common(sp)
    sp.add_argument("--tap", default="N3", help="tap name, e.g. P4, P'4, N3, out5")
    sp.add_argument("--input-size", type=int, default=320)
    sp.add_argument("--mass", type=float, default=0.95)
    sp.add_argument(
        "--random-inputs", type=int, default=0,
        help="average over N random inputs instead of the all-ones probe",
    )
    sp.add_argument("--out", help="write the map as CSV")
    sp.add_argument("--pgm", help="write the map as a PGM grayscale image")
    sp.set_defaults(fn=cmd_erf)

    sp = sub.add_parser("toy-train", help="overfit the synthetic two-scale blob set")
    common(sp, config=False)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--batch-size", type=int, default=16)
    sp.add_argument("--samples", type=int, default=64)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--out", help="write the loss curve as CSV")
    sp.add_argument("--save-weights", help="write the trained classifier weights")
    sp.set_defaults(fn=cmd_toy_train)

    sp = sub.add_parser("ablate", help="structure-toggle grids with params/FLOPs per row")
    common(sp, config=False)
    sp.add_argument("--preset", required=True)
    sp.add_argument("--input-size", type=int, default=640)
    sp.set_defaults(fn=cmd_ablate)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, SerializationError, ShapeError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except MafError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
