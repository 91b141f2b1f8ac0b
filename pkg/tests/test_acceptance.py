"""Acceptance suite: one test per gate, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
report. Every tolerance is pinned here; nothing is deferred to runtime
configuration.
"""

import time

import numpy as np
import pytest

from mafnet import (
    RepHDWConv,
    Sequential,
    Tensor,
    build_model,
    calibrate_bn_stats,
    count_costs,
    erf_map,
    erf_radius,
    fold_bn,
    fuse_equivalence_deviation,
    fuse_model,
    ghks_kernels,
    load_weights,
    make_blob_dataset,
    nano_config,
    no_grad,
    randomize_bn_stats,
    randomize_weights,
    save_weights,
    toy_config,
    train_toy,
    ToyClassifier,
)
from mafnet import ops
from mafnet.cli import _ablate_rows
from mafnet.gradcheck import run_gradcheck
from mafnet.modules import BatchNormParams
from mafnet.repconv import branch_path
from mafnet.tensor import Tensor as T


def report(num: int, name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"\n[acceptance] criterion {num:02d} ({name}): {status} {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def test_c01_fusion_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(0)
    worst = {np.float32: 0.0, np.float64: 0.0}
    tols = {np.float32: 1e-4, np.float64: 1e-10}
    for channels in (1, 8, 32):
        for large in (5, 7, 9):
            for dtype in (np.float32, np.float64):
                for _ in range(100):
                    unit = RepHDWConv(channels, large, rng=rng, dtype=dtype)
                    randomize_weights(unit, rng)
                    randomize_bn_stats(unit, rng)
                    x = Tensor(rng.standard_normal((2, channels, 16, 16)).astype(dtype))
                    dev = fuse_equivalence_deviation(unit, x)
                    worst[dtype] = max(worst[dtype], dev)
    ok = worst[np.float32] <= tols[np.float32] and worst[np.float64] <= tols[np.float64]
    report(
        1,
        "fusion equivalence",
        ok,
        f"worst f32 {worst[np.float32]:.2e} (tol 1e-4), "
        f"worst f64 {worst[np.float64]:.2e} (tol 1e-10), {time.time() - t0:.0f}s",
    )


def test_c02_whole_model_fuse_equivalence():
    t0 = time.time()
    model = build_model(nano_config())
    calibrate_bn_stats(model, np.random.default_rng(1), input_shape=(1, 3, 320, 320))
    model.eval()
    fuse_model(model)
    x = Tensor(np.random.default_rng(2).standard_normal((1, 3, 320, 320)).astype(np.float32))
    with no_grad():
        with branch_path():
            outs_train, _ = model.forward_taps(x)
        outs_fused, _ = model.forward_taps(x)
    worst = max(
        float(np.abs(outs_train[k].data - outs_fused[k].data).max()) for k in outs_train
    )
    report(
        2,
        "whole-model fuse equivalence",
        worst <= 1e-3,
        f"max deviation {worst:.2e} (tol 1e-3), {time.time() - t0:.0f}s",
    )


def test_c03_bn_fold_identity():
    t0 = time.time()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        c = int(rng.integers(1, 9))
        k = int(rng.choice([1, 3, 5, 7]))
        # kernels at realistic (fan-in scaled) magnitude; the identity is
        # exact in exact arithmetic, the tolerance measures f32 rounding
        w = (rng.standard_normal((c, 1, k, k)) * np.sqrt(2.0 / k**2)).astype(np.float32)
        bn = BatchNormParams(
            rng.uniform(0.5, 1.5, c).astype(np.float32),
            rng.normal(0, 0.5, c).astype(np.float32),
            rng.normal(0, 0.5, c).astype(np.float32),
            rng.uniform(0.3, 2.0, c).astype(np.float32),
            1e-5,
        )
        x = Tensor(rng.standard_normal((1, c, 5, 5)).astype(np.float32))
        w2, b2 = fold_bn(w, bn)
        with no_grad():
            pre = ops.batchnorm_infer(
                ops.conv2d(x, Tensor(w), groups=c),
                Tensor(bn.gamma),
                Tensor(bn.beta),
                bn.running_mean,
                bn.running_var,
                bn.eps,
            )
            post = ops.conv2d(x, Tensor(w2), Tensor(b2), groups=c)
        worst = max(worst, float(np.abs(pre.data - post.data).max()))
    report(
        3,
        "BN-fold identity",
        worst <= 1e-5,
        f"worst deviation {worst:.2e} over 1000 configs (tol 1e-5), {time.time() - t0:.0f}s",
    )


def test_c04_gradient_fidelity():
    t0 = time.time()
    groups = [
        "conv2d",
        "batchnorm",
        "silu",
        "upsample",
        "concat",
        "split",
        "bottleneck",
        "saf",
    ]
    ok, rows = run_gradcheck(groups, rtol=1e-4)
    worst = max(err for _, err, _ in rows)
    report(
        4,
        "gradient fidelity",
        ok,
        f"{len(rows)} checks, worst rel err {worst:.2e} (tol 1e-4), {time.time() - t0:.0f}s",
    )


def test_c05_counting_oracle():
    from mafnet import Conv2d

    conv = Conv2d(16, 32, 3, bias=True, rng=np.random.default_rng(0))
    r1 = count_costs(conv, 64, in_channels=16)
    exact_conv = r1.total_params == 4640 and r1.total_macs == 18_874_368

    unit = RepHDWConv(32, 7, rng=np.random.default_rng(1))
    unit.eval()
    unit.fuse()
    r2 = count_costs(unit, 16, in_channels=32)
    exact_fused = r2.total_params == 32 * 49 + 32

    model = build_model(toy_config())
    train_params = count_costs(model, 64).total_params
    model.eval()
    fuse_model(model)
    fused_params = count_costs(model, 64).total_params
    expect_delta = 0
    for m in model.modules():
        if isinstance(m, RepHDWConv):
            c = m.channels
            expect_delta += (
                c * sum(k * k for k in m.small_kernels)
                + 2 * c * (1 + len(m.small_kernels))
                - c
            )
    exact_delta = (train_params - fused_params) == expect_delta
    ok = exact_conv and exact_fused and exact_delta
    report(
        5,
        "counting oracle",
        ok,
        f"conv {r1.total_params}/{r1.total_macs}, fused unit {r2.total_params}, "
        f"delta {train_params - fused_params} == {expect_delta}",
    )


def test_c06_calibration_to_reported_scale():
    report_640 = count_costs(build_model(nano_config()), 640)
    params, flops = report_640.total_params, report_640.flops
    ok_p = abs(params - 3.76e6) <= 0.2 * 3.76e6
    ok_f = abs(flops - 10.51e9) <= 0.2 * 10.51e9
    report(
        6,
        "calibration to reported scale",
        ok_p and ok_f,
        f"{params / 1e6:.2f}M params (target 3.76M +-20%), "
        f"{flops / 1e9:.2f}G FLOPs (target 10.51G +-20%)",
    )


def test_c07_kernel_schedule_structure():
    ks = ghks_kernels(build_model(nano_config()))
    ok = ks["backbone"] == [3, 5, 7, 9] and ks["neck"] == [5, 7, 9]
    report(7, "kernel schedule structure", ok, f"backbone {ks['backbone']}, neck {ks['neck']}")


def test_c08_erf_monotonicity():
    t0 = time.time()

    def stack(kernel):
        rng = np.random.default_rng(8)
        units = []
        for _ in range(4):
            u = RepHDWConv(8, kernel, rng=rng)
            randomize_bn_stats(u, rng)
            u.eval()
            u.fuse()
            units.append(u)
        return Sequential(*units)

    x = Tensor(np.ones((1, 8, 64, 64), dtype=np.float32))
    r_big = erf_radius(erf_map(stack(9), "out", x), 0.95)
    r_small = erf_radius(erf_map(stack(3), "out", x), 0.95)
    report(
        8,
        "ERF monotonicity",
        r_big > r_small,
        f"9x9-stack radius {r_big} > 3x3-stack radius {r_small}, {time.time() - t0:.0f}s",
    )


def test_c09_toy_overfit():
    t0 = time.time()
    ds = make_blob_dataset(n=64, size=64, seed=0)
    model = ToyClassifier(toy_config(seed=0))
    result = train_toy(model, ds, steps=400, lr=0.05, batch_size=16)
    elapsed = time.time() - t0
    ma = result.moving_average(20)
    monotone = all(ma[i + 1] <= ma[i] + 1e-6 for i in range(len(ma) - 1))
    ok = result.accuracy >= 0.95 and monotone and result.steps <= 500
    report(
        9,
        "toy overfit",
        ok,
        f"accuracy {result.accuracy:.3f} (>=0.95) in {result.steps} steps, "
        f"MA(20) monotone={monotone}, {elapsed:.0f}s",
    )


def test_c10_determinism_and_serialization(tmp_path):
    a = build_model(toy_config(seed=21))
    b = build_model(toy_config(seed=21))
    bitwise = all(
        ta.tobytes() == tb.tobytes()
        for (_, ta), (_, tb) in zip(a.state_entries(), b.state_entries())
    )
    a.eval()
    b.eval()
    x = Tensor(np.random.default_rng(4).standard_normal((1, 3, 64, 64)).astype(np.float32))
    with no_grad():
        oa, _ = a.forward_taps(x)
        ob, _ = b.forward_taps(x)
    same_out = all(oa[k].data.tobytes() == ob[k].data.tobytes() for k in oa)

    p1, p2 = tmp_path / "w1.mafw", tmp_path / "w2.mafw"
    save_weights(a, str(p1))
    fresh = build_model(toy_config(seed=22))
    load_weights(fresh, str(p1))
    save_weights(fresh, str(p2))
    byte_identical = p1.read_bytes() == p2.read_bytes()
    fresh.eval()
    with no_grad():
        of, _ = fresh.forward_taps(x)
    forward_identical = all(oa[k].data.tobytes() == of[k].data.tobytes() for k in oa)
    ok = bitwise and same_out and byte_identical and forward_identical
    report(
        10,
        "determinism and serialization",
        ok,
        f"seed-bitwise={bitwise} outputs={same_out} resave={byte_identical} "
        f"load-forward={forward_identical}",
    )


def test_c11_ablation_preset_structure():
    rows = []
    for label, cfg in _ablate_rows("table3", seed=0):
        rows.append((label, count_costs(build_model(cfg), 640).total_params))
    order = [label for label, _ in rows]
    params = [p for _, p in rows]
    ok = order == ["none", "saf", "aaf", "saf+aaf"] and params == sorted(params) and len(
        set(params)
    ) == 4
    report(
        11,
        "ablation preset structure",
        ok,
        " < ".join(f"{label}={p / 1e6:.2f}M" for label, p in rows),
    )
