"""Reparameterized heterogeneous depthwise convolution (RepHDWConv).

Training runs one large depthwise kernel in parallel with a set of smaller
ones, each followed by its own batch norm, and sums the results. For
inference every branch is folded into its batch norm, zero-padded to the
large kernel size and summed, leaving a single depthwise convolution with a
bias that is numerically equivalent to the training-time branch sum.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .modules import BatchNorm2d, BatchNormParams, Conv2d, Module
from .tensor import Tensor

# When true, fused units still evaluate the parallel-branch path; used to
# compare both paths on one model without unfusing it.
_FORCE_BRANCH_PATH = False


@contextmanager
def branch_path():
    """Force the training-time branch forward on fused units inside the block."""
    global _FORCE_BRANCH_PATH
    prev = _FORCE_BRANCH_PATH
    _FORCE_BRANCH_PATH = True
    try:
        yield
    finally:
        _FORCE_BRANCH_PATH = prev


def default_small_kernels(large: int) -> list[int]:
    """All admissible parallel kernel sizes below `large`: odd, >= 3, descending.

    A 3x3 unit has no admissible smaller branch and yields [].
    """
    if large < 3 or large % 2 == 0:
        raise ConfigError(f"large kernel must be odd and >= 3, got {large}")
    return list(range(large - 2, 2, -2))


def fold_bn(weight: np.ndarray, bn: BatchNormParams) -> tuple[np.ndarray, np.ndarray]:
    """Fold inference-mode batch norm into the preceding convolution.

    Returns (weight', bias') with weight'[c] = weight[c] * gamma[c]/sqrt(var[c]+eps)
    and bias'[c] = beta[c] - gamma[c]*mean[c]/sqrt(var[c]+eps), so that
    conv(x, weight') + bias' == bn(conv(x, weight)) in exact arithmetic.
    """
    if weight.ndim != 4:
        raise ShapeError(f"fold_bn: weight must be 4-D, got {weight.shape}")
    if weight.shape[0] != bn.channels:
        raise ShapeError(
            f"fold_bn: weight has {weight.shape[0]} output channels, bn has {bn.channels}"
        )
    istd = 1.0 / np.sqrt(bn.running_var.astype(weight.dtype) + weight.dtype.type(bn.eps))
    scale = bn.gamma.astype(weight.dtype) * istd
    w = weight * scale[:, None, None, None]
    b = bn.beta.astype(weight.dtype) - bn.gamma.astype(weight.dtype) * bn.running_mean.astype(
        weight.dtype
    ) * istd
    return w, b


def pad_kernel_to(weight: np.ndarray, target: int) -> np.ndarray:
    """Zero-pad a (C,1,k,k) kernel symmetrically to (C,1,target,target)."""
    k = weight.shape[-1]
    if (target - k) % 2:
        raise ConfigError(f"cannot center a {k} kernel inside {target}")
    p = (target - k) // 2
    if p == 0:
        return weight
    return np.pad(weight, ((0, 0), (0, 0), (p, p), (p, p)))


def hetero_branch_sum(x: Tensor, branches: list[tuple[Conv2d, BatchNorm2d]]) -> Tensor:
    """Sum of depthwise conv + BN over parallel branches, all 'same'-padded."""
    out = None
    for conv, bn in branches:
        y = bn(conv(x))
        out = y if out is None else out + y
    return out


class RepHDWConv(Module):
    """Parallel heterogeneous depthwise branches, mergeable into one kernel.

    kernel is the large branch size; small_kernels defaults to every
    admissible odd size below it. Passing small_kernels=[] degrades the unit
    to a single depthwise conv + BN (the reparameterization toggle off).
    """

    def __init__(
        self,
        channels: int,
        kernel: int,
        small_kernels: list[int] | None = None,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        super().__init__()
        if kernel < 3 or kernel % 2 == 0:
            raise ConfigError(f"RepHDWConv: kernel must be odd and >= 3, got {kernel}")
        if small_kernels is None:
            small_kernels = default_small_kernels(kernel)
        seen = set()
        for k in small_kernels:
            if k % 2 == 0 or k < 3 or k >= kernel:
                raise ConfigError(
                    f"RepHDWConv: small kernel {k} must be odd, >= 3 and < {kernel}"
                )
            if k in seen:
                raise ConfigError(f"RepHDWConv: duplicate small kernel {k}")
            seen.add(k)
        if sorted(small_kernels, reverse=True) != list(small_kernels):
            raise ConfigError(f"RepHDWConv: small kernels must be strictly decreasing, got {small_kernels}")

        rng = rng or np.random.default_rng(0)
        self.channels = channels
        self.kernel = kernel
        self.small_kernels = list(small_kernels)
        self.branch_kernels = [kernel] + self.small_kernels
        for k in self.branch_kernels:
            conv = Conv2d(channels, channels, k, groups=channels, rng=rng, dtype=dtype)
            bn = BatchNorm2d(channels, dtype=dtype)
            setattr(self, f"conv{k}", conv)
            setattr(self, f"bn{k}", bn)
        self._fused = False

    # -- forwards ------------------------------------------------------------
    def _branches(self) -> list[tuple[Conv2d, BatchNorm2d]]:
        return [
            (getattr(self, f"conv{k}"), getattr(self, f"bn{k}"))
            for k in self.branch_kernels
        ]

    def forward_train(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ShapeError(
                f"RepHDWConv: input has {x.shape[1]} channels, unit has {self.channels}"
            )
        return hetero_branch_sum(x, self._branches())

    def forward_fused(self, x: Tensor) -> Tensor:
        if not self._fused:
            raise ConfigError("RepHDWConv: fuse() has not been called")
        w = Tensor(self.fused_weight)
        b = Tensor(self.fused_bias)
        return ops.conv2d(x, w, b, stride=1, padding=self.kernel // 2, groups=self.channels)

    def forward(self, x: Tensor) -> Tensor:
        if self._fused and not self.training and not _FORCE_BRANCH_PATH:
            return self.forward_fused(x)
        return self.forward_train(x)

    # -- reparameterization ----------------------------------------------------
    @property
    def fused(self) -> bool:
        return self._fused

    def fuse(self) -> tuple[np.ndarray, np.ndarray]:
        """Merge all branches into a single (C,1,K,K) kernel and bias vector.

        Requires eval mode so the folded statistics are the running ones, not
        the last batch's. The folding arithmetic runs in float64 and is cast
        back to the branch dtype, so the merge itself adds no rounding beyond
        the final cast. Idempotent: recomputes the same arrays each call.
        """
        if self.training:
            raise ConfigError(
                "RepHDWConv: fuse() requires eval mode; running statistics "
                "must be finalized before merging"
            )
        dtype = getattr(self, f"conv{self.kernel}").weight.dtype
        merged_w = None
        merged_b = None
        for k in self.branch_kernels:
            conv = getattr(self, f"conv{k}")
            bn = getattr(self, f"bn{k}")
            w, b = fold_bn(conv.weight.data.astype(np.float64), bn.bn_params())
            w = pad_kernel_to(w, self.kernel)
            merged_w = w if merged_w is None else merged_w + w
            merged_b = b if merged_b is None else merged_b + b
        self._set_fused(merged_w.astype(dtype), merged_b.astype(dtype))
        return self.fused_weight, self.fused_bias

    def _set_fused(self, w: np.ndarray, b: np.ndarray) -> None:
        if self._fused:
            self.set_buffer("fused_weight", w)
            self.set_buffer("fused_bias", b)
        else:
            self.register_buffer("fused_weight", w)
            self.register_buffer("fused_bias", b)
            self._fused = True


def randomize_bn_stats(module: Module, rng: np.random.Generator) -> None:
    """Draw non-trivial affine parameters and running statistics for every BN.

    Freshly built models carry identity-like statistics, under which BN
    folding is numerically almost a no-op; equivalence checks randomize them
    so the merge arithmetic is actually exercised.
    """
    for m in module.modules():
        if isinstance(m, BatchNorm2d):
            c = m.channels
            dt = m.gamma.dtype
            m.gamma.data = rng.uniform(0.5, 1.5, c).astype(dt)
            m.beta.data = rng.normal(0.0, 0.2, c).astype(dt)
            m.set_buffer("running_mean", rng.normal(0.0, 0.3, c).astype(m.running_mean.dtype))
            m.set_buffer("running_var", rng.uniform(0.5, 2.0, c).astype(m.running_var.dtype))


def randomize_weights(module: Module, rng: np.random.Generator, scale: float = 0.5) -> None:
    """Redraw every conv weight (and bias) from a normal distribution."""
    for name, p in module.named_parameters():
        if name.endswith("weight") or name.endswith("bias"):
            p.data = (rng.standard_normal(p.shape) * scale).astype(p.dtype)


def fuse_equivalence_deviation(
    unit: RepHDWConv, x: Tensor
) -> float:
    """Max |train-path forward - fused forward| on one input (eval mode)."""
    was_training = unit.training
    unit.eval()
    try:
        unit.fuse()
        from .tensor import no_grad

        with no_grad():
            y_train = unit.forward_train(x)
            y_fused = unit.forward_fused(x)
    finally:
        if was_training:
            unit.train()
    return float(np.abs(y_train.data - y_fused.data).max())
